//! Projection directions: dense uniform-sphere vectors, locally-connected
//! image patches (optionally upsampled from a coarse resolution), and the
//! joint X/Y directions used for conditional flows.
//!
//! Every emitted [`Projection`] has unit Euclidean norm over its combined
//! X and Y parts.

mod schedule;
mod upsample;

pub use schedule::{schedule_stages, preset_names, preset_text, PyramidSchedule, ScheduleEntry, Stage, StagePlan};
pub use upsample::{upsample_filter, AxisKernel, UpsampleMethod, Upsampler};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mat;

/// Channels-height-width shape of the image domain; `dim = C * H * W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("image shape must have positive extents"));
        }
        Ok(ImageShape {
            channels,
            height,
            width,
        })
    }

    pub fn dim(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Weight vector over one side (X or Y) of a projection.
#[derive(Debug, Clone)]
pub enum Weights {
    /// Dense weights over the full dimension.
    Dense(Vec<f64>),
    /// A patch footprint embedded in an image-shaped zero vector.
    Patch(PatchWeights),
    /// Sparse index/value pairs (occlusion-split projections).
    Indexed {
        dim: usize,
        idx: Vec<u32>,
        w: Vec<f64>,
    },
}

/// Sparse patch weights at image resolution, remembering the coarse-grid
/// representation they were upsampled from so flows can project through the
/// adjoint instead of the embedded dense vector.
#[derive(Debug, Clone)]
pub struct PatchWeights {
    pub shape: ImageShape,
    /// Coarse grid the patch was sampled on.
    pub resolution: (usize, usize),
    /// Patch side length S on the coarse grid.
    pub patch: usize,
    /// Top-left corner on the coarse grid (0-indexed).
    pub coarse_row0: usize,
    pub coarse_col0: usize,
    /// Unit-norm C x S x S weights on the coarse grid.
    pub coarse: Vec<f64>,
    /// Integer upsampling factors (image / resolution).
    pub f_h: usize,
    pub f_w: usize,
    /// Top-left corner of the footprint in image coordinates.
    pub row0: usize,
    pub col0: usize,
    /// Final footprint values: `coarse_gain * upsample(coarse)`, laid out as
    /// C x (S * f_h) x (S * f_w).
    pub upsampled: Vec<f64>,
    /// Scalar such that the embedded dense vector equals
    /// `coarse_gain * U(embed(coarse))`.
    pub coarse_gain: f64,
}

impl PatchWeights {
    pub fn footprint_rows(&self) -> usize {
        self.patch * self.f_h
    }

    pub fn footprint_cols(&self) -> usize {
        self.patch * self.f_w
    }

    /// Iterates (flat image index, weight) over the footprint.
    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (fr, fc) = (self.footprint_rows(), self.footprint_cols());
        let (h, w) = (self.shape.height, self.shape.width);
        (0..self.shape.channels).flat_map(move |c| {
            (0..fr).flat_map(move |r| {
                (0..fc).map(move |x| {
                    let img = c * h * w + (self.row0 + r) * w + (self.col0 + x);
                    (img, self.upsampled[c * fr * fc + r * fc + x])
                })
            })
        })
    }
}

impl Weights {
    pub fn empty() -> Self {
        Weights::Dense(Vec::new())
    }

    pub fn dim(&self) -> usize {
        match self {
            Weights::Dense(v) => v.len(),
            Weights::Patch(p) => p.shape.dim(),
            Weights::Indexed { dim, .. } => *dim,
        }
    }

    pub fn norm_sq(&self) -> f64 {
        match self {
            Weights::Dense(v) => v.iter().map(|x| x * x).sum(),
            Weights::Patch(p) => p.upsampled.iter().map(|x| x * x).sum(),
            Weights::Indexed { w, .. } => w.iter().map(|x| x * x).sum(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        match self {
            Weights::Dense(v) => v.iter_mut().for_each(|x| *x *= s),
            Weights::Patch(p) => {
                p.upsampled.iter_mut().for_each(|x| *x *= s);
                p.coarse_gain *= s;
            }
            Weights::Indexed { w, .. } => w.iter_mut().for_each(|x| *x *= s),
        }
    }

    /// Dot product with an `f32` data row of matching dimension.
    #[inline]
    pub fn dot(&self, row: &[f32]) -> f64 {
        match self {
            Weights::Dense(v) => mat::dot(row, v),
            Weights::Patch(p) => {
                let (fr, fc) = (p.footprint_rows(), p.footprint_cols());
                let (h, w) = (p.shape.height, p.shape.width);
                let mut acc = 0.0;
                for c in 0..p.shape.channels {
                    for r in 0..fr {
                        let img = c * h * w + (p.row0 + r) * w + p.col0;
                        acc += mat::dot(
                            &row[img..img + fc],
                            &p.upsampled[c * fr * fc + r * fc..c * fr * fc + (r + 1) * fc],
                        );
                    }
                }
                acc
            }
            Weights::Indexed { idx, w, .. } => idx
                .iter()
                .zip(w)
                .map(|(&i, &wi)| row[i as usize] as f64 * wi)
                .sum(),
        }
    }

    /// `out += c * weights` into an `f64` accumulator of matching dimension.
    pub fn axpy(&self, cmul: f64, out: &mut [f64]) {
        match self {
            Weights::Dense(v) => mat::axpy(cmul, v, out),
            Weights::Patch(p) => {
                let (fr, fc) = (p.footprint_rows(), p.footprint_cols());
                let (h, w) = (p.shape.height, p.shape.width);
                for c in 0..p.shape.channels {
                    for r in 0..fr {
                        let img = c * h * w + (p.row0 + r) * w + p.col0;
                        mat::axpy(
                            cmul,
                            &p.upsampled[c * fr * fc + r * fc..c * fr * fc + (r + 1) * fc],
                            &mut out[img..img + fc],
                        );
                    }
                }
            }
            Weights::Indexed { idx, w, .. } => {
                for (&i, &wi) in idx.iter().zip(w) {
                    out[i as usize] += cmul * wi;
                }
            }
        }
    }

    /// Materializes the embedded dense vector.
    pub fn to_dense(&self) -> Vec<f64> {
        match self {
            Weights::Dense(v) => v.clone(),
            Weights::Patch(p) => {
                let mut out = vec![0.0; p.shape.dim()];
                for (i, w) in p.entries() {
                    out[i] = w;
                }
                out
            }
            Weights::Indexed { dim, idx, w } => {
                let mut out = vec![0.0; *dim];
                for (&i, &wi) in idx.iter().zip(w) {
                    out[i as usize] = wi;
                }
                out
            }
        }
    }
}

/// A unit-norm direction over the joint X/Y space.
#[derive(Debug, Clone)]
pub struct Projection {
    pub x: Weights,
    pub y: Weights,
}

impl Projection {
    pub fn x_dim(&self) -> usize {
        self.x.dim()
    }

    pub fn y_dim(&self) -> usize {
        self.y.dim()
    }

    pub fn total_norm(&self) -> f64 {
        (self.x.norm_sq() + self.y.norm_sq()).sqrt()
    }

    /// Projected value `theta_x . x + xi * theta_y . y`.
    #[inline]
    pub fn project(&self, x_row: &[f32], y_row: &[f32], xi: f64) -> f64 {
        let mut v = self.x.dot(x_row);
        if xi != 0.0 && self.y.dim() > 0 {
            v += xi * self.y.dot(y_row);
        }
        v
    }
}

/// I.i.d. standard normal vector normalized to unit length.
pub fn unit_normal_vector(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

/// Uniform direction on the unit sphere in `R^dim` (dense, X-only).
pub fn sample_uniform_sphere(dim: usize, rng: &mut impl Rng) -> Result<Projection> {
    if dim == 0 {
        return Err(Error::invalid("sphere dimension must be positive"));
    }
    Ok(Projection {
        x: Weights::Dense(unit_normal_vector(dim, rng)),
        y: Weights::empty(),
    })
}

/// Uniform direction on the joint sphere in `R^{d+l}`, split into its X and
/// Y parts.
pub fn sample_joint_sphere(d: usize, l: usize, rng: &mut impl Rng) -> Result<Projection> {
    if d == 0 {
        return Err(Error::invalid("sphere dimension must be positive"));
    }
    let v = unit_normal_vector(d + l, rng);
    Ok(Projection {
        x: Weights::Dense(v[..d].to_vec()),
        y: if l == 0 {
            Weights::empty()
        } else {
            Weights::Dense(v[d..].to_vec())
        },
    })
}

/// Locally-connected projection: a patch direction drawn uniformly from the
/// `C*S*S`-sphere, placed uniformly over positions where the patch lies
/// fully inside the coarse grid, then upsampled to image resolution.
///
/// Draw order is fixed (patch weights, then row, then column) so streams
/// are reproducible.
pub fn sample_locally_connected(
    shape: ImageShape,
    resolution: (usize, usize),
    patch: usize,
    rng: &mut impl Rng,
) -> Result<Projection> {
    let (h, w) = resolution;
    validate_patch_geometry(shape, resolution, patch)?;
    let coarse = unit_normal_vector(shape.channels * patch * patch, rng);
    let row0 = rng.random_range(0..=h - patch);
    let col0 = rng.random_range(0..=w - patch);
    locally_connected_at(shape, resolution, patch, (row0, col0), coarse)
}

/// Deterministic variant of [`sample_locally_connected`] with an explicit
/// coarse-grid top-left position and patch weights.
pub fn locally_connected_at(
    shape: ImageShape,
    resolution: (usize, usize),
    patch: usize,
    top_left: (usize, usize),
    coarse: Vec<f64>,
) -> Result<Projection> {
    let (h, w) = resolution;
    validate_patch_geometry(shape, resolution, patch)?;
    let (row0, col0) = top_left;
    if row0 + patch > h || col0 + patch > w {
        return Err(Error::invalid("patch does not fit inside the grid"));
    }
    if coarse.len() != shape.channels * patch * patch {
        return Err(Error::invalid("patch weight count does not match C*S*S"));
    }
    let f_h = shape.height / h;
    let f_w = shape.width / w;
    let (upsampled, coarse_gain) = if (f_h, f_w) == (1, 1) {
        (coarse.clone(), 1.0)
    } else {
        let up = Upsampler::new(f_h, f_w).upsample_block(&coarse, shape.channels, patch, patch);
        let norm = up.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::invalid("upsampled patch has zero norm"));
        }
        (up.iter().map(|x| x / norm).collect(), 1.0 / norm)
    };
    Ok(Projection {
        x: Weights::Patch(PatchWeights {
            shape,
            resolution,
            patch,
            coarse_row0: row0,
            coarse_col0: col0,
            coarse,
            f_h,
            f_w,
            row0: row0 * f_h,
            col0: col0 * f_w,
            upsampled,
            coarse_gain,
        }),
        y: Weights::empty(),
    })
}

fn validate_patch_geometry(
    shape: ImageShape,
    resolution: (usize, usize),
    patch: usize,
) -> Result<()> {
    let (h, w) = resolution;
    if patch == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    if patch > h.min(w) {
        return Err(Error::invalid(format!(
            "patch {patch} exceeds resolution {h}x{w}"
        )));
    }
    if h > shape.height || w > shape.width {
        return Err(Error::invalid("resolution exceeds image size"));
    }
    if shape.height % h != 0 || shape.width % w != 0 {
        return Err(Error::invalid(format!(
            "resolution {h}x{w} does not divide image {}x{} (integer upsampling only)",
            shape.height, shape.width
        )));
    }
    Ok(())
}

/// Concatenates an X-only projection with Y weights and rescales the whole
/// direction to unit norm. Relative directions within each part are
/// preserved.
pub fn join_and_normalize(theta_x: Projection, theta_y: &[f64]) -> Result<Projection> {
    if theta_x.y.dim() != 0 {
        return Err(Error::invalid("theta_x already carries a Y part"));
    }
    let total = (theta_x.x.norm_sq() + theta_y.iter().map(|v| v * v).sum::<f64>()).sqrt();
    if total == 0.0 {
        return Err(Error::invalid("cannot normalize an all-zero projection"));
    }
    if theta_y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite Y weights"));
    }
    let mut x = theta_x.x;
    x.scale(1.0 / total);
    let y = if theta_y.is_empty() {
        Weights::empty()
    } else {
        Weights::Dense(theta_y.iter().map(|v| v / total).collect())
    };
    Ok(Projection { x, y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sphere_dim_one_is_sign() {
        let mut rng = crate::rng::chacha(0);
        for _ in 0..16 {
            let p = sample_uniform_sphere(1, &mut rng).unwrap();
            let v = p.x.to_dense();
            assert!((v[0] - 1.0).abs() < 1e-12 || (v[0] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_is_seeded_and_unit() {
        let a = sample_uniform_sphere(3, &mut crate::rng::chacha(7)).unwrap();
        let b = sample_uniform_sphere(3, &mut crate::rng::chacha(7)).unwrap();
        assert_eq!(a.x.to_dense(), b.x.to_dense());
        assert!((a.total_norm() - 1.0).abs() < 1e-9);
        assert!(sample_uniform_sphere(0, &mut crate::rng::chacha(0)).is_err());
    }

    #[test]
    fn sphere_looks_uniform_in_2d() {
        let mut rng = crate::rng::chacha(123);
        let n = 100_000;
        let mut mean = 0.0;
        let mut positive = 0usize;
        for _ in 0..n {
            let p = sample_uniform_sphere(2, &mut rng).unwrap();
            let v = p.x.to_dense();
            mean += v[0];
            if v[0] > 0.0 {
                positive += 1;
            }
        }
        mean /= n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        let frac = positive as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "frac {frac}");
    }

    #[test]
    fn figure2_patch_covers_rows_3_to_5_cols_2_to_4() {
        // 6x6 image, 3x3 patch centered at (r=4, c=3) in 1-indexed pixel
        // units: top-left (2, 1) 0-indexed, support rows 3..5 and cols 2..4
        // in 1-indexed terms.
        let shape = ImageShape::new(1, 6, 6).unwrap();
        let coarse = unit_normal_vector(9, &mut crate::rng::chacha(1));
        let p = locally_connected_at(shape, (6, 6), 3, (2, 1), coarse).unwrap();
        let dense = p.x.to_dense();
        for r in 0..6 {
            for c in 0..6 {
                let inside = (2..5).contains(&r) && (1..4).contains(&c);
                assert_eq!(
                    dense[r * 6 + c] != 0.0,
                    inside,
                    "support mismatch at ({r},{c})"
                );
            }
        }
        assert!((p.total_norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn full_size_patch_covers_everything() {
        let shape = ImageShape::new(1, 4, 4).unwrap();
        let mut rng = crate::rng::chacha(2);
        let p = sample_locally_connected(shape, (4, 4), 4, &mut rng).unwrap();
        let dense = p.x.to_dense();
        assert_eq!(dense.len(), 16);
        assert!(dense.iter().filter(|v| **v != 0.0).count() >= 15);
        assert!((p.total_norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn upsampled_patch_is_unit_norm_with_dilated_footprint() {
        let shape = ImageShape::new(1, 12, 12).unwrap();
        let coarse = unit_normal_vector(9, &mut crate::rng::chacha(3));
        let p = locally_connected_at(shape, (6, 6), 3, (2, 1), coarse).unwrap();
        assert!((p.total_norm() - 1.0).abs() < 1e-9);
        let Weights::Patch(pw) = &p.x else {
            panic!("expected patch weights")
        };
        assert_eq!((pw.row0, pw.col0), (4, 2));
        assert_eq!((pw.footprint_rows(), pw.footprint_cols()), (6, 6));
        let dense = p.x.to_dense();
        for (i, v) in dense.iter().enumerate() {
            let (r, c) = (i / 12, i % 12);
            if *v != 0.0 {
                assert!((4..10).contains(&r) && (2..8).contains(&c));
            }
        }
    }

    #[test]
    fn non_integer_factor_is_rejected() {
        let shape = ImageShape::new(1, 28, 28).unwrap();
        let mut rng = crate::rng::chacha(4);
        assert!(sample_locally_connected(shape, (11, 11), 3, &mut rng).is_err());
        assert!(sample_locally_connected(shape, (7, 7), 9, &mut rng).is_err());
    }

    #[test]
    fn patch_dot_equals_dense_dot() {
        use rand::Rng;
        let shape = ImageShape::new(2, 8, 8).unwrap();
        let mut rng = crate::rng::chacha(5);
        let p = sample_locally_connected(shape, (4, 4), 3, &mut rng).unwrap();
        let dense = p.x.to_dense();
        for _ in 0..50 {
            let row: Vec<f32> = (0..shape.dim()).map(|_| rng.random::<f32>() - 0.5).collect();
            let sparse = p.x.dot(&row);
            let full: f64 = row.iter().zip(&dense).map(|(&a, b)| a as f64 * b).sum();
            assert!((sparse - full).abs() < 1e-9);
        }
    }

    #[test]
    fn join_examples() {
        let tx = Projection {
            x: Weights::Dense(vec![0.6, 0.8]),
            y: Weights::empty(),
        };
        let j = join_and_normalize(tx, &[0.0]).unwrap();
        let x = j.x.to_dense();
        assert!((x[0] - 0.6).abs() < 1e-12 && (x[1] - 0.8).abs() < 1e-12);
        assert!((j.total_norm() - 1.0).abs() < 1e-12);

        let tx = Projection {
            x: Weights::Dense(vec![1.0, 0.0]),
            y: Weights::empty(),
        };
        let j = join_and_normalize(tx, &[1.0]).unwrap();
        let x = j.x.to_dense();
        let y = j.y.to_dense();
        let s = 1.0 / 2f64.sqrt();
        assert!((x[0] - s).abs() < 1e-12 && x[1] == 0.0 && (y[0] - s).abs() < 1e-12);

        let zero = Projection {
            x: Weights::Dense(vec![0.0, 0.0]),
            y: Weights::empty(),
        };
        assert!(join_and_normalize(zero, &[0.0]).is_err());
    }

    #[test]
    fn join_scales_unit_parts_by_inverse_sqrt2() {
        let mut rng = crate::rng::chacha(6);
        let tx = sample_uniform_sphere(784, &mut rng).unwrap();
        let ty = unit_normal_vector(10, &mut rng);
        let j = join_and_normalize(tx, &ty).unwrap();
        assert!((j.total_norm() - 1.0).abs() < 1e-9);
        let xn = j.x.norm_sq().sqrt();
        assert!((xn - 1.0 / 2f64.sqrt()).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn prop_sampled_projections_are_unit(seed in 0u64..500) {
            let mut rng = crate::rng::chacha(seed);
            let shape = ImageShape::new(1, 8, 8).unwrap();
            let p = sample_locally_connected(shape, (4, 4), 2, &mut rng).unwrap();
            prop_assert!((p.total_norm() - 1.0).abs() < 1e-9);
            let q = sample_joint_sphere(5, 3, &mut rng).unwrap();
            prop_assert!((q.total_norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn prop_indexed_matches_dense(seed in 0u64..200) {
            use rand::Rng;
            let mut rng = crate::rng::chacha(seed);
            let dim = 16usize;
            let idx: Vec<u32> = (0..dim as u32).filter(|_| rng.random::<bool>()).collect();
            prop_assume!(!idx.is_empty());
            let w: Vec<f64> = idx.iter().map(|_| rng.random::<f64>() - 0.5).collect();
            let weights = Weights::Indexed { dim, idx, w };
            let row: Vec<f32> = (0..dim).map(|_| rng.random::<f32>()).collect();
            let dense = weights.to_dense();
            let direct: f64 = row.iter().zip(&dense).map(|(&a, b)| a as f64 * b).sum();
            prop_assert!((weights.dot(&row) - direct).abs() < 1e-12);
        }
    }
}
