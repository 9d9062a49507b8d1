//! Velocity-field estimation for the particle flows.
//!
//! Per step, every projection contributes `-psi'(z_j) / H * theta_x` to each
//! particle's velocity. Projections are processed in fixed-size blocks:
//! block rows are computed in parallel, then folded into per-particle
//! accumulators in projection order, so results are bit-identical at any
//! thread count.
//!
//! When a step's projections are all patches upsampled from one coarse
//! grid, projections and accumulation run in coarse space: images are
//! mapped down once per step through the adjoint of the (translation
//! invariant) upsampling operator, per-projection work then touches only
//! `C*S*S` values, and the accumulated coarse velocity is mapped up once
//! per particle at the end of the step.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mat::Matrix;
use crate::projections::{ImageShape, Projection, Upsampler, Weights};
use crate::sliced_ot::{build_cdf, EmpiricalCdf};

/// Projections are processed in blocks of this many rows to bound the
/// scratch matrices at `BLOCK x (N + M)` doubles.
const BLOCK: usize = 128;

/// Per-particle X-velocities; the Y-component is identically zero and never
/// materialized.
#[derive(Debug, Clone)]
pub struct VelocityField {
    data: Vec<f64>,
    dim: usize,
}

impl VelocityField {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        VelocityField {
            data: vec![0.0; rows * dim],
            dim,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::invalid("ragged velocity rows"));
            }
            data.extend_from_slice(r);
        }
        Ok(VelocityField {
            data,
            dim,
        })
    }

    pub fn rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Sorted projected-value tables for one projection, as recorded into (or
/// replayed from) a flow model.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfPair {
    pub target: Vec<f64>,
    pub particle: Vec<f64>,
}

/// Where the per-projection CDFs come from.
pub(crate) enum CdfSource<'a> {
    /// Estimate both CDFs from the dataset and the particles themselves.
    FromData {
        x: &'a Matrix,
        y: &'a Matrix,
        subset: Option<usize>,
    },
    /// Reuse recorded tables (offline sampling).
    Stored(&'a [CdfPair]),
}

/// A step's projections, compiled for execution.
pub(crate) enum StepProjections {
    List(Vec<Projection>),
    Stage(StageSet),
}

/// All projections share one coarse grid with integer upsampling factors.
pub(crate) struct StageSet {
    shape: ImageShape,
    grid: (usize, usize),
    ups: Upsampler,
    items: Vec<StageItem>,
}

struct StageItem {
    row0: usize,
    col0: usize,
    patch: usize,
    /// Coarse C x S x S weights premultiplied by the patch's gain, so the
    /// coarse dot equals the embedded dense dot.
    w: Vec<f64>,
    y: Weights,
}

impl StepProjections {
    pub fn len(&self) -> usize {
        match self {
            StepProjections::List(p) => p.len(),
            StepProjections::Stage(s) => s.items.len(),
        }
    }
}

/// Chooses the execution form for a step's projections.
pub(crate) fn compile_step(projs: Vec<Projection>) -> StepProjections {
    let stage_of = |p: &Projection| match &p.x {
        Weights::Patch(pw) if (pw.f_h, pw.f_w) != (1, 1) => {
            Some((pw.shape, pw.resolution, pw.f_h, pw.f_w))
        }
        _ => None,
    };
    let Some(first) = projs.first().and_then(stage_of) else {
        return StepProjections::List(projs);
    };
    if !projs.iter().all(|p| stage_of(p) == Some(first)) {
        return StepProjections::List(projs);
    }
    let (shape, grid, f_h, f_w) = first;
    let items = projs
        .into_iter()
        .map(|p| {
            let Weights::Patch(pw) = p.x else { unreachable!() };
            StageItem {
                row0: pw.coarse_row0,
                col0: pw.coarse_col0,
                patch: pw.patch,
                w: pw.coarse.iter().map(|v| v * pw.coarse_gain).collect(),
                y: p.y,
            }
        })
        .collect();
    StepProjections::Stage(StageSet {
        shape,
        grid,
        ups: Upsampler::new(f_h, f_w),
        items,
    })
}

impl StageSet {
    fn coarse_dim(&self) -> usize {
        self.shape.channels * self.grid.0 * self.grid.1
    }

    fn coarse_dot(&self, item: &StageItem, row: &[f64]) -> f64 {
        let (h, w) = self.grid;
        let s = item.patch;
        let mut acc = 0.0;
        for c in 0..self.shape.channels {
            for r in 0..s {
                let base = c * h * w + (item.row0 + r) * w + item.col0;
                let wrow = &item.w[c * s * s + r * s..c * s * s + (r + 1) * s];
                for (k, &wv) in wrow.iter().enumerate() {
                    acc += wv * row[base + k];
                }
            }
        }
        acc
    }

    fn coarse_axpy(&self, item: &StageItem, coef: f64, row: &mut [f64]) {
        let (h, w) = self.grid;
        let s = item.patch;
        for c in 0..self.shape.channels {
            for r in 0..s {
                let base = c * h * w + (item.row0 + r) * w + item.col0;
                let wrow = &item.w[c * s * s + r * s..c * s * s + (r + 1) * s];
                for (k, &wv) in wrow.iter().enumerate() {
                    row[base + k] += coef * wv;
                }
            }
        }
    }

    /// Maps a data matrix down to coarse space, one row per sample.
    fn downsample(&self, data: &Matrix) -> Vec<f64> {
        let cd = self.coarse_dim();
        let mut out = vec![0.0; data.rows() * cd];
        out.par_chunks_mut(cd).enumerate().for_each(|(i, dst)| {
            let down = self.ups.adjoint_block(
                data.row(i),
                self.shape.channels,
                self.shape.height,
                self.shape.width,
            );
            dst.copy_from_slice(&down);
        });
        out
    }
}

pub(crate) struct VelocityArgs {
    pub step: usize,
    pub xi: f64,
    pub record: bool,
}

/// Runs the per-step velocity estimate.
///
/// Returns the velocity field (already carrying the `-1/H` factor) plus the
/// recorded CDF tables when `args.record` is set.
pub(crate) fn velocity_engine(
    args: &VelocityArgs,
    particles_x: &Matrix,
    particles_y: &Matrix,
    source: &CdfSource<'_>,
    compiled: &StepProjections,
) -> Result<(VelocityField, Vec<CdfPair>)> {
    let h_total = compiled.len();
    if h_total == 0 {
        return Err(Error::invalid("no projections for this step"));
    }
    let m = particles_x.rows();
    let d = particles_x.cols();
    let inv_h = 1.0 / h_total as f64;

    // Stage-mode precomputation: coarse images for particles and data.
    let (part_coarse, data_coarse, coarse_dim) = match compiled {
        StepProjections::Stage(st) => {
            let pc = st.downsample(particles_x);
            let dc = match source {
                CdfSource::FromData { x, .. } => Some(st.downsample(x)),
                CdfSource::Stored(_) => None,
            };
            (Some(pc), dc, st.coarse_dim())
        }
        StepProjections::List(_) => (None, None, 0),
    };

    let mut acc = match compiled {
        StepProjections::List(_) => vec![0.0; m * d],
        StepProjections::Stage(_) => vec![0.0; m * coarse_dim],
    };
    let acc_dim = if coarse_dim > 0 { coarse_dim } else { d };
    let mut recorded: Vec<CdfPair> = Vec::new();

    let project_rows = |range: std::ops::Range<usize>,
                        rows_x: &Matrix,
                        rows_y: &Matrix,
                        coarse: Option<&[f64]>|
     -> Vec<f64> {
        let count = rows_x.rows();
        let mut z = vec![0.0; range.len() * count];
        z.par_chunks_mut(count)
            .enumerate()
            .for_each(|(local, zrow)| {
                let h = range.start + local;
                match compiled {
                    StepProjections::List(projs) => {
                        let p = &projs[h];
                        for (i, zv) in zrow.iter_mut().enumerate() {
                            *zv = p.project(rows_x.row(i), rows_y.row(i), args.xi);
                        }
                    }
                    StepProjections::Stage(st) => {
                        let item = &st.items[h];
                        let cd = st.coarse_dim();
                        let coarse = coarse.expect("stage mode requires coarse rows");
                        for (i, zv) in zrow.iter_mut().enumerate() {
                            let mut v = st.coarse_dot(item, &coarse[i * cd..(i + 1) * cd]);
                            if args.xi != 0.0 && item.y.dim() > 0 {
                                v += args.xi * item.y.dot(rows_y.row(i));
                            }
                            *zv = v;
                        }
                    }
                }
            });
        z
    };

    let mut block_start = 0;
    while block_start < h_total {
        let block_end = (block_start + BLOCK).min(h_total);
        let range = block_start..block_end;
        let blen = range.len();

        let part_z = project_rows(range.clone(), particles_x, particles_y, part_coarse.as_deref());
        check_finite(&part_z, m, args.step, block_start)?;

        // Per-projection CDF pairs for this block.
        let cdfs: Vec<(EmpiricalCdf, EmpiricalCdf)> = match source {
            CdfSource::FromData { x, y, subset } => {
                let data_z = project_rows(range.clone(), x, y, data_coarse.as_deref());
                check_finite(&data_z, x.rows(), args.step, block_start)?;
                let n = x.rows();
                let pairs: Result<Vec<_>> = (0..blen)
                    .into_par_iter()
                    .map(|local| {
                        let target = build_cdf(&data_z[local * n..(local + 1) * n])?;
                        let zrow = &part_z[local * m..(local + 1) * m];
                        let particle = match subset_size(*subset, m) {
                            s if s == m => build_cdf(zrow)?,
                            s => {
                                let picked: Vec<f64> =
                                    (0..s).map(|k| zrow[k * m / s]).collect();
                                build_cdf(&picked)?
                            }
                        };
                        Ok((particle, target))
                    })
                    .collect();
                pairs?
            }
            CdfSource::Stored(tables) => {
                let pairs: Result<Vec<_>> = range
                    .clone()
                    .into_iter()
                    .map(|h| {
                        let pair = &tables[h];
                        Ok((
                            EmpiricalCdf::from_sorted(pair.particle.clone())?,
                            EmpiricalCdf::from_sorted(pair.target.clone())?,
                        ))
                    })
                    .collect();
                pairs?
            }
        };

        if args.record {
            for (particle, target) in &cdfs {
                recorded.push(CdfPair {
                    target: target.values().to_vec(),
                    particle: particle.values().to_vec(),
                });
            }
        }

        // coef[h][j] = -psi'_h(z_j) / H
        let mut coefs = vec![0.0; blen * m];
        coefs
            .par_chunks_mut(m)
            .enumerate()
            .for_each(|(local, crow)| {
                let (particle_cdf, target_cdf) = &cdfs[local];
                let zrow = &part_z[local * m..(local + 1) * m];
                for (j, c) in crow.iter_mut().enumerate() {
                    let z = zrow[j];
                    let transported =
                        target_cdf.quantile_unchecked(particle_cdf.eval_unchecked(z));
                    *c = -(z - transported) * inv_h;
                }
            });

        // Fold the block into the accumulator, projection order fixed.
        acc.par_chunks_mut(acc_dim).enumerate().for_each(|(j, row)| {
            for local in 0..blen {
                let coef = coefs[local * m + j];
                match compiled {
                    StepProjections::List(projs) => {
                        projs[range.start + local].x.axpy(coef, row)
                    }
                    StepProjections::Stage(st) => {
                        st.coarse_axpy(&st.items[range.start + local], coef, row)
                    }
                }
            }
        });

        block_start = block_end;
    }

    let v = match compiled {
        StepProjections::List(_) => VelocityField { data: acc, dim: d },
        StepProjections::Stage(st) => {
            let mut fine = vec![0.0; m * d];
            fine.par_chunks_mut(d).enumerate().for_each(|(j, dst)| {
                let up = st.ups.upsample_block(
                    &acc[j * coarse_dim..(j + 1) * coarse_dim],
                    st.shape.channels,
                    st.grid.0,
                    st.grid.1,
                );
                dst.copy_from_slice(&up);
            });
            VelocityField { data: fine, dim: d }
        }
    };
    Ok((v, recorded))
}

fn subset_size(subset: Option<usize>, m: usize) -> usize {
    match subset {
        None | Some(0) => m,
        Some(s) => s.min(m),
    }
}

fn check_finite(z: &[f64], per_row: usize, step: usize, block_start: usize) -> Result<()> {
    for (k, v) in z.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Numeric {
                step,
                projection: block_start + k / per_row,
                message: format!("non-finite projected value {v}"),
            });
        }
    }
    Ok(())
}

/// Monte-Carlo velocity estimate for a particle set against a dataset,
/// using the given projections and amplifier.
///
/// Only the X-part of each projection enters the output (velocity masking);
/// particle CDFs may be built from an index-strided subset of the particles.
pub fn estimate_velocity(
    particles: &crate::flow::ParticleSet,
    dataset: &crate::data_io::DatasetView,
    projections: &[Projection],
    xi: f64,
    particle_cdf_subset: Option<usize>,
) -> Result<VelocityField> {
    if projections.is_empty() {
        return Err(Error::invalid("empty projection list"));
    }
    if particles.x.cols() != dataset.dim() || particles.y.cols() != dataset.label_dim() {
        return Err(Error::invalid(
            "particles and dataset disagree on dimensions",
        ));
    }
    for (h, p) in projections.iter().enumerate() {
        if p.x_dim() != particles.x.cols() || (p.y_dim() != 0 && p.y_dim() != particles.y.cols()) {
            return Err(Error::invalid(format!(
                "projection {h} has mismatched dimensions"
            )));
        }
    }
    let args = VelocityArgs {
        step: particles.step,
        xi,
        record: false,
    };
    let source = CdfSource::FromData {
        x: &dataset.x,
        y: &dataset.y,
        subset: particle_cdf_subset,
    };
    let compiled = compile_step(projections.to_vec());
    let (v, _) = velocity_engine(&args, &particles.x, &particles.y, &source, &compiled)?;
    Ok(v)
}
