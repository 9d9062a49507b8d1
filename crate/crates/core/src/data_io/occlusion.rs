//! Occlusion masks for inpainting: splitting images into an occluded part
//! (to generate) and an observed part (conditioning values).

use crate::error::{Error, Result};
use crate::projections::{ImageShape, Projection, Weights};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OcclusionKind {
    LeftHalf,
    BottomHalf,
    CenterSquare,
    Custom,
}

/// A C x H x W boolean mask; `true` marks occluded (unknown) pixels.
#[derive(Debug, Clone)]
pub struct OcclusionSpec {
    pub kind: OcclusionKind,
    pub mask: Vec<bool>,
    pub shape: ImageShape,
}

impl OcclusionSpec {
    pub fn left_half(shape: ImageShape) -> Self {
        Self::from_pixel_rule(shape, OcclusionKind::LeftHalf, |_, c| c < shape.width / 2)
    }

    pub fn bottom_half(shape: ImageShape) -> Self {
        Self::from_pixel_rule(shape, OcclusionKind::BottomHalf, |r, _| {
            r >= shape.height / 2
        })
    }

    /// A centered square of the given side length.
    pub fn center_square(shape: ImageShape, side: usize) -> Self {
        let r0 = (shape.height - side.min(shape.height)) / 2;
        let c0 = (shape.width - side.min(shape.width)) / 2;
        Self::from_pixel_rule(shape, OcclusionKind::CenterSquare, |r, c| {
            (r0..r0 + side).contains(&r) && (c0..c0 + side).contains(&c)
        })
    }

    pub fn custom(shape: ImageShape, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != shape.dim() {
            return Err(Error::invalid("mask length does not match C*H*W"));
        }
        Ok(OcclusionSpec {
            kind: OcclusionKind::Custom,
            mask,
            shape,
        })
    }

    fn from_pixel_rule(
        shape: ImageShape,
        kind: OcclusionKind,
        rule: impl Fn(usize, usize) -> bool,
    ) -> Self {
        let mut mask = vec![false; shape.dim()];
        for ch in 0..shape.channels {
            for r in 0..shape.height {
                for c in 0..shape.width {
                    mask[ch * shape.height * shape.width + r * shape.width + c] = rule(r, c);
                }
            }
        }
        OcclusionSpec { kind, mask, shape }
    }
}

/// Deterministic pixel-index split derived from a mask: X = occluded slots,
/// Y = observed slots, both in ascending pixel order.
#[derive(Debug, Clone)]
pub struct OcclusionSplit {
    pub shape: ImageShape,
    pub mask: Vec<bool>,
    /// Flat image index of each X slot.
    pub x_pixels: Vec<u32>,
    /// Flat image index of each Y slot.
    pub y_pixels: Vec<u32>,
    /// Per pixel: slot index within its side.
    slot: Vec<u32>,
}

impl OcclusionSplit {
    pub fn x_dim(&self) -> usize {
        self.x_pixels.len()
    }

    pub fn y_dim(&self) -> usize {
        self.y_pixels.len()
    }

    pub fn is_occluded(&self, pixel: usize) -> bool {
        self.mask[pixel]
    }

    pub fn slot_of(&self, pixel: usize) -> usize {
        self.slot[pixel] as usize
    }

    /// Extracts the observed (Y) values of a full image.
    pub fn observed(&self, image: &[f32]) -> Vec<f32> {
        self.y_pixels.iter().map(|&p| image[p as usize]).collect()
    }

    /// Extracts the occluded (X) values of a full image.
    pub fn occluded(&self, image: &[f32]) -> Vec<f32> {
        self.x_pixels.iter().map(|&p| image[p as usize]).collect()
    }

    /// Recombines generated X values and observed Y values into a full
    /// image; the inverse of the two extractors.
    pub fn recombine(&self, x_part: &[f32], y_part: &[f32]) -> Result<Vec<f32>> {
        if x_part.len() != self.x_dim() || y_part.len() != self.y_dim() {
            return Err(Error::invalid("part lengths do not match the split"));
        }
        let mut image = vec![0f32; self.shape.dim()];
        for (slot, &p) in self.x_pixels.iter().enumerate() {
            image[p as usize] = x_part[slot];
        }
        for (slot, &p) in self.y_pixels.iter().enumerate() {
            image[p as usize] = y_part[slot];
        }
        Ok(image)
    }
}

/// Builds the index split for a mask. Fails when the mask occludes
/// everything or nothing.
pub fn occlusion_split(spec: &OcclusionSpec) -> Result<OcclusionSplit> {
    let mut x_pixels = Vec::new();
    let mut y_pixels = Vec::new();
    let mut slot = vec![0u32; spec.mask.len()];
    for (p, &occ) in spec.mask.iter().enumerate() {
        if occ {
            slot[p] = x_pixels.len() as u32;
            x_pixels.push(p as u32);
        } else {
            slot[p] = y_pixels.len() as u32;
            y_pixels.push(p as u32);
        }
    }
    if x_pixels.is_empty() || y_pixels.is_empty() {
        return Err(Error::invalid(
            "mask must leave at least one occluded and one observed pixel",
        ));
    }
    Ok(OcclusionSplit {
        shape: spec.shape,
        mask: spec.mask.clone(),
        x_pixels,
        y_pixels,
        slot,
    })
}

/// Splits one image into its observed part plus the index map.
pub fn make_occlusion(image: &[f32], spec: &OcclusionSpec) -> Result<(Vec<f32>, OcclusionSplit)> {
    if image.len() != spec.shape.dim() {
        return Err(Error::invalid("image length does not match the mask shape"));
    }
    let split = occlusion_split(spec)?;
    let observed = split.observed(image);
    Ok((observed, split))
}

/// Splits a full-image projection into X weights over occluded slots and Y
/// weights over observed slots. The combined norm is unchanged.
pub fn split_projection(proj: &Projection, split: &OcclusionSplit) -> Result<Projection> {
    if proj.x_dim() != split.shape.dim() || proj.y_dim() != 0 {
        return Err(Error::invalid(
            "expected an X-only projection over the full image",
        ));
    }
    let mut xi = Vec::new();
    let mut xw = Vec::new();
    let mut yi = Vec::new();
    let mut yw = Vec::new();
    let mut push = |pixel: usize, w: f64| {
        if w == 0.0 {
            return;
        }
        if split.is_occluded(pixel) {
            xi.push(split.slot_of(pixel) as u32);
            xw.push(w);
        } else {
            yi.push(split.slot_of(pixel) as u32);
            yw.push(w);
        }
    };
    match &proj.x {
        Weights::Dense(v) => {
            for (pixel, &w) in v.iter().enumerate() {
                push(pixel, w);
            }
        }
        Weights::Patch(p) => {
            for (pixel, w) in p.entries() {
                push(pixel, w);
            }
        }
        Weights::Indexed { idx, w, .. } => {
            for (&pixel, &wi) in idx.iter().zip(w) {
                push(pixel as usize, wi);
            }
        }
    }
    Ok(Projection {
        x: Weights::Indexed {
            dim: split.x_dim(),
            idx: xi,
            w: xw,
        },
        y: Weights::Indexed {
            dim: split.y_dim(),
            idx: yi,
            w: yw,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(c: usize, h: usize, w: usize) -> ImageShape {
        ImageShape::new(c, h, w).unwrap()
    }

    #[test]
    fn left_half_on_28x28_splits_evenly() {
        let spec = OcclusionSpec::left_half(shape(1, 28, 28));
        let split = occlusion_split(&spec).unwrap();
        assert_eq!(split.x_dim(), 392);
        assert_eq!(split.y_dim(), 392);
    }

    #[test]
    fn single_occluded_pixel() {
        let mut mask = vec![false; 9];
        mask[4] = true;
        let spec = OcclusionSpec::custom(shape(1, 3, 3), mask).unwrap();
        let split = occlusion_split(&spec).unwrap();
        assert_eq!(split.x_dim(), 1);
        assert_eq!(split.x_pixels, vec![4]);
    }

    #[test]
    fn degenerate_masks_are_rejected() {
        let all = OcclusionSpec::custom(shape(1, 2, 2), vec![true; 4]).unwrap();
        assert!(occlusion_split(&all).is_err());
        let none = OcclusionSpec::custom(shape(1, 2, 2), vec![false; 4]).unwrap();
        assert!(occlusion_split(&none).is_err());
    }

    #[test]
    fn split_is_a_partition_and_round_trips() {
        let spec = OcclusionSpec::bottom_half(shape(1, 4, 4));
        let image: Vec<f32> = (0..16).map(|i| i as f32 / 16.0).collect();
        let (observed, split) = make_occlusion(&image, &spec).unwrap();
        assert_eq!(split.x_dim() + split.y_dim(), 16);
        let mut all: Vec<u32> = split
            .x_pixels
            .iter()
            .chain(&split.y_pixels)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..16).collect::<Vec<_>>());

        let generated = split.occluded(&image);
        let rebuilt = split.recombine(&generated, &observed).unwrap();
        assert_eq!(rebuilt, image);
    }

    #[test]
    fn projection_split_preserves_values_and_norm() {
        use crate::projections::{sample_locally_connected, ImageShape};
        let s = ImageShape::new(1, 6, 6).unwrap();
        let mut rng = crate::rng::chacha(3);
        let proj = sample_locally_connected(s, (6, 6), 4, &mut rng).unwrap();
        let spec = OcclusionSpec::left_half(s);
        let split = occlusion_split(&spec).unwrap();
        let joint = split_projection(&proj, &split).unwrap();
        assert!((joint.total_norm() - 1.0).abs() < 1e-9);

        // theta_x . x_occ + theta_y . y_obs must equal the full-image dot.
        let image: Vec<f32> = (0..36).map(|i| (i as f32 * 0.37).sin()).collect();
        let full = proj.x.dot(&image);
        let xo = split.occluded(&image);
        let yo = split.observed(&image);
        let split_dot = joint.x.dot(&xo) + joint.y.dot(&yo);
        assert!((full - split_dot).abs() < 1e-12);
    }
}
