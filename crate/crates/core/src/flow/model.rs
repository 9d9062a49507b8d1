//! Recorded flow models and offline sampling.
//!
//! A model stores, per step, the projection seed plus the sorted quantile
//! tables of both CDFs for every projection. Replaying regenerates the
//! projections from the seeds and drives fresh particles through the stored
//! tables, skipping all dataset work; with full-resolution tables and the
//! recorded initial particles this reproduces the recorded run bit-exactly.

use crate::error::{Error, Result};
use crate::flow::{
    build_step_projections, step, velocity::velocity_engine, velocity::CdfSource,
    velocity::VelocityArgs, CdfPair, ParticleSet, Quantization, YMode,
};
use crate::projections::{schedule_stages, ImageShape, PyramidSchedule, StagePlan};
use crate::rng::{self, role};

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub seed: u64,
    pub tables: Vec<CdfPair>,
}

/// A persisted-or-persistable record of a simulated flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub x_dim: usize,
    pub y_dim: usize,
    pub steps: usize,
    pub projections_per_step: usize,
    /// Particle count of the recorded run.
    pub particles: usize,
    pub amplifier: f64,
    pub step_size: f64,
    pub noise: f64,
    /// `"uniform"` or the pyramid schedule text.
    pub schedule_text: String,
    pub image_shape: Option<ImageShape>,
    /// Occlusion mask when the run was an inpainting flow.
    pub mask: Option<Vec<bool>>,
    pub dataset_digest: [u8; 32],
    pub quantization: Quantization,
    pub records: Vec<StepRecord>,
}

impl FlowModel {
    pub(crate) fn stage_plan(&self) -> Result<Option<StagePlan>> {
        if self.schedule_text.trim() == "uniform" {
            return Ok(None);
        }
        let shape = self
            .image_shape
            .ok_or_else(|| Error::Corrupt("pyramid model without image shape".into()))?;
        let schedule = PyramidSchedule::parse(&self.schedule_text, shape)?;
        Ok(Some(schedule_stages(&schedule, self.steps)?))
    }

    pub(crate) fn y_mode(&self) -> Result<YMode> {
        match &self.mask {
            None => Ok(YMode::Auto),
            Some(mask) => {
                let shape = self
                    .image_shape
                    .unwrap_or(ImageShape::new(1, 1, mask.len())?);
                let spec = crate::data_io::OcclusionSpec::custom(shape, mask.clone())?;
                Ok(YMode::ImageSplit(crate::data_io::occlusion_split(&spec)?))
            }
        }
    }
}

/// Replays a recorded model on new initial particles.
///
/// The initial Y-components may be any values in the condition space,
/// including ones absent from the recorded batch.
pub fn sample_offline(model: &FlowModel, initial: ParticleSet) -> Result<ParticleSet> {
    if initial.x.cols() != model.x_dim || initial.y.cols() != model.y_dim {
        return Err(Error::invalid(format!(
            "model is {}+{} dimensional, particles are {}+{}",
            model.x_dim,
            model.y_dim,
            initial.x.cols(),
            initial.y.cols()
        )));
    }
    if model.records.len() != model.steps {
        return Err(Error::Corrupt(format!(
            "model has {} step records, header says {}",
            model.records.len(),
            model.steps
        )));
    }
    let plan = model.stage_plan()?;
    let y_mode = model.y_mode()?;
    let shape = model.image_shape;

    let mut particles = initial;
    particles.step = 0;
    for (k, record) in model.records.iter().enumerate() {
        if record.tables.len() != model.projections_per_step {
            return Err(Error::Corrupt(format!(
                "step {k} stores {} projections, header says {}",
                record.tables.len(),
                model.projections_per_step
            )));
        }
        let entry = plan.as_ref().map(|p| p.entry_for_step(k));
        let compiled = build_step_projections(
            record.seed,
            model.projections_per_step,
            model.x_dim,
            model.y_dim,
            entry,
            &y_mode,
            shape,
        )?;
        let args = VelocityArgs {
            step: k,
            xi: model.amplifier,
            record: false,
        };
        let source = CdfSource::Stored(&record.tables);
        let (v, _) = velocity_engine(&args, &particles.x, &particles.y, &source, &compiled)?;
        particles = step(particles, &v, model.step_size)?;
        if model.noise > 0.0 {
            super::add_noise(
                &mut particles,
                model.noise,
                model.step_size,
                rng::derive2(record.seed, role::NOISE, k as u64),
            );
        }
    }
    Ok(particles)
}
