//! Particle-system simulation of sliced-Wasserstein flows.
//!
//! `run_swf` simulates the unconditional flow (optionally with entropic
//! noise); `run_cswf` simulates the conditional flow through the joint
//! distribution with the amplifier applied inside projected values and the
//! velocity's Y-component masked to zero, so particle conditions never
//! drift. Both can record a replayable [`FlowModel`].

mod model;
mod velocity;

pub use model::{sample_offline, FlowModel, StepRecord};
pub use velocity::{estimate_velocity, CdfPair, VelocityField};

use rand::Rng;
use rayon::prelude::*;

use crate::data_io::{DatasetView, OcclusionSplit};
use crate::error::{Error, Result};
use crate::mat::Matrix;
use crate::projections::{
    sample_joint_sphere, sample_locally_connected, sample_uniform_sphere, schedule_stages,
    unit_normal_vector, ImageShape, Projection, PyramidSchedule, ScheduleEntry,
};
use crate::rng::{self, role};
use velocity::{compile_step, velocity_engine, CdfSource, StepProjections, VelocityArgs};

/// Projection family used per step.
#[derive(Debug, Clone)]
pub enum Schedule {
    UniformSphere,
    Pyramid(PyramidSchedule),
}

/// When fresh projections are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Cadence {
    /// Per-step for conditional and pyramidal runs; once up front for the
    /// plain unconditional flow.
    #[default]
    Auto,
    PerStep,
    Once,
}

/// How Y-direction weights are produced for conditional runs.
#[derive(Debug, Clone, Default)]
pub enum YMode {
    /// No Y part when l = 0; a joint-sphere draw for dense projections; a
    /// fresh uniform theta_y joined per projection for patch projections.
    #[default]
    Auto,
    /// Inpainting: draw one projection over the full image grid and split
    /// it into X (occluded) and Y (observed) parts by the mask.
    ImageSplit(OcclusionSplit),
}

/// How many knots a recorded model keeps per CDF.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantization {
    /// Keep every sorted value; replay is bit-exact.
    Full,
    Knots(u32),
}

impl Default for Quantization {
    fn default() -> Self {
        Quantization::Knots(1024)
    }
}

/// All simulation hyperparameters.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    /// Amplifier applied to Y inside projected values.
    pub amplifier: f64,
    /// Euler step size; `None` means the X-dimension `d`.
    pub step_size: Option<f64>,
    /// Simulation steps K.
    pub steps: usize,
    /// Projections per step H.
    pub projections_per_step: usize,
    /// Particle count M.
    pub particles: usize,
    /// Entropic noise scale (SWF only).
    pub noise: f64,
    /// Build particle CDFs from an index-strided subset of this size.
    pub particle_cdf_subset: Option<usize>,
    pub seed: u64,
    pub schedule: Schedule,
    pub cadence: Cadence,
    pub y_mode: YMode,
    /// Table resolution when recording a model.
    pub model_quantization: Quantization,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            amplifier: 0.0,
            step_size: None,
            steps: 100,
            projections_per_step: 10_000,
            particles: 1000,
            noise: 0.0,
            particle_cdf_subset: None,
            seed: 0,
            schedule: Schedule::UniformSphere,
            cadence: Cadence::Auto,
            y_mode: YMode::Auto,
            model_quantization: Quantization::default(),
        }
    }
}

/// M particles with data-space X-components and fixed condition
/// Y-components.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub x: Matrix,
    pub y: Matrix,
    pub step: usize,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }
}

/// Source of initial particle Y-components.
pub enum LabelSource<'a> {
    /// Unconditional (l = 0).
    None,
    /// Categorical marginal over one-hot classes.
    Marginal(&'a [f64]),
    /// Draw Y rows from the dataset with replacement.
    FromDataset(&'a DatasetView),
    /// Use the given rows bit-exactly.
    Provided(Matrix),
}

/// Initializes particles: X i.i.d. standard normal, Y per the label source.
pub fn init_particles(cfg: &FlowConfig, x_dim: usize, labels: LabelSource<'_>) -> Result<ParticleSet> {
    let m = cfg.particles;
    if m == 0 {
        return Err(Error::invalid("particle count must be positive"));
    }
    if x_dim == 0 {
        return Err(Error::invalid("x dimension must be positive"));
    }
    let mut rng = rng::chacha(rng::derive(cfg.seed, role::INIT));
    let y = match labels {
        LabelSource::None => Matrix::zeros(m, 0),
        LabelSource::Marginal(probs) => {
            if probs.is_empty() || probs.iter().any(|p| *p < 0.0) {
                return Err(Error::invalid("marginal must be nonnegative and nonempty"));
            }
            let total: f64 = probs.iter().sum();
            if total <= 0.0 {
                return Err(Error::invalid("marginal probabilities sum to zero"));
            }
            let mut y = Matrix::zeros(m, probs.len());
            for j in 0..m {
                let u: f64 = rng.random::<f64>() * total;
                let mut cum = 0.0;
                let mut class = probs.len() - 1;
                for (k, p) in probs.iter().enumerate() {
                    cum += p;
                    if u < cum {
                        class = k;
                        break;
                    }
                }
                y.row_mut(j)[class] = 1.0;
            }
            y
        }
        LabelSource::FromDataset(ds) => {
            if ds.label_dim() == 0 {
                return Err(Error::invalid("dataset has no labels to sample"));
            }
            let mut y = Matrix::zeros(m, ds.label_dim());
            for j in 0..m {
                let i = rng.random_range(0..ds.len());
                y.row_mut(j).copy_from_slice(ds.y.row(i));
            }
            y
        }
        LabelSource::Provided(y) => {
            if y.rows() != m {
                return Err(Error::invalid(format!(
                    "provided labels have {} rows, expected {m}",
                    y.rows()
                )));
            }
            if !y.is_finite() {
                return Err(Error::invalid("provided labels contain non-finite values"));
            }
            y
        }
    };
    let mut x = Matrix::zeros(m, x_dim);
    for v in x.data_mut() {
        let g: f64 = rng.sample(rand_distr::StandardNormal);
        *v = g as f32;
    }
    Ok(ParticleSet { x, y, step: 0 })
}

/// One Euler update: `x += eta * v` (the velocity already carries the
/// estimate's minus sign), Y untouched, step incremented.
pub fn step(mut particles: ParticleSet, v: &VelocityField, eta: f64) -> Result<ParticleSet> {
    if v.rows() != particles.len() || v.dim() != particles.x.cols() {
        return Err(Error::invalid("velocity shape does not match particles"));
    }
    let d = particles.x.cols();
    particles
        .x
        .data_mut()
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(j, row)| {
            let vrow = v.row(j);
            for (xv, &dv) in row.iter_mut().zip(vrow) {
                *xv = (*xv as f64 + eta * dv) as f32;
            }
        });
    if !particles.x.is_finite() {
        return Err(Error::Numeric {
            step: particles.step,
            projection: 0,
            message: "non-finite particle after Euler update".into(),
        });
    }
    particles.step += 1;
    Ok(particles)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Algo {
    Swf,
    Cswf,
}

/// Simulates the conditional flow (Algorithm: per-step projections, both
/// CDFs with the amplifier, masked Euler updates). Returns the final
/// particles and, when `record` is set, a replayable model.
pub fn run_cswf(
    cfg: &FlowConfig,
    dataset: &DatasetView,
    initial: ParticleSet,
    record: bool,
) -> Result<(ParticleSet, Option<FlowModel>)> {
    simulate(cfg, dataset, initial, record, Algo::Cswf, &mut |_, _| {})
}

/// As [`run_cswf`] with a per-step observer (step index, particles after
/// that step's update).
pub fn run_cswf_observed(
    cfg: &FlowConfig,
    dataset: &DatasetView,
    initial: ParticleSet,
    record: bool,
    observer: &mut dyn FnMut(usize, &ParticleSet),
) -> Result<(ParticleSet, Option<FlowModel>)> {
    simulate(cfg, dataset, initial, record, Algo::Cswf, observer)
}

/// Simulates the unconditional flow. With `noise > 0` each update adds
/// `sqrt(2 * lambda * eta)` Gaussian noise; Y-components are ignored.
pub fn run_swf(cfg: &FlowConfig, dataset: &DatasetView, initial: ParticleSet) -> Result<ParticleSet> {
    simulate(cfg, dataset, initial, false, Algo::Swf, &mut |_, _| {}).map(|(p, _)| p)
}

/// As [`run_swf`] with recording and a per-step observer.
pub fn run_swf_observed(
    cfg: &FlowConfig,
    dataset: &DatasetView,
    initial: ParticleSet,
    record: bool,
    observer: &mut dyn FnMut(usize, &ParticleSet),
) -> Result<(ParticleSet, Option<FlowModel>)> {
    simulate(cfg, dataset, initial, record, Algo::Swf, observer)
}

fn simulate(
    cfg: &FlowConfig,
    dataset: &DatasetView,
    initial: ParticleSet,
    record: bool,
    algo: Algo,
    observer: &mut dyn FnMut(usize, &ParticleSet),
) -> Result<(ParticleSet, Option<FlowModel>)> {
    let d = initial.x.cols();
    let l = initial.y.cols();
    if dataset.dim() != d || dataset.label_dim() != l {
        return Err(Error::invalid(format!(
            "dataset is {}+{} dimensional, particles are {d}+{l}",
            dataset.dim(),
            dataset.label_dim()
        )));
    }
    if let YMode::ImageSplit(split) = &cfg.y_mode {
        if split.x_dim() != d || split.y_dim() != l {
            return Err(Error::invalid("occlusion split does not match dimensions"));
        }
    }
    let xi = match algo {
        Algo::Cswf => cfg.amplifier,
        Algo::Swf => 0.0,
    };
    if xi < 0.0 {
        return Err(Error::invalid("amplifier must be nonnegative"));
    }
    let eta = cfg.step_size.unwrap_or(d as f64);
    if eta <= 0.0 {
        return Err(Error::invalid("step size must be positive"));
    }
    let k_total = cfg.steps;
    let mut model = record.then(|| FlowModel {
        x_dim: d,
        y_dim: l,
        steps: k_total,
        projections_per_step: cfg.projections_per_step,
        particles: initial.len(),
        amplifier: xi,
        step_size: eta,
        noise: if algo == Algo::Swf { cfg.noise } else { 0.0 },
        schedule_text: schedule_text(&cfg.schedule),
        image_shape: schedule_shape(&cfg.schedule),
        mask: match &cfg.y_mode {
            YMode::ImageSplit(split) => Some(split.mask.clone()),
            YMode::Auto => None,
        },
        dataset_digest: dataset.digest,
        quantization: cfg.model_quantization,
        records: Vec::with_capacity(k_total),
    });
    if k_total == 0 {
        return Ok((initial, model));
    }

    let plan = match &cfg.schedule {
        Schedule::UniformSphere => None,
        Schedule::Pyramid(s) => Some(schedule_stages(s, k_total)?),
    };
    if cfg.projections_per_step == 0 {
        return Err(Error::invalid("need at least one projection per step"));
    }

    // Per-step dequantization buffer for quantized datasets.
    let mut data_x = dataset.raw_quantized.as_ref().map(|_| dataset.x.clone());
    let mut data_y = dataset.raw_quantized_y.as_ref().map(|_| dataset.y.clone());

    validate_schedule_shapes(cfg, d)?;

    let mut particles = initial;
    particles.step = 0;
    for k in 0..k_total {
        let proj_seed = projection_seed(cfg, algo, k);
        if let Some(raw) = &dataset.raw_quantized {
            let buf = data_x.as_mut().unwrap();
            crate::data_io::dequantize_rows(raw, rng::derive2(cfg.seed, role::DEQUANT, k as u64), buf);
        }
        if let Some(raw_y) = &dataset.raw_quantized_y {
            let buf = data_y.as_mut().unwrap();
            crate::data_io::dequantize_rows(
                raw_y,
                rng::derive2(cfg.seed, role::DEQUANT ^ 0xff, k as u64),
                buf,
            );
        }
        let entry = plan.as_ref().map(|p| p.entry_for_step(k));
        let compiled = build_step_projections(
            proj_seed,
            cfg.projections_per_step,
            d,
            l,
            entry,
            &cfg.y_mode,
            schedule_shape(&cfg.schedule),
        )?;
        let args = VelocityArgs {
            step: k,
            xi,
            record,
        };
        let source = CdfSource::FromData {
            x: data_x.as_ref().unwrap_or(&dataset.x),
            y: data_y.as_ref().unwrap_or(&dataset.y),
            subset: cfg.particle_cdf_subset,
        };
        let (v, tables) = velocity_engine(&args, &particles.x, &particles.y, &source, &compiled)?;
        particles = step(particles, &v, eta)?;
        if algo == Algo::Swf && cfg.noise > 0.0 {
            add_noise(&mut particles, cfg.noise, eta, rng::derive2(proj_seed, role::NOISE, k as u64));
            if !particles.x.is_finite() {
                return Err(Error::Numeric {
                    step: k,
                    projection: 0,
                    message: "non-finite particle after noise".into(),
                });
            }
        }
        if let Some(model) = model.as_mut() {
            model.records.push(StepRecord {
                seed: proj_seed,
                tables: quantize_tables(tables, cfg.model_quantization),
            });
        }
        observer(k, &particles);
    }
    Ok((particles, model))
}

fn projection_seed(cfg: &FlowConfig, algo: Algo, k: usize) -> u64 {
    let per_step = match cfg.cadence {
        Cadence::PerStep => true,
        Cadence::Once => false,
        // The conditional flow resamples every step; the plain flow draws
        // once up front unless a pyramidal schedule forces fresh families.
        Cadence::Auto => {
            algo == Algo::Cswf || !matches!(cfg.schedule, Schedule::UniformSphere)
        }
    };
    rng::derive2(cfg.seed, role::STEP, if per_step { k as u64 } else { 0 })
}

fn validate_schedule_shapes(cfg: &FlowConfig, d: usize) -> Result<()> {
    match (&cfg.schedule, &cfg.y_mode) {
        (Schedule::Pyramid(s), YMode::Auto) => {
            if s.image.dim() != d {
                return Err(Error::invalid(format!(
                    "schedule image {}x{}x{} does not match x dimension {d}",
                    s.image.channels, s.image.height, s.image.width
                )));
            }
        }
        (Schedule::Pyramid(s), YMode::ImageSplit(split)) => {
            if s.image != split.shape {
                return Err(Error::invalid(
                    "schedule image shape does not match the occlusion mask shape",
                ));
            }
        }
        (Schedule::UniformSphere, _) => {}
    }
    Ok(())
}

fn schedule_text(schedule: &Schedule) -> String {
    match schedule {
        Schedule::UniformSphere => "uniform".to_string(),
        Schedule::Pyramid(s) => s.to_text(),
    }
}

fn schedule_shape(schedule: &Schedule) -> Option<ImageShape> {
    match schedule {
        Schedule::UniformSphere => None,
        Schedule::Pyramid(s) => Some(s.image),
    }
}

/// Draws one step's projections. Shared between the batched drivers and
/// offline replay so both regenerate identical directions from a seed.
pub(crate) fn build_step_projections(
    proj_seed: u64,
    h_count: usize,
    d: usize,
    l: usize,
    entry: Option<ScheduleEntry>,
    y_mode: &YMode,
    shape: Option<ImageShape>,
) -> Result<StepProjections> {
    let projs: Result<Vec<Projection>> = (0..h_count)
        .into_par_iter()
        .map(|h| {
            let mut rng = rng::chacha(rng::derive(proj_seed, h as u64));
            match (entry, y_mode) {
                (None, YMode::Auto) => {
                    if l == 0 {
                        sample_uniform_sphere(d, &mut rng)
                    } else {
                        sample_joint_sphere(d, l, &mut rng)
                    }
                }
                (None, YMode::ImageSplit(split)) => {
                    let full = sample_uniform_sphere(split.shape.dim(), &mut rng)?;
                    crate::data_io::split_projection(&full, split)
                }
                (Some(e), YMode::Auto) => {
                    let shape = shape.ok_or_else(|| {
                        Error::invalid("pyramid schedule requires an image shape")
                    })?;
                    let theta_x =
                        sample_locally_connected(shape, e.resolution, e.patch, &mut rng)?;
                    if l == 0 {
                        Ok(theta_x)
                    } else {
                        let theta_y = unit_normal_vector(l, &mut rng);
                        crate::projections::join_and_normalize(theta_x, &theta_y)
                    }
                }
                (Some(e), YMode::ImageSplit(split)) => {
                    let full = sample_locally_connected(
                        split.shape,
                        e.resolution,
                        e.patch,
                        &mut rng,
                    )?;
                    crate::data_io::split_projection(&full, split)
                }
            }
        })
        .collect();
    Ok(compile_step(projs?))
}

fn add_noise(particles: &mut ParticleSet, lambda: f64, eta: f64, seed: u64) {
    let scale = (2.0 * lambda * eta).sqrt();
    let d = particles.x.cols();
    particles
        .x
        .data_mut()
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(j, row)| {
            let mut rng = rng::chacha(rng::derive(seed, j as u64));
            for v in row.iter_mut() {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                *v = (*v as f64 + scale * g) as f32;
            }
        });
}

fn quantize_tables(tables: Vec<CdfPair>, q: Quantization) -> Vec<CdfPair> {
    match q {
        Quantization::Full => tables,
        Quantization::Knots(knots) => {
            let knots = knots.max(2) as usize;
            tables
                .into_iter()
                .map(|pair| CdfPair {
                    target: quantize_values(&pair.target, knots),
                    particle: quantize_values(&pair.particle, knots),
                })
                .collect()
        }
    }
}

/// Knot k holds the k/(Q-1) quantile, rounded through f32 so the in-memory
/// model equals its file round trip.
fn quantize_values(sorted: &[f64], knots: usize) -> Vec<f64> {
    if sorted.len() <= knots {
        return sorted.iter().map(|&v| v as f32 as f64).collect();
    }
    let cdf = crate::sliced_ot::EmpiricalCdf::from_sorted(sorted.to_vec()).expect("sorted table");
    (0..knots)
        .map(|k| {
            let a = k as f64 / (knots - 1) as f64;
            cdf.quantile_unchecked(a) as f32 as f64
        })
        .collect()
}

#[cfg(test)]
mod tests;
