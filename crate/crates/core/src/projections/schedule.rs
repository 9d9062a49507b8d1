//! Pyramidal schedules: ordered (resolution, patch-size) stages applied
//! coarse-to-fine across simulation steps.
//!
//! Schedule files are plain text, one stage per line, in the form
//! `HxW: S1,S2,...,Sk`. Blank lines and `#` comments are ignored.

use crate::error::{Error, Result};
use crate::projections::ImageShape;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub resolution: (usize, usize),
    pub patches: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PyramidSchedule {
    pub stages: Vec<Stage>,
    pub image: ImageShape,
}

/// One flattened schedule entry: a resolution paired with a single patch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleEntry {
    pub resolution: (usize, usize),
    pub patch: usize,
}

impl PyramidSchedule {
    pub fn new(stages: Vec<Stage>, image: ImageShape) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::invalid("schedule has no stages"));
        }
        let mut prev = (0usize, 0usize);
        for stage in &stages {
            let (h, w) = stage.resolution;
            if h == 0 || w == 0 {
                return Err(Error::invalid("stage resolution must be positive"));
            }
            if h < prev.0 || w < prev.1 {
                return Err(Error::invalid(format!(
                    "stage resolutions must be non-decreasing ({}x{} after {}x{})",
                    h, w, prev.0, prev.1
                )));
            }
            if h > image.height || w > image.width {
                return Err(Error::invalid("stage resolution exceeds the image"));
            }
            if stage.patches.is_empty() {
                return Err(Error::invalid("stage has no patch sizes"));
            }
            for &s in &stage.patches {
                if s == 0 || s > h.min(w) {
                    return Err(Error::invalid(format!(
                        "patch size {s} invalid for resolution {h}x{w}"
                    )));
                }
            }
            prev = (h, w);
        }
        let last = stages.last().unwrap().resolution;
        if last != (image.height, image.width) {
            return Err(Error::invalid(format!(
                "final resolution {}x{} must equal the image {}x{}",
                last.0, last.1, image.height, image.width
            )));
        }
        Ok(PyramidSchedule { stages, image })
    }

    /// Parses the plain-text schedule format.
    pub fn parse(text: &str, image: ImageShape) -> Result<Self> {
        let mut stages = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || {
                Error::invalid(format!(
                    "schedule line {}: expected \"HxW: S1,S2,...\", got {raw:?}",
                    lineno + 1
                ))
            };
            let (res, patches) = line.split_once(':').ok_or_else(bad)?;
            let (h, w) = res.trim().split_once(['x', 'X']).ok_or_else(bad)?;
            let resolution = (
                h.trim().parse::<usize>().map_err(|_| bad())?,
                w.trim().parse::<usize>().map_err(|_| bad())?,
            );
            let patches = patches
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage {
                resolution,
                patches,
            });
        }
        PyramidSchedule::new(stages, image)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for stage in &self.stages {
            let patches: Vec<String> = stage.patches.iter().map(|s| s.to_string()).collect();
            out.push_str(&format!(
                "{}x{}: {}\n",
                stage.resolution.0,
                stage.resolution.1,
                patches.join(",")
            ));
        }
        out
    }

    /// Flattens stages into their ordered (resolution, patch) entries.
    pub fn flatten(&self) -> Vec<ScheduleEntry> {
        self.stages
            .iter()
            .flat_map(|stage| {
                stage.patches.iter().map(|&patch| ScheduleEntry {
                    resolution: stage.resolution,
                    patch,
                })
            })
            .collect()
    }
}

/// Per-step assignment of schedule entries.
#[derive(Debug, Clone)]
pub struct StagePlan {
    pub entries: Vec<ScheduleEntry>,
    /// `step_entry[k]` is the index into `entries` for step `k`.
    pub step_entry: Vec<u32>,
}

impl StagePlan {
    pub fn entry_for_step(&self, step: usize) -> ScheduleEntry {
        self.entries[self.step_entry[step] as usize]
    }

    pub fn steps(&self) -> usize {
        self.step_entry.len()
    }
}

/// Assigns `total_steps` simulation steps to the flattened schedule entries
/// in order. Step counts per entry differ by at most one, with the
/// remainder going to the earliest entries.
pub fn schedule_stages(schedule: &PyramidSchedule, total_steps: usize) -> Result<StagePlan> {
    let entries = schedule.flatten();
    if total_steps < entries.len() {
        return Err(Error::invalid(format!(
            "{total_steps} steps cannot cover {} schedule entries",
            entries.len()
        )));
    }
    let base = total_steps / entries.len();
    let rem = total_steps % entries.len();
    let mut step_entry = Vec::with_capacity(total_steps);
    for (i, _) in entries.iter().enumerate() {
        let count = base + usize::from(i < rem);
        step_entry.extend(std::iter::repeat(i as u32).take(count));
    }
    debug_assert_eq!(step_entry.len(), total_steps);
    Ok(StagePlan {
        entries,
        step_entry,
    })
}

const PRESET_MNIST: &str = "\
1x1: 1
2x2: 2
3x3: 3
4x4: 4
5x5: 5
6x6: 6
7x7: 7,5,3
14x14: 14,13,11,9,7,5,3
21x21: 15,13,11,9,7,5,3
28x28: 15,13,11,9,7,5,3
";

const PRESET_CIFAR10: &str = "\
1x1: 1
2x2: 2
3x3: 3
4x4: 4
5x5: 5
6x6: 6
7x7: 7
8x8: 8,7,5,3
12x12: 12,11,9,7,5,3
16x16: 15,13,11,9,7,5,3
24x24: 15,13,11,9,7,5,3
32x32: 15,13,11,9,7,5,3
";

const PRESET_CELEBA: &str = "\
1x1: 1
2x2: 2
3x3: 3
4x4: 4
5x5: 5
6x6: 6
7x7: 7
8x8: 8,7,5,3
12x12: 12,11,9,7,5,3
16x16: 15,13,11,9,7,5,3
24x24: 15,13,11,9,7,5,3
32x32: 15,13,11,9,7,5,3
64x64: 15,13,11,9,7,5,3
";

/// Bundled schedule presets, one per dataset family.
pub fn preset_text(name: &str) -> Option<&'static str> {
    match name {
        "mnist" | "fashion" => Some(PRESET_MNIST),
        "cifar10" => Some(PRESET_CIFAR10),
        "celeba" => Some(PRESET_CELEBA),
        _ => None,
    }
}

pub fn preset_names() -> &'static [&'static str] {
    &["mnist", "fashion", "cifar10", "celeba"]
}
