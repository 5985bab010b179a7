//! Batch statistics per ladder stage, gathered without training.

use pgps_core::metrics::{fg_voxel_fraction, unique_class_fraction};
use pgps_core::sampler::{BatchAddress, Dataset, Sampler};
use pgps_core::schedule::{CurriculumSchedule, Mode, SamplingPolicy};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub policy: Mode,
    pub stage: usize,
    pub patch: String,
    pub batch: usize,
    pub batches: usize,
    pub mean_fg_fraction: f64,
    pub mean_unique_class_fraction: f64,
    pub tensor_voxels: u64,
}

/// Draws `batches` batches at each requested stage (all stages when `stages`
/// is empty). Batch `i` of stage `s` uses address `(s, i)`, so results do not
/// depend on which other stages are sampled or on the worker count.
pub fn sample_stats(
    dataset: &Dataset,
    policy: &SamplingPolicy,
    schedule: &CurriculumSchedule,
    stages: &[usize],
    batches: usize,
    workers: usize,
) -> Result<Vec<StageStats>> {
    let sampler = Sampler::new(dataset, policy.clone(), workers)?;
    let all: Vec<usize> = (0..schedule.stages.len()).collect();
    let stages = if stages.is_empty() { &all[..] } else { stages };
    let mut rows = Vec::with_capacity(stages.len());
    for &stage in stages {
        let plan = schedule.stages.get(stage).ok_or_else(|| {
            crate::Error::Config(format!("stage {stage} out of range ({} stages)", schedule.stages.len()))
        })?;
        let (mut fg, mut unique) = (0.0, 0.0);
        for i in 0..batches {
            let addr = BatchAddress {
                epoch: stage as u64,
                iteration: i as u64,
            };
            let batch = sampler.batch(schedule, stage, addr)?;
            fg += fg_voxel_fraction(&batch);
            unique += unique_class_fraction(&batch, dataset.num_classes);
        }
        let n = batches.max(1) as f64;
        let [a, b, c] = plan.patch_size;
        rows.push(StageStats {
            policy: schedule.mode,
            stage,
            patch: format!("{a}x{b}x{c}"),
            batch: plan.batch_size,
            batches,
            mean_fg_fraction: fg / n,
            mean_unique_class_fraction: unique / n,
            tensor_voxels: plan.tensor_voxels(),
        });
    }
    Ok(rows)
}

/// Smallest, middle and largest stage of a schedule.
pub fn probe_stages(schedule: &CurriculumSchedule) -> Vec<usize> {
    let last = schedule.stages.len().saturating_sub(1);
    let mut s = vec![0, last / 2, last];
    s.dedup();
    s
}
