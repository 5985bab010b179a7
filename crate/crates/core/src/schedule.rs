//! Patch-size curricula: ladders, epoch allocation, batch-size solving and
//! closed-form cost accounting.
//!
//! A schedule is a list of stages, each training a fixed `(patch size, batch
//! size)` for a number of epochs. The constant-patch baseline is the
//! degenerate one-stage schedule at the target patch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{voxel_count, Shape3};

/// Pooling operations per axis of the segmentation network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConstraints {
    pub pools_per_axis: [u32; 3],
}

impl ArchConstraints {
    pub fn new(pools_per_axis: [u32; 3]) -> Self {
        Self { pools_per_axis }
    }

    /// Per-axis divisor `2^pools`; every processable patch is a multiple of it.
    pub fn divisors(&self) -> Shape3 {
        self.pools_per_axis.map(|p| 1usize << p)
    }

    pub fn min_patch(&self) -> Shape3 {
        min_patch(self)
    }

    pub fn check_divisible(&self, size: Shape3) -> Result<()> {
        let divisor = self.divisors();
        match (0..3).find(|&a| size[a] == 0 || !size[a].is_multiple_of(divisor[a])) {
            Some(axis) => Err(Error::Indivisible {
                size,
                divisor,
                axis,
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Constant patch size baseline.
    Cps,
    PgpsEfficiency,
    PgpsPerformance,
    PgpsLegacy,
    PgpsPlusLegacy,
    ProgressiveResolution,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Cps,
        Mode::PgpsEfficiency,
        Mode::PgpsPerformance,
        Mode::PgpsLegacy,
        Mode::PgpsPlusLegacy,
        Mode::ProgressiveResolution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Cps => "cps",
            Mode::PgpsEfficiency => "pgps-efficiency",
            Mode::PgpsPerformance => "pgps-performance",
            Mode::PgpsLegacy => "pgps-legacy",
            Mode::PgpsPlusLegacy => "pgps-plus-legacy",
            Mode::ProgressiveResolution => "progressive-resolution",
        }
    }

    /// Whether the schedule walks a patch-size ladder.
    pub fn is_progressive(self) -> bool {
        self != Mode::Cps
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Policy(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisPolicy {
    /// Grow the currently smallest axis (lowest index on ties).
    LowestValue,
    /// Cycle axes 0, 1, 2, skipping axes that reached the target.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchStrategy {
    SplitCrop,
    SingleCrop,
    MultiCrop,
    SingleVolume,
}

impl BatchStrategy {
    pub fn name(self) -> &'static str {
        match self {
            BatchStrategy::SplitCrop => "split-crop",
            BatchStrategy::SingleCrop => "single-crop",
            BatchStrategy::MultiCrop => "multi-crop",
            BatchStrategy::SingleVolume => "single-volume",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FgRatioRule {
    /// 50% for a batch of two, a third otherwise.
    NnunetDefault,
    Fixed50,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub mode: Mode,
    pub axis_policy: AxisPolicy,
    pub batch_strategy: BatchStrategy,
    pub fg_ratio_rule: FgRatioRule,
    #[serde(default)]
    pub mirror_axes: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl SamplingPolicy {
    /// The standard configuration for each mode.
    pub fn for_mode(mode: Mode, seed: u64) -> Self {
        let (axis_policy, batch_strategy, fg_ratio_rule) = match mode {
            Mode::Cps | Mode::PgpsEfficiency | Mode::ProgressiveResolution => (
                AxisPolicy::LowestValue,
                BatchStrategy::SplitCrop,
                FgRatioRule::NnunetDefault,
            ),
            Mode::PgpsPerformance => (
                AxisPolicy::LowestValue,
                BatchStrategy::SplitCrop,
                FgRatioRule::Fixed50,
            ),
            Mode::PgpsLegacy => (
                AxisPolicy::Sequential,
                BatchStrategy::SplitCrop,
                FgRatioRule::NnunetDefault,
            ),
            Mode::PgpsPlusLegacy => (
                AxisPolicy::Sequential,
                BatchStrategy::SingleCrop,
                FgRatioRule::NnunetDefault,
            ),
        };
        Self {
            mode,
            axis_policy,
            batch_strategy,
            fg_ratio_rule,
            mirror_axes: vec![0, 1, 2],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == Mode::PgpsPerformance && self.fg_ratio_rule != FgRatioRule::Fixed50 {
            return Err(Error::Policy(
                "pgps-performance requires the fixed 50% foreground ratio".into(),
            ));
        }
        if let Some(a) = self.mirror_axes.iter().find(|&&a| a > 2) {
            return Err(Error::Policy(format!("mirror axis {a} out of range")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    #[serde(rename = "patch")]
    pub patch_size: Shape3,
    #[serde(rename = "batch")]
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(rename = "iters")]
    pub iterations_per_epoch: usize,
}

impl StagePlan {
    pub fn patch_voxels(&self) -> usize {
        voxel_count(self.patch_size)
    }

    pub fn tensor_voxels(&self) -> u64 {
        (self.batch_size * self.patch_voxels()) as u64
    }

    pub fn iterations(&self) -> usize {
        self.epochs * self.iterations_per_epoch
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub mode: Mode,
    pub stages: Vec<StagePlan>,
    pub budget_voxels: u64,
    #[serde(rename = "target")]
    pub target_patch: Shape3,
}

impl CurriculumSchedule {
    /// Batch size used at the target patch.
    pub fn default_batch(&self) -> usize {
        self.stages.last().map(|s| s.batch_size).unwrap_or(1)
    }

    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|s| s.epochs).sum()
    }

    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(StagePlan::iterations).sum()
    }

    /// Σ iterations · batch · patch voxels over all stages.
    pub fn iterated_voxels(&self) -> u128 {
        self.stages
            .iter()
            .map(|s| s.iterations() as u128 * s.tensor_voxels() as u128)
            .sum()
    }

    /// Size patches are cropped at before any resampling.
    pub fn crop_size(&self, stage: usize) -> Shape3 {
        if self.mode == Mode::ProgressiveResolution {
            self.target_patch
        } else {
            self.stages[stage].patch_size
        }
    }

    /// Stage index and iteration-within-stage for a global iteration counter.
    pub fn locate(&self, mut iteration: usize) -> Option<(usize, usize)> {
        for (i, s) in self.stages.iter().enumerate() {
            if iteration < s.iterations() {
                return Some((i, iteration));
            }
            iteration -= s.iterations();
        }
        None
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn min_patch(arch: &ArchConstraints) -> Shape3 {
    arch.divisors()
}

/// Patch sizes from the minimal patch to `target`, growing one axis by its
/// divisor per step.
pub fn build_ladder(arch: &ArchConstraints, target: Shape3, policy: AxisPolicy) -> Result<Vec<Shape3>> {
    arch.check_divisible(target)?;
    let min = arch.min_patch();
    if (0..3).any(|a| target[a] < min[a]) {
        return Err(Error::TargetTooSmall { target, min });
    }
    let step = arch.divisors();

    let mut current = min;
    let mut ladder = vec![current];
    let mut cursor = 0;
    while current != target {
        let axis = match policy {
            AxisPolicy::LowestValue => (0..3)
                .filter(|&a| current[a] < target[a])
                .min_by_key(|&a| (current[a], a))
                .expect("some axis below target"),
            AxisPolicy::Sequential => {
                let axis = (0..3)
                    .map(|off| (cursor + off) % 3)
                    .find(|&a| current[a] < target[a])
                    .expect("some axis below target");
                cursor = (axis + 1) % 3;
                axis
            }
        };
        current[axis] += step[axis];
        ladder.push(current);
    }
    Ok(ladder)
}

/// Equal epochs per stage; the remainder goes to the final stage.
pub fn allocate_epochs(total_epochs: usize, num_stages: usize) -> Result<Vec<usize>> {
    if num_stages == 0 || total_epochs < num_stages {
        return Err(Error::TooFewEpochs {
            total: total_epochs,
            stages: num_stages,
        });
    }
    let base = total_epochs / num_stages;
    let mut epochs = vec![base; num_stages];
    epochs[num_stages - 1] += total_epochs % num_stages;
    Ok(epochs)
}

/// Memory budget expressed as input-tensor voxels of the reference configuration.
pub fn budget_voxels(default_batch: usize, target_patch: Shape3) -> u64 {
    (default_batch * voxel_count(target_patch)) as u64
}

/// Batch size for one stage in isolation.
///
/// For [`Mode::PgpsPlusLegacy`] this is only the budget cap; the monotone
/// tensor constraint needs the whole ladder, see [`batch_sizes_for_ladder`].
pub fn batch_size_for_stage(mode: Mode, stage_patch: Shape3, budget_voxels: u64, default_batch: usize) -> usize {
    let fit = (budget_voxels / voxel_count(stage_patch) as u64) as usize;
    match mode {
        Mode::Cps | Mode::PgpsEfficiency | Mode::PgpsLegacy | Mode::ProgressiveResolution => default_batch,
        Mode::PgpsPerformance => fit.max(default_batch),
        Mode::PgpsPlusLegacy => fit.max(1),
    }
}

pub fn batch_sizes_for_ladder(mode: Mode, ladder: &[Shape3], budget_voxels: u64, default_batch: usize) -> Vec<usize> {
    let mut batches: Vec<usize> = ladder
        .iter()
        .map(|&p| batch_size_for_stage(mode, p, budget_voxels, default_batch))
        .collect();
    if mode == Mode::PgpsPlusLegacy {
        // backward pass: each stage's tensor may not exceed the next stage's
        for i in (0..ladder.len().saturating_sub(1)).rev() {
            let cap = (batches[i + 1] * voxel_count(ladder[i + 1])) as u64;
            let cap = cap.min(budget_voxels);
            batches[i] = ((cap / voxel_count(ladder[i]) as u64) as usize).max(1);
        }
    }
    batches
}

/// Number of foreground-forced patches in a batch, rounded half up.
pub fn fg_patch_count(rule: FgRatioRule, batch_size: usize) -> usize {
    match rule {
        FgRatioRule::Fixed50 => batch_size.div_ceil(2),
        FgRatioRule::NnunetDefault if batch_size == 2 => 1,
        // round-half-up(b / 3) = floor((2b + 3) / 6)
        FgRatioRule::NnunetDefault => (2 * batch_size + 3) / 6,
    }
}

pub fn build_schedule(
    policy: &SamplingPolicy,
    arch: &ArchConstraints,
    target: Shape3,
    default_batch: usize,
    total_epochs: usize,
    iterations_per_epoch: usize,
) -> Result<CurriculumSchedule> {
    policy.validate()?;
    if default_batch == 0 {
        return Err(Error::Policy("default batch must be positive".into()));
    }
    if iterations_per_epoch == 0 {
        return Err(Error::Policy("iterations per epoch must be positive".into()));
    }
    let ladder = if policy.mode == Mode::Cps {
        arch.check_divisible(target)?;
        vec![target]
    } else {
        build_ladder(arch, target, policy.axis_policy)?
    };
    let budget = budget_voxels(default_batch, target);
    let epochs = allocate_epochs(total_epochs, ladder.len())?;
    let batches = batch_sizes_for_ladder(policy.mode, &ladder, budget, default_batch);
    let stages = ladder
        .into_iter()
        .zip(batches)
        .zip(epochs)
        .map(|((patch_size, batch_size), epochs)| StagePlan {
            patch_size,
            batch_size,
            epochs,
            iterations_per_epoch,
        })
        .collect();
    Ok(CurriculumSchedule {
        mode: policy.mode,
        stages,
        budget_voxels: budget,
        target_patch: target,
    })
}

/// Iterated-voxel ratio of two schedules with the same iteration count.
pub fn expected_relative_flops(schedule: &CurriculumSchedule, reference: &CurriculumSchedule) -> Result<f64> {
    if schedule.total_iterations() != reference.total_iterations() {
        return Err(Error::Policy(format!(
            "schedules differ in total iterations ({} vs {})",
            schedule.total_iterations(),
            reference.total_iterations()
        )));
    }
    Ok(schedule.iterated_voxels() as f64 / reference.iterated_voxels() as f64)
}
