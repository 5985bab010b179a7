use std::path::{Path, PathBuf};

use pgps_core::io::load_dataset;
use pgps_core::schedule::{ArchConstraints, Mode, SamplingPolicy};
use pgps_core::synth::{generate, SynthSpec};
use pgps_core::{Shape3, Volume};
use pgps_segnet::SegNetConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Overrides the root that relative output directories resolve against.
pub const OUTPUT_ROOT_ENV: &str = "PGPS_OUTPUT_ROOT";

/// Training-length fractions (percent of the full iteration count) that a
/// config may request.
pub const ALLOWED_FRACTIONS: [f64; 5] = [1.0, 10.0, 25.0, 50.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Directory written by `save_dataset` (manifest.json + RVOL files).
    Path(PathBuf),
    Synth(SynthSpec),
}

/// A policy given either by mode name (standard settings) or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicySpec {
    Mode(Mode),
    Full(SamplingPolicy),
}

impl PolicySpec {
    pub fn mode(&self) -> Mode {
        match self {
            PolicySpec::Mode(m) => *m,
            PolicySpec::Full(p) => p.mode,
        }
    }

    /// The concrete policy for one run; the run seed replaces any seed given.
    pub fn resolve(&self, seed: u64) -> SamplingPolicy {
        match self {
            PolicySpec::Mode(m) => SamplingPolicy::for_mode(*m, seed),
            PolicySpec::Full(p) => SamplingPolicy { seed, ..p.clone() },
        }
    }
}

fn default_base_channels() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub pools_per_axis: [u32; 3],
    #[serde(default = "default_base_channels")]
    pub base_channels: usize,
    /// Start the final 1x1x1 projection at zero (uniform initial predictions).
    #[serde(default)]
    pub zero_head: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub base_lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    /// Global gradient-norm ceiling; `None` disables clipping.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            base_lr: 0.01,
            momentum: 0.99,
            nesterov: true,
            clip_norm: Some(12.0),
        }
    }
}

fn default_name() -> String {
    "task".into()
}
fn default_batch() -> usize {
    2
}
fn default_fractions() -> Vec<f64> {
    vec![100.0]
}
fn default_repeats() -> usize {
    5
}
fn default_workers() -> usize {
    1
}
fn default_folds() -> usize {
    5
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: DatasetSource,
    pub network: NetworkSpec,
    pub policies: Vec<PolicySpec>,
    pub target_patch: Shape3,
    #[serde(default = "default_batch")]
    pub default_batch: usize,
    pub total_epochs: usize,
    pub iterations_per_epoch: usize,
    /// Percent of the full iteration count; applied by scaling the
    /// iterations per epoch.
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    /// Sampler threads inside one run.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Runs trained concurrently by the suites.
    #[serde(default = "default_workers")]
    pub jobs: usize,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    /// Held-out fold; fold 0 is the last fifth of the volumes.
    #[serde(default)]
    pub fold: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Z-score every image (per volume) after loading.
    #[serde(default = "yes")]
    pub normalize_intensity: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.policies.is_empty() {
            return bad("no policies".into());
        }
        if self.iterations_per_epoch == 0 {
            return bad("iterations_per_epoch must be positive".into());
        }
        if self.default_batch == 0 {
            return bad("default_batch must be positive".into());
        }
        if self.fractions.is_empty() {
            return bad("no training-length fractions".into());
        }
        if let Some(f) = self.fractions.iter().find(|f| !ALLOWED_FRACTIONS.contains(f)) {
            return bad(format!("fraction {f}% is not one of {ALLOWED_FRACTIONS:?}"));
        }
        if self.repeats == 0 {
            return bad("repeats must be positive".into());
        }
        if self.folds < 2 || self.fold >= self.folds {
            return bad(format!("fold {} of {} folds", self.fold, self.folds));
        }
        if self.workers == 0 || self.jobs == 0 {
            return bad("workers and jobs must be positive".into());
        }
        self.arch().check_divisible(self.target_patch)?;
        for p in &self.policies {
            p.resolve(self.seed).validate()?;
        }
        Ok(())
    }

    pub fn arch(&self) -> ArchConstraints {
        ArchConstraints::new(self.network.pools_per_axis)
    }

    pub fn net_config(&self, num_classes: u16, seed: u64) -> SegNetConfig {
        SegNetConfig {
            pools_per_axis: self.network.pools_per_axis,
            base_channels: self.network.base_channels,
            num_classes,
            seed,
        }
    }

    /// Iterations per epoch for a training-length fraction (at least one).
    pub fn scaled_iterations(&self, fraction: f64) -> usize {
        ((self.iterations_per_epoch as f64 * fraction / 100.0).round() as usize).max(1)
    }

    /// Seeds of the repeated runs.
    pub fn repeat_seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|r| self.seed.wrapping_add(r)).collect()
    }

    pub fn load_volumes(&self) -> Result<Vec<Volume>> {
        let mut volumes = match &self.dataset {
            DatasetSource::Path(p) => load_dataset(p)?,
            DatasetSource::Synth(spec) => generate(spec)?,
        };
        if self.normalize_intensity {
            volumes.iter_mut().for_each(zscore);
        }
        Ok(volumes)
    }

    /// Output directory; relative paths resolve against `$PGPS_OUTPUT_ROOT`
    /// when it is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        let dir = self.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(&self.name));
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
            _ => dir,
        }
    }
}

/// Shifts and scales the image to zero mean and unit variance (statistics in
/// f64); constant images are only centred.
pub fn zscore(volume: &mut Volume) {
    let n = volume.image.len() as f64;
    let mean = volume.image.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = volume.image.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    for v in &mut volume.image {
        *v = ((*v as f64 - mean) / sd) as f32;
    }
}

/// Training and held-out volume indices. The held-out block has
/// `ceil(n / folds)` volumes; fold 0 is the last block, fold 1 the one
/// before it, and so on. Late folds of small datasets may come out empty.
pub fn split_indices(n: usize, fold: usize, folds: usize) -> (Vec<usize>, Vec<usize>) {
    let block = n.div_ceil(folds.max(1));
    let end = n.saturating_sub(fold * block);
    let start = end.saturating_sub(block);
    let train = (0..start).chain(end..n).collect();
    (train, (start..end).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_json() -> &'static str {
        r#"{
            "name": "toy",
            "dataset": {"synth": {
                "num_volumes": 5, "dims_min": [16,16,16], "dims_max": [16,16,16],
                "num_classes": 2, "objects_per_class": [1,1], "radius": [[3.0,3.0]],
                "noise": 0.1, "seed": 1}},
            "network": {"pools_per_axis": [1,1,1], "base_channels": 2},
            "policies": ["cps", "pgps-efficiency"],
            "target_patch": [8,8,8],
            "total_epochs": 4,
            "iterations_per_epoch": 10,
            "fractions": [10, 100],
            "seed": 3
        }"#
    }

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(sample_json()).unwrap();
        assert_eq!(cfg.default_batch, 2);
        assert_eq!(cfg.repeats, 5);
        assert_eq!(cfg.optimizer, OptimizerSpec::default());
        assert_eq!(cfg.policies[1].mode(), Mode::PgpsEfficiency);
        assert_eq!(cfg.scaled_iterations(10.0), 1);
        assert_eq!(cfg.scaled_iterations(1.0), 1);
        assert_eq!(cfg.scaled_iterations(50.0), 5);
        let again = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = ExperimentConfig::from_json(sample_json()).unwrap();
        cfg.fractions = vec![30.0];
        assert!(cfg.validate().is_err());
        cfg.fractions = vec![100.0];
        cfg.target_patch = [8, 8, 5];
        assert!(cfg.validate().is_err());
        cfg.target_patch = [8, 8, 8];
        cfg.fold = 5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn full_policy_keeps_its_settings() {
        let json = r#"{"mode":"pgps-efficiency","axis_policy":"sequential","batch_strategy":"multi-crop","fg_ratio_rule":"fixed50","seed":99}"#;
        let spec: PolicySpec = serde_json::from_str(json).unwrap();
        let p = spec.resolve(4);
        assert_eq!(p.seed, 4);
        assert_eq!(p.batch_strategy, pgps_core::schedule::BatchStrategy::MultiCrop);
    }

    #[test]
    fn zscore_moments() {
        let mut v = Volume::new([2, 2, 1], [1.0; 3], 2, vec![1.0, 2.0, 3.0, 4.0], vec![0; 4]).unwrap();
        zscore(&mut v);
        let sd = 1.25f64.sqrt();
        let expected: Vec<f32> = [-1.5, -0.5, 0.5, 1.5].iter().map(|x| (x / sd) as f32).collect();
        assert_eq!(v.image, expected);
        let mut flat = Volume::new([1, 1, 2], [1.0; 3], 2, vec![5.0, 5.0], vec![0; 2]).unwrap();
        zscore(&mut flat);
        assert_eq!(flat.image, vec![0.0, 0.0]);
    }

    #[test]
    fn splits() {
        assert_eq!(split_indices(20, 0, 5), ((0..16).collect(), (16..20).collect()));
        assert_eq!(split_indices(20, 4, 5), ((4..20).collect(), (0..4).collect()));
        // ceil(7 / 5) = 2 held out
        assert_eq!(split_indices(7, 0, 5).1, vec![5, 6]);
        assert_eq!(split_indices(7, 2, 5), (vec![0, 3, 4, 5, 6], vec![1, 2]));
        assert_eq!(split_indices(7, 3, 5), ((1..7).collect(), vec![0]));
        // blocks of two run out before the fifth fold
        assert!(split_indices(7, 4, 5).1.is_empty());
    }
}
