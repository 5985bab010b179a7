//! Repeated training runs over policies and training-length fractions.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::info;
use pgps_core::metrics::{median, virtual_relative_runtime};
use pgps_core::sampler::Dataset;
use pgps_core::schedule::{Mode, SamplingPolicy};
use pgps_core::stats::{triplet_win_counts, TripletWins};
use pgps_core::Volume;
use serde::{Deserialize, Serialize};

use crate::config::{split_indices, ExperimentConfig, PolicySpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, mean_dice};
use crate::train::{run_schedule, run_training};

/// Outcome of one training run plus held-out evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub task: String,
    pub policy: Mode,
    pub fraction: f64,
    pub repeat: usize,
    pub seed: u64,
    pub dice: f64,
    pub iterations: usize,
    pub iterated_voxels: u64,
    /// Iterated voxels over those of the constant-patch schedule at the same
    /// fraction.
    pub relative_flops: f64,
    pub train_seconds: f64,
    pub virtual_relative_runtime: f64,
}

/// The held-out split of `volumes` for the configured fold.
pub fn split_dataset(cfg: &ExperimentConfig, volumes: &[Volume]) -> Result<(Dataset, Vec<usize>)> {
    let (train, held_out) = split_indices(volumes.len(), cfg.fold, cfg.folds);
    if train.is_empty() || held_out.is_empty() {
        return Err(Error::Config(format!(
            "fold {} of {} leaves an empty split for {} volumes",
            cfg.fold,
            cfg.folds,
            volumes.len()
        )));
    }
    let dataset = Dataset::new(train.iter().map(|&i| volumes[i].clone()).collect())?;
    Ok((dataset, held_out))
}

/// Trains and evaluates one `(policy, fraction, seed)` cell.
pub fn run_cell(
    cfg: &ExperimentConfig,
    volumes: &[Volume],
    train: &Dataset,
    held_out: &[usize],
    policy: &SamplingPolicy,
    fraction: f64,
    repeat: usize,
    seed: u64,
) -> Result<RunResult> {
    let outcome = run_training(cfg, train, policy, seed, fraction)?;
    let eval_set: Vec<(usize, &Volume)> = held_out.iter().map(|&i| (i, &volumes[i])).collect();
    let scores = evaluate(&outcome.net, &eval_set, cfg.target_patch)?;
    let reference = run_schedule(cfg, &SamplingPolicy::for_mode(Mode::Cps, seed), fraction)?;
    let dice = mean_dice(&scores);
    info!(
        "{} {} {fraction}% seed {seed}: dice {dice:.4}",
        cfg.name, policy.mode
    );
    Ok(RunResult {
        task: cfg.name.clone(),
        policy: policy.mode,
        fraction,
        repeat,
        seed,
        dice,
        iterations: outcome.trace.records.len(),
        iterated_voxels: outcome.trace.iterated_voxels as u64,
        relative_flops: outcome.trace.iterated_voxels as f64 / reference.iterated_voxels() as f64,
        train_seconds: outcome.trace.total_seconds(),
        virtual_relative_runtime: virtual_relative_runtime(&outcome.trace, &outcome.schedule)?,
    })
}

/// Every policy x fraction x repeat of a config, in that nesting order.
/// Cells run on `cfg.jobs` threads; each cell is independent of the others,
/// so the results do not depend on the job count.
pub fn run_grid(cfg: &ExperimentConfig, policies: &[PolicySpec], fractions: &[f64], seeds: &[u64]) -> Result<Vec<RunResult>> {
    let volumes = cfg.load_volumes()?;
    let (train, held_out) = split_dataset(cfg, &volumes)?;
    let mut cells = Vec::new();
    for spec in policies {
        for &fraction in fractions {
            for (repeat, &seed) in seeds.iter().enumerate() {
                cells.push((spec.resolve(seed), fraction, repeat, seed));
            }
        }
    }
    let run = |(policy, fraction, repeat, seed): &(SamplingPolicy, f64, usize, u64)| {
        run_cell(cfg, &volumes, &train, &held_out, policy, *fraction, *repeat, *seed)
    };
    let jobs = cfg.jobs.clamp(1, cells.len().max(1));
    if jobs == 1 {
        return cells.iter().map(run).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<RunResult>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                *slots[i].lock().expect("result slot") = Some(run(cell));
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every cell ran"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub policy: Mode,
    pub fraction: f64,
    /// Mean over tasks of (mean Dice over repeats) / (task maximum).
    pub normalized: f64,
    pub tasks: usize,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Distinct values in first-seen order.
fn distinct<T: PartialEq + Copy>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

/// Mean Dice per (task, policy, fraction) over repeats.
pub fn cell_means(results: &[RunResult]) -> Vec<(String, Mode, f64, f64)> {
    let mut out = Vec::new();
    for task in distinct(results.iter().map(|r| r.task.as_str())) {
        for policy in distinct(results.iter().map(|r| r.policy)) {
            for fraction in distinct(results.iter().map(|r| r.fraction)) {
                let dice: Vec<f64> = results
                    .iter()
                    .filter(|r| r.task == task && r.policy == policy && r.fraction == fraction)
                    .map(|r| r.dice)
                    .collect();
                if !dice.is_empty() {
                    out.push((task.to_string(), policy, fraction, mean(&dice)));
                }
            }
        }
    }
    out
}

/// Averaged convergence curve; each task is first divided by its best cell.
pub fn normalized_curve(results: &[RunResult]) -> Vec<CurvePoint> {
    let cells = cell_means(results);
    let tasks = distinct(cells.iter().map(|c| c.0.as_str()));
    let task_max = |task: &str| {
        cells
            .iter()
            .filter(|c| c.0 == task)
            .map(|c| c.3)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let maxima: Vec<(String, f64)> = tasks.iter().map(|t| (t.to_string(), task_max(t))).collect();
    let mut out = Vec::new();
    for policy in distinct(cells.iter().map(|c| c.1)) {
        for fraction in distinct(cells.iter().map(|c| c.2)) {
            let values: Vec<f64> = cells
                .iter()
                .filter(|c| c.1 == policy && c.2 == fraction)
                .map(|c| {
                    let max = maxima.iter().find(|m| m.0 == c.0).expect("task max").1;
                    if max > 0.0 {
                        c.3 / max
                    } else {
                        0.0
                    }
                })
                .collect();
            if !values.is_empty() {
                out.push(CurvePoint {
                    policy,
                    fraction,
                    normalized: mean(&values),
                    tasks: values.len(),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub runs: Vec<RunResult>,
    pub curve: Vec<CurvePoint>,
}

/// Trains every policy at every fraction for each repeat seed of each task,
/// evaluates on the held-out split and builds the normalized curve.
pub fn run_convergence_suite(configs: &[ExperimentConfig]) -> Result<ConvergenceReport> {
    let mut runs = Vec::new();
    for cfg in configs {
        runs.extend(run_grid(cfg, &cfg.policies, &cfg.fractions, &cfg.repeat_seeds())?);
    }
    let curve = normalized_curve(&runs);
    Ok(ConvergenceReport { runs, curve })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub policy: Mode,
    pub fraction: f64,
    pub mean: f64,
    pub sd: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRow {
    pub fraction: f64,
    pub policies: [Mode; 3],
    pub wins: [usize; 3],
    pub combinations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariabilityReport {
    pub runs: Vec<RunResult>,
    pub spread: Vec<Spread>,
    /// Present when exactly three policies were compared.
    pub triplets: Vec<TripletRow>,
    pub median_train_seconds: Option<f64>,
}

/// Mean, SD and triplet wins from already computed runs (one task).
pub fn summarize_variability(runs: Vec<RunResult>) -> VariabilityReport {
    let policies = distinct(runs.iter().map(|r| r.policy));
    let fractions = distinct(runs.iter().map(|r| r.fraction));
    let dice_of = |p: Mode, f: f64| -> Vec<f64> {
        runs.iter().filter(|r| r.policy == p && r.fraction == f).map(|r| r.dice).collect()
    };
    let mut spread = Vec::new();
    for &p in &policies {
        for &f in &fractions {
            let d = dice_of(p, f);
            if !d.is_empty() {
                spread.push(Spread {
                    policy: p,
                    fraction: f,
                    mean: mean(&d),
                    sd: sample_sd(&d),
                    runs: d.len(),
                });
            }
        }
    }
    let mut triplets = Vec::new();
    if let [a, b, c] = policies[..] {
        for &f in &fractions {
            let TripletWins { wins, combinations } = triplet_win_counts(&dice_of(a, f), &dice_of(b, f), &dice_of(c, f));
            triplets.push(TripletRow {
                fraction: f,
                policies: [a, b, c],
                wins,
                combinations,
            });
        }
    }
    let seconds: Vec<f64> = runs.iter().map(|r| r.train_seconds).collect();
    VariabilityReport {
        median_train_seconds: median(&seconds),
        runs,
        spread,
        triplets,
    }
}

/// Repeats every policy `cfg.repeats` times per fraction on one fold.
pub fn run_variability_suite(cfg: &ExperimentConfig) -> Result<VariabilityReport> {
    let runs = run_grid(cfg, &cfg.policies, &cfg.fractions, &cfg.repeat_seeds())?;
    Ok(summarize_variability(runs))
}
