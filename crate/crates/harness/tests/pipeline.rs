use pgps_core::sampler::Dataset;
use pgps_core::schedule::{CurriculumSchedule, Mode, SamplingPolicy, StagePlan};
use pgps_core::stats::triplet_win_counts;
use pgps_harness::report::{table_rows, trace_rows};
use pgps_harness::suites::{normalized_curve, run_grid, split_dataset, summarize_variability};
use pgps_harness::train::{run_schedule, train_with_schedule};
use pgps_harness::{run_training, ExperimentConfig, RunResult};
use pgps_segnet::SegNet;

fn config() -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{
            "name": "tiny",
            "dataset": {"synth": {
                "num_volumes": 6, "dims_min": [16,16,16], "dims_max": [16,16,16],
                "num_classes": 3, "objects_per_class": [1,2], "radius": [[2.0,3.0],[1.5,2.5]],
                "noise": 0.3, "seed": 5}},
            "network": {"pools_per_axis": [1,1,1], "base_channels": 2},
            "policies": ["cps", "pgps-efficiency", "pgps-performance", "progressive-resolution"],
            "target_patch": [8,8,8],
            "total_epochs": 10,
            "iterations_per_epoch": 2,
            "fractions": [50, 100],
            "repeats": 2,
            "seed": 11
        }"#,
    )
    .unwrap()
}

fn train_set(cfg: &ExperimentConfig) -> Dataset {
    let volumes = cfg.load_volumes().unwrap();
    split_dataset(cfg, &volumes).unwrap().0
}

#[test]
fn zero_iterations_keep_the_initialisation() {
    let cfg = config();
    let train = train_set(&cfg);
    let schedule = CurriculumSchedule {
        mode: Mode::Cps,
        stages: vec![StagePlan {
            patch_size: [8, 8, 8],
            batch_size: 2,
            epochs: 0,
            iterations_per_epoch: 2,
        }],
        budget_voxels: 1024,
        target_patch: [8, 8, 8],
    };
    let net = SegNet::new(cfg.net_config(train.num_classes, 4)).unwrap();
    let init = net.params.clone();
    let policy = SamplingPolicy::for_mode(Mode::Cps, 4);
    let out = train_with_schedule(&cfg, &train, &policy, schedule, net).unwrap();
    assert_eq!(out.net.params, init);
    assert!(out.trace.records.is_empty());
    assert_eq!(out.trace.iterated_voxels, 0);
}

#[test]
fn traces_agree_with_their_schedules() {
    let cfg = config();
    let train = train_set(&cfg);
    for mode in [Mode::Cps, Mode::PgpsEfficiency, Mode::PgpsPerformance, Mode::ProgressiveResolution] {
        for fraction in [1.0, 50.0, 100.0] {
            let policy = SamplingPolicy::for_mode(mode, 3);
            let out = run_training(&cfg, &train, &policy, 3, fraction).unwrap();
            let s = &out.schedule;
            assert_eq!(out.trace.records.len(), s.total_iterations(), "{mode} {fraction}");
            assert_eq!(out.trace.iterated_voxels, s.iterated_voxels(), "{mode} {fraction}");
            let summed: u128 = out.trace.records.iter().map(|r| r.tensor_voxels as u128).sum();
            assert_eq!(summed, s.iterated_voxels());
            assert_eq!(out.trace.epochs.len(), s.total_epochs());

            let tv: Vec<u64> = out.trace.records.iter().map(|r| r.tensor_voxels).collect();
            match mode {
                Mode::Cps => assert!(tv.iter().all(|&v| v == tv[0])),
                Mode::PgpsEfficiency => assert!(tv.windows(2).all(|w| w[0] <= w[1])),
                Mode::PgpsPerformance => assert!(tv.iter().all(|&v| v <= s.budget_voxels)),
                _ => {}
            }
            let stages: Vec<usize> = out.trace.records.iter().map(|r| r.stage_index).collect();
            assert!(stages.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

#[test]
fn training_is_identical_across_worker_counts() {
    let mut cfg = config();
    let train = train_set(&cfg);
    let mut reference = None;
    for workers in [1, 2, 4] {
        cfg.workers = workers;
        let policy = SamplingPolicy::for_mode(Mode::PgpsPerformance, 9);
        let out = run_training(&cfg, &train, &policy, 9, 100.0).unwrap();
        let rows = trace_rows(&out.trace, &out.schedule);
        let got = (out.net.params.clone(), rows);
        match &reference {
            None => reference = Some(got),
            Some(r) => assert_eq!(r, &got, "workers {workers}"),
        }
    }
}

fn strip_time(mut runs: Vec<RunResult>) -> Vec<RunResult> {
    for r in &mut runs {
        r.train_seconds = 0.0;
        r.virtual_relative_runtime = 0.0;
    }
    runs
}

#[test]
fn grid_is_independent_of_job_count_and_repeatable() {
    let mut cfg = config();
    cfg.policies.truncate(2);
    let seeds = cfg.repeat_seeds();
    let a = strip_time(run_grid(&cfg, &cfg.policies, &[100.0], &seeds).unwrap());
    cfg.jobs = 3;
    let b = strip_time(run_grid(&cfg, &cfg.policies, &[100.0], &seeds).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
    assert_eq!((a[0].policy, a[0].seed), (Mode::Cps, 11));
    assert_eq!((a[3].policy, a[3].seed), (Mode::PgpsEfficiency, 12));
}

/// Rebuilds table and curve numbers from the per-run traces with plain
/// arithmetic and compares them with the report code.
#[test]
fn report_matches_recomputation_from_traces() {
    let mut cfg = config();
    cfg.policies.truncate(3);
    let volumes = cfg.load_volumes().unwrap();
    let (train, _) = split_dataset(&cfg, &volumes).unwrap();
    let runs = run_grid(&cfg, &cfg.policies, &cfg.fractions, &cfg.repeat_seeds()).unwrap();
    assert_eq!(runs.len(), 3 * 2 * 2);

    for r in &runs {
        let policy = SamplingPolicy::for_mode(r.policy, r.seed);
        let out = run_training(&cfg, &train, &policy, r.seed, r.fraction).unwrap();
        let rows = trace_rows(&out.trace, &out.schedule);
        let voxels: u64 = rows.iter().map(|row| row.tensor_voxels).sum();
        let patch: u64 = cfg.target_patch.iter().map(|&v| v as u64).product();
        let cps_voxels = rows.len() as u64 * cfg.default_batch as u64 * patch;
        assert_eq!(rows.len(), r.iterations);
        assert_eq!(voxels, r.iterated_voxels);
        assert_eq!(voxels as f64 / cps_voxels as f64, r.relative_flops);
    }

    let table = table_rows(&runs);
    assert_eq!(table.len(), 6);
    for row in &table {
        let dice: Vec<f64> = runs
            .iter()
            .filter(|r| r.policy == row.policy && r.fraction == row.fraction)
            .map(|r| r.dice)
            .collect();
        let cps: Vec<f64> = runs
            .iter()
            .filter(|r| r.policy == Mode::Cps && r.fraction == row.fraction)
            .map(|r| r.dice)
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((row.dice - 100.0 * mean(&dice)).abs() < 1e-9);
        if mean(&cps) > 0.0 {
            let rel = 100.0 * (mean(&dice) - mean(&cps)) / mean(&cps);
            assert!((row.rel_dice.unwrap() - rel).abs() < 1e-9);
        }
    }

    let curve = normalized_curve(&runs);
    let best = curve.iter().map(|p| p.normalized).fold(f64::MIN, f64::max);
    if runs.iter().any(|r| r.dice > 0.0) {
        assert!((best - 1.0).abs() < 1e-12);
    }
}

fn injected(policy: Mode, fraction: f64, dice: &[f64]) -> Vec<RunResult> {
    dice.iter()
        .enumerate()
        .map(|(repeat, &d)| RunResult {
            task: "x".into(),
            policy,
            fraction,
            repeat,
            seed: repeat as u64,
            dice: d,
            iterations: 1,
            iterated_voxels: 1,
            relative_flops: 1.0,
            train_seconds: 0.0,
            virtual_relative_runtime: 1.0,
        })
        .collect()
}

#[test]
fn injected_outcomes_pass_through_the_variability_summary() {
    let a = [0.91, 0.92, 0.93, 0.94, 0.95];
    let b = [0.80, 0.85, 0.90, 0.81, 0.82];
    let c = [0.70, 0.71, 0.72, 0.73, 0.74];
    let mut runs = injected(Mode::Cps, 100.0, &a);
    runs.extend(injected(Mode::PgpsEfficiency, 100.0, &b));
    runs.extend(injected(Mode::PgpsPerformance, 100.0, &c));
    let tied = [0.5; 5];
    runs.extend(injected(Mode::Cps, 1.0, &tied));
    runs.extend(injected(Mode::PgpsEfficiency, 1.0, &tied));
    runs.extend(injected(Mode::PgpsPerformance, 1.0, &tied));

    let report = summarize_variability(runs);
    let full = report.triplets.iter().find(|t| t.fraction == 100.0).unwrap();
    assert_eq!(full.wins, [125, 0, 0]);
    assert_eq!(full.wins, triplet_win_counts(&a, &b, &c).wins);
    let flat = report.triplets.iter().find(|t| t.fraction == 1.0).unwrap();
    assert_eq!(flat.wins, [0, 0, 0]);

    let spread = report.spread.iter().find(|s| s.policy == Mode::PgpsPerformance && s.fraction == 100.0).unwrap();
    assert!((spread.mean - 0.72).abs() < 1e-12);
    assert!((spread.sd - 0.025f64.sqrt() / 10.0).abs() < 1e-12);
}

#[test]
fn scaled_schedule_uses_fewer_iterations_per_epoch() {
    let cfg = config();
    let p = SamplingPolicy::for_mode(Mode::PgpsEfficiency, 0);
    let full = run_schedule(&cfg, &p, 100.0).unwrap();
    let half = run_schedule(&cfg, &p, 50.0).unwrap();
    assert_eq!(full.total_epochs(), half.total_epochs());
    assert_eq!(2 * half.total_iterations(), full.total_iterations());
}
