use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use pgps_core::io::{load_dataset, save_dataset};
use pgps_core::metrics::virtual_relative_runtime;
use pgps_core::schedule::{build_schedule, ArchConstraints, AxisPolicy, Mode, SamplingPolicy};
use pgps_core::synth::{generate, SynthSpec};
use pgps_core::{Shape3, Volume};
use pgps_harness::config::zscore;
use pgps_harness::eval::{evaluate, mean_dice};
use pgps_harness::report::{
    curve_svg, read_runs_csv, table_rows, write_curve_csv, write_dice_csv, write_epochs_csv, write_json,
    write_runs_csv, write_stage_stats_csv, write_table_csv, write_text, write_trace_csv,
};
use pgps_harness::sample_stats::{probe_stages, sample_stats};
use pgps_harness::suites::{normalized_curve, split_dataset};
use pgps_harness::train::run_schedule;
use pgps_harness::{run_convergence_suite, run_training, run_variability_suite, Error, ExperimentConfig, PolicySpec, Result};
use pgps_segnet::checkpoint;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "pgps", version, about = "Patch-size curriculum experiments on 3D segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the stage schedule of a policy as JSON.
    Plan(PlanArgs),
    /// Generate a synthetic dataset from a JSON spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-stage batch statistics without training.
    SampleStats(SampleStatsArgs),
    /// Train one run per selected policy and write checkpoint and traces.
    Train(TrainArgs),
    /// Sliding-window Dice of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Policy x fraction x repeat grid over one or more task configs.
    Convergence {
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        #[command(flatten)]
        over: Overrides,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeated runs on one fold: spread and triplet wins.
    Variability {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        over: Overrides,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tables and plot from one or more runs.csv files.
    Report {
        #[arg(long = "runs", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_shape(s: &str) -> std::result::Result<Shape3, String> {
    let parts: Vec<usize> = s
        .split([',', 'x'])
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok([a, b, c]),
        [a] => Ok([a; 3]),
        _ => Err(format!("expected 3 sizes, got {s:?}")),
    }
}

fn parse_pools(s: &str) -> std::result::Result<[u32; 3], String> {
    parse_shape(s).map(|[a, b, c]| [a as u32, b as u32, c as u32])
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long, default_value = "pgps-efficiency")]
    mode: Mode,
    #[arg(long, value_parser = parse_pools)]
    pools: [u32; 3],
    #[arg(long, value_parser = parse_shape)]
    target: Shape3,
    #[arg(long, default_value_t = 2)]
    default_batch: usize,
    #[arg(long, default_value_t = 1000)]
    total_epochs: usize,
    #[arg(long, default_value_t = 250)]
    iterations_per_epoch: usize,
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleStatsArgs {
    #[arg(long)]
    config: PathBuf,
    /// Policies to sample (default: all in the config).
    #[arg(long = "policy")]
    policies: Vec<Mode>,
    #[arg(long, default_value_t = 1000)]
    batches: usize,
    /// Stage indices (default: smallest, middle and largest stage).
    #[arg(long, value_delimiter = ',')]
    stages: Vec<usize>,
    #[arg(long)]
    all_stages: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Flag overrides applied on top of the JSON config.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long = "fractions", value_delimiter = ',')]
    fractions: Vec<f64>,
    #[arg(long = "policies", value_delimiter = ',')]
    policies: Vec<Mode>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
        if let Some(v) = self.fold {
            cfg.fold = v;
        }
        if let Some(v) = self.repeats {
            cfg.repeats = v;
        }
        if !self.fractions.is_empty() {
            cfg.fractions = self.fractions.clone();
        }
        if !self.policies.is_empty() {
            cfg.policies = self.policies.iter().map(|&m| PolicySpec::Mode(m)).collect();
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = Some(v.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Train only this policy (default: every policy in the config).
    #[arg(long)]
    policy: Option<Mode>,
    #[arg(long, default_value_t = 100.0)]
    fraction: f64,
    /// Skip held-out evaluation after training.
    #[arg(long)]
    no_eval: bool,
    #[command(flatten)]
    over: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory; every volume is evaluated.
    #[arg(long, conflicts_with = "config")]
    dataset: Option<PathBuf>,
    /// Evaluate on the held-out split of this config instead.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_shape)]
    window: Option<Shape3>,
    /// Z-score images loaded with --dataset.
    #[arg(long)]
    zscore: bool,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Plan(a) => plan(a),
        Command::Synth { spec, out } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| Error::Io { path: spec.clone(), source: e })?;
            let spec: SynthSpec = serde_json::from_str(&text)?;
            let volumes = generate(&spec)?;
            let manifest = save_dataset(&volumes, &out)?;
            info!("wrote {} volumes to {}", manifest.files.len(), out.display());
            Ok(())
        }
        Command::SampleStats(a) => sample_stats_cmd(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Convergence { configs, over, out } => {
            let configs = configs
                .iter()
                .map(|p| over.apply(ExperimentConfig::load(p)?))
                .collect::<Result<Vec<_>>>()?;
            let dir = out.unwrap_or_else(|| configs[0].resolved_output_dir().join("convergence"));
            let report = run_convergence_suite(&configs)?;
            write_runs_csv(&report.runs, dir.join("runs.csv"))?;
            write_outputs(&report.runs, &dir)?;
            write_json(&report, dir.join("convergence.json"))
        }
        Command::Variability { config, over, out } => {
            let cfg = over.apply(ExperimentConfig::load(&config)?)?;
            let dir = out.unwrap_or_else(|| cfg.resolved_output_dir().join("variability"));
            let report = run_variability_suite(&cfg)?;
            write_runs_csv(&report.runs, dir.join("runs.csv"))?;
            write_json(&report, dir.join("variability.json"))?;
            for s in &report.spread {
                println!("{:<24} {:>5}%  {:.4} ± {:.4} (n={})", s.policy, s.fraction, s.mean, s.sd, s.runs);
            }
            for t in &report.triplets {
                println!("{:>5}%  wins {:?} = {:?} of {}", t.fraction, t.policies, t.wins, t.combinations);
            }
            Ok(())
        }
        Command::Report { runs, out } => {
            let mut all = Vec::new();
            for p in &runs {
                all.extend(read_runs_csv(p)?);
            }
            write_outputs(&all, &out)
        }
    }
}

fn plan(a: PlanArgs) -> Result<()> {
    let mut policy = SamplingPolicy::for_mode(a.mode, 0);
    if a.sequential {
        policy.axis_policy = AxisPolicy::Sequential;
    }
    let schedule = build_schedule(
        &policy,
        &ArchConstraints::new(a.pools),
        a.target,
        a.default_batch,
        a.total_epochs,
        a.iterations_per_epoch,
    )?;
    let text = schedule.to_json()?;
    match a.out {
        Some(p) => write_text(&(text + "\n"), p),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn sample_stats_cmd(a: SampleStatsArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let volumes = cfg.load_volumes()?;
    let (train, _) = split_dataset(&cfg, &volumes)?;
    let modes: Vec<Mode> = if a.policies.is_empty() {
        cfg.policies.iter().map(PolicySpec::mode).collect()
    } else {
        a.policies
    };
    let mut rows = Vec::new();
    for mode in modes {
        let spec = cfg
            .policies
            .iter()
            .find(|p| p.mode() == mode)
            .cloned()
            .unwrap_or(PolicySpec::Mode(mode));
        let policy = spec.resolve(cfg.seed);
        let schedule = run_schedule(&cfg, &policy, 100.0)?;
        let stages = if a.all_stages {
            Vec::new()
        } else if a.stages.is_empty() {
            probe_stages(&schedule)
        } else {
            a.stages.clone()
        };
        rows.extend(sample_stats(&train, &policy, &schedule, &stages, a.batches, cfg.workers)?);
    }
    let out = a.out.unwrap_or_else(|| cfg.resolved_output_dir().join("sample_stats.csv"));
    write_stage_stats_csv(&rows, &out)?;
    info!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    task: String,
    policy: Mode,
    fraction: f64,
    seed: u64,
    workers: usize,
    stages: usize,
    iterations: usize,
    iterated_voxels: u64,
    schedule_iterated_voxels: u64,
    relative_flops: f64,
    final_loss: Option<f64>,
    held_out_dice: Option<f64>,
    train_seconds: f64,
    virtual_relative_runtime: f64,
}

fn run_dir_name(mode: Mode, fraction: f64, seed: u64) -> String {
    format!("{mode}_f{fraction}_s{seed}")
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.over.apply(ExperimentConfig::load(&a.config)?)?;
    if let Some(m) = a.policy {
        let spec = cfg.policies.iter().find(|p| p.mode() == m).cloned().unwrap_or(PolicySpec::Mode(m));
        cfg.policies = vec![spec];
    }
    let volumes = cfg.load_volumes()?;
    let (train, held_out) = split_dataset(&cfg, &volumes)?;
    let root = cfg.resolved_output_dir();
    let seed = cfg.seed;
    for spec in &cfg.policies {
        let policy = spec.resolve(seed);
        let outcome = run_training(&cfg, &train, &policy, seed, a.fraction)?;
        let dir = root.join(run_dir_name(policy.mode, a.fraction, seed));
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        checkpoint::save(&outcome.net, dir.join("checkpoint.segn"))?;
        write_trace_csv(&outcome.trace, &outcome.schedule, dir.join("trace.csv"))?;
        write_epochs_csv(&outcome.trace, dir.join("epochs.csv"))?;
        write_text(&(outcome.schedule.to_json()? + "\n"), dir.join("schedule.json"))?;
        let held_out_dice = if a.no_eval {
            None
        } else {
            let set: Vec<(usize, &Volume)> = held_out.iter().map(|&i| (i, &volumes[i])).collect();
            let scores = evaluate(&outcome.net, &set, cfg.target_patch)?;
            write_dice_csv(&scores, dir.join("dice.csv"))?;
            Some(mean_dice(&scores))
        };
        let reference = run_schedule(&cfg, &SamplingPolicy::for_mode(Mode::Cps, seed), a.fraction)?;
        let summary = TrainSummary {
            task: cfg.name.clone(),
            policy: policy.mode,
            fraction: a.fraction,
            seed,
            workers: cfg.workers,
            stages: outcome.schedule.stages.len(),
            iterations: outcome.trace.records.len(),
            iterated_voxels: outcome.trace.iterated_voxels as u64,
            schedule_iterated_voxels: outcome.schedule.iterated_voxels() as u64,
            relative_flops: outcome.trace.iterated_voxels as f64 / reference.iterated_voxels() as f64,
            final_loss: outcome.trace.records.last().map(|r| r.loss),
            held_out_dice,
            train_seconds: outcome.trace.total_seconds(),
            virtual_relative_runtime: virtual_relative_runtime(&outcome.trace, &outcome.schedule)?,
        };
        write_json(&summary, dir.join("summary.json"))?;
        info!("{} written to {}", policy.mode, dir.display());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let net = checkpoint::load(&a.checkpoint)?;
    let (volumes, indices, default_window) = match (&a.dataset, &a.config) {
        (Some(dir), None) => {
            let mut v = load_dataset(dir)?;
            if a.zscore {
                v.iter_mut().for_each(zscore);
            }
            let idx = (0..v.len()).collect::<Vec<_>>();
            (v, idx, None)
        }
        (None, Some(path)) => {
            let cfg = ExperimentConfig::load(path)?;
            let v = cfg.load_volumes()?;
            let (_, held_out) = split_dataset(&cfg, &v)?;
            (v, held_out, Some(cfg.target_patch))
        }
        _ => return Err(Error::Config("eval needs --dataset or --config".into())),
    };
    let window = a
        .window
        .or(default_window)
        .ok_or_else(|| Error::Config("--window is required with --dataset".into()))?;
    let set: Vec<(usize, &Volume)> = indices.iter().map(|&i| (i, &volumes[i])).collect();
    let scores = evaluate(&net, &set, window)?;
    write_dice_csv(&scores, &a.out)?;
    println!("mean dice {:.4} over {} volumes", mean_dice(&scores), scores.len());
    Ok(())
}

fn write_outputs(runs: &[pgps_harness::RunResult], dir: &Path) -> Result<()> {
    let table = table_rows(runs);
    write_table_csv(&table, dir.join("table.csv"))?;
    write_json(&table, dir.join("table.json"))?;
    let curve = normalized_curve(runs);
    write_curve_csv(&curve, dir.join("curve.csv"))?;
    write_text(&curve_svg(&curve), dir.join("curve.svg"))?;
    for r in &table {
        let rel = r.rel_dice.map_or("-".to_string(), |v| format!("{v:+.2}%"));
        println!(
            "{:<12} {:<24} {:>5}%  dice {:6.2}  rel {:>8}  flops {:.3}",
            r.task, r.policy, r.fraction, r.dice, rel, r.relative_flops
        );
    }
    info!("report written to {}", dir.display());
    Ok(())
}
