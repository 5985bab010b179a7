//! CSV, JSON and SVG outputs.

use std::fmt::Write as _;
use std::path::Path;

use pgps_core::metrics::{median, RunTrace};
use pgps_core::schedule::{CurriculumSchedule, Mode};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::VolumeDice;
use crate::suites::{CurvePoint, RunResult};

fn create(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_text(text: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub stage: usize,
    pub patch: String,
    pub batch: usize,
    pub tensor_voxels: u64,
    pub fg_voxel_fraction: f64,
    pub unique_class_fraction: f64,
    pub loss: f64,
}

pub fn trace_rows(trace: &RunTrace, schedule: &CurriculumSchedule) -> Vec<TraceRow> {
    trace
        .records
        .iter()
        .enumerate()
        .map(|(iteration, r)| {
            let stage = &schedule.stages[r.stage_index];
            let [a, b, c] = stage.patch_size;
            TraceRow {
                iteration,
                stage: r.stage_index,
                patch: format!("{a}x{b}x{c}"),
                batch: stage.batch_size,
                tensor_voxels: r.tensor_voxels,
                fg_voxel_fraction: r.fg_voxel_fraction,
                unique_class_fraction: r.unique_class_fraction,
                loss: r.loss,
            }
        })
        .collect()
}

/// Per-iteration trace; every column is deterministic.
pub fn write_trace_csv(trace: &RunTrace, schedule: &CurriculumSchedule, path: impl AsRef<Path>) -> Result<()> {
    write_rows(&trace_rows(trace, schedule), path.as_ref())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EpochRow {
    epoch: usize,
    stage: usize,
    seconds: f64,
}

/// Wall time per epoch (the only non-deterministic output of a run).
pub fn write_epochs_csv(trace: &RunTrace, path: impl AsRef<Path>) -> Result<()> {
    let rows: Vec<EpochRow> = trace
        .epochs
        .iter()
        .enumerate()
        .map(|(epoch, e)| EpochRow {
            epoch,
            stage: e.stage_index,
            seconds: e.seconds,
        })
        .collect();
    write_rows(&rows, path.as_ref())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DiceRow {
    volume: usize,
    dice: Option<f64>,
}

pub fn write_dice_csv(scores: &[VolumeDice], path: impl AsRef<Path>) -> Result<()> {
    let rows: Vec<DiceRow> = scores
        .iter()
        .map(|s| DiceRow {
            volume: s.index,
            dice: s.dice,
        })
        .collect();
    write_rows(&rows, path.as_ref())
}

pub fn write_runs_csv(runs: &[RunResult], path: impl AsRef<Path>) -> Result<()> {
    write_rows(runs, path.as_ref())
}

pub fn read_runs_csv(path: impl AsRef<Path>) -> Result<Vec<RunResult>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_stage_stats_csv(rows: &[crate::sample_stats::StageStats], path: impl AsRef<Path>) -> Result<()> {
    write_rows(rows, path.as_ref())
}

pub fn write_curve_csv(curve: &[CurvePoint], path: impl AsRef<Path>) -> Result<()> {
    write_rows(curve, path.as_ref())
}

/// One line per (task, policy, fraction) in the style of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub task: String,
    pub policy: Mode,
    pub fraction: f64,
    pub runs: usize,
    /// Mean held-out Dice, in percent.
    pub dice: f64,
    /// Percent change of the mean Dice against the constant-patch row of the
    /// same task and fraction.
    pub rel_dice: Option<f64>,
    pub relative_flops: f64,
    /// Median over runs.
    pub virtual_relative_runtime: Option<f64>,
}

pub fn table_rows(runs: &[RunResult]) -> Vec<TableRow> {
    let mut keys: Vec<(String, Mode, f64)> = Vec::new();
    for r in runs {
        let key = (r.task.clone(), r.policy, r.fraction);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mean_of = |task: &str, policy: Mode, fraction: f64| -> Option<(usize, f64, f64, Option<f64>)> {
        let sel: Vec<&RunResult> = runs
            .iter()
            .filter(|r| r.task == task && r.policy == policy && r.fraction == fraction)
            .collect();
        if sel.is_empty() {
            return None;
        }
        let n = sel.len() as f64;
        let runtimes: Vec<f64> = sel.iter().map(|r| r.virtual_relative_runtime).collect();
        Some((
            sel.len(),
            100.0 * sel.iter().map(|r| r.dice).sum::<f64>() / n,
            sel.iter().map(|r| r.relative_flops).sum::<f64>() / n,
            median(&runtimes),
        ))
    };
    keys.into_iter()
        .filter_map(|(task, policy, fraction)| {
            let (count, dice, flops, runtime) = mean_of(&task, policy, fraction)?;
            let rel_dice = mean_of(&task, Mode::Cps, fraction)
                .filter(|c| c.1 > 0.0)
                .map(|c| 100.0 * (dice - c.1) / c.1);
            Some(TableRow {
                task,
                policy,
                fraction,
                runs: count,
                dice,
                rel_dice,
                relative_flops: flops,
                virtual_relative_runtime: runtime,
            })
        })
        .collect()
}

pub fn write_table_csv(rows: &[TableRow], path: impl AsRef<Path>) -> Result<()> {
    write_rows(rows, path.as_ref())
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Normalized performance against training length (log-scaled x axis), one
/// polyline per policy.
pub fn curve_svg(curve: &[CurvePoint]) -> String {
    let (w, h, m) = (480.0, 320.0, 48.0);
    let x_of = |f: f64| m + (f.max(1.0).log10() / 2.0) * (w - 2.0 * m);
    let lo = curve.iter().map(|p| p.normalized).fold(1.0f64, f64::min).min(0.0);
    let y_of = |v: f64| h - m - (v - lo) / (1.0 - lo).max(1e-9) * (h - 2.0 * m);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{m}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{0}" stroke="black"/>"#,
        h - m,
        w - m
    );
    for f in [1.0, 10.0, 25.0, 50.0, 100.0] {
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{f}%</text>"#, x_of(f), h - m + 16.0);
    }
    for v in [lo, 1.0] {
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, m - 6.0, y_of(v) + 4.0);
    }
    let mut policies: Vec<Mode> = Vec::new();
    for p in curve {
        if !policies.contains(&p.policy) {
            policies.push(p.policy);
        }
    }
    for (i, policy) in policies.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut pts: Vec<&CurvePoint> = curve.iter().filter(|p| p.policy == *policy).collect();
        pts.sort_by(|a, b| a.fraction.total_cmp(&b.fraction));
        let coords: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.1},{:.1}", x_of(p.fraction), y_of(p.normalized)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{policy}</text>"#,
            w - m - 120.0,
            m + 14.0 * i as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}
