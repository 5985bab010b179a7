//! Training traces, batch class-balance measures, Dice and cost ratios.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::PatchBatch;
use crate::schedule::CurriculumSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub stage_index: usize,
    pub fg_voxel_fraction: f64,
    pub unique_class_fraction: f64,
    pub tensor_voxels: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTiming {
    pub stage_index: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub epochs: Vec<EpochTiming>,
    pub iterated_voxels: u128,
}

impl RunTrace {
    pub fn push(&mut self, record: IterationRecord) {
        self.iterated_voxels += record.tensor_voxels as u128;
        self.records.push(record);
    }

    pub fn total_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.seconds).sum()
    }
}

/// Share of batch voxels carrying a foreground label.
pub fn fg_voxel_fraction(batch: &PatchBatch) -> f64 {
    let (fg, total) = batch.patches.iter().fold((0usize, 0usize), |(fg, total), p| {
        (fg + p.labels.iter().filter(|&&l| l != 0).count(), total + p.labels.len())
    });
    if total == 0 {
        0.0
    } else {
        fg as f64 / total as f64
    }
}

/// Distinct label ids in the batch (background included) over `num_classes`.
pub fn unique_class_fraction(batch: &PatchBatch, num_classes: u16) -> f64 {
    let mut seen = vec![false; num_classes as usize];
    for p in &batch.patches {
        for &l in &p.labels {
            seen[l as usize] = true;
        }
    }
    seen.iter().filter(|&&s| s).count() as f64 / num_classes as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceScore {
    /// Mean over foreground classes present in prediction or truth; `None`
    /// when every class is empty in both.
    pub mean: Option<f64>,
    /// Per foreground class (index 0 = class 1); `None` = excluded.
    pub per_class: Vec<Option<f64>>,
}

pub fn mean_fg_dice(pred: &[u16], truth: &[u16], num_classes: u16) -> Result<DiceScore> {
    if pred.len() != truth.len() {
        return Err(Error::PayloadLength {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    let k = num_classes as usize;
    let mut inter = vec![0usize; k];
    let mut p_count = vec![0usize; k];
    let mut t_count = vec![0usize; k];
    for (&p, &t) in pred.iter().zip(truth) {
        p_count[p as usize] += 1;
        t_count[t as usize] += 1;
        if p == t {
            inter[p as usize] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = (1..k)
        .map(|c| {
            let denom = p_count[c] + t_count[c];
            (denom > 0).then(|| 2.0 * inter[c] as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    Ok(DiceScore { mean, per_class })
}

/// Actual wall time over a virtual constant-patch wall time, where one
/// constant-patch epoch costs the mean of the final-stage epochs.
pub fn virtual_relative_runtime(trace: &RunTrace, schedule: &CurriculumSchedule) -> Result<f64> {
    let last = schedule
        .stages
        .len()
        .checked_sub(1)
        .ok_or_else(|| Error::Stats("empty schedule".into()))?;
    let finals: Vec<f64> = trace
        .epochs
        .iter()
        .filter(|e| e.stage_index == last)
        .map(|e| e.seconds)
        .collect();
    if finals.is_empty() {
        return Err(Error::Stats("trace has no epoch at the maximal patch size".into()));
    }
    let per_epoch = finals.iter().sum::<f64>() / finals.len() as f64;
    let virtual_total = per_epoch * trace.epochs.len() as f64;
    Ok(trace.total_seconds() / virtual_total)
}

pub fn relative_flops(trace: &RunTrace, reference: &RunTrace) -> Result<f64> {
    if reference.iterated_voxels == 0 {
        return Err(Error::Stats("reference trace iterated no voxels".into()));
    }
    Ok(trace.iterated_voxels as f64 / reference.iterated_voxels as f64)
}

/// Median used to aggregate runtimes over folds or repeats.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_schedule, ArchConstraints, Mode, SamplingPolicy};
    use crate::volume::{Patch, PatchKind};

    fn patch(labels: Vec<u16>) -> Patch {
        Patch {
            size: [labels.len(), 1, 1],
            origin: [0; 3],
            image: vec![0.0; labels.len()],
            labels,
            patient_id: 0,
            kind: PatchKind::Random,
        }
    }

    fn batch(patches: Vec<Patch>) -> PatchBatch {
        PatchBatch {
            tensor_voxels: patches.iter().map(|p| p.labels.len() as u64).sum(),
            patches,
            stage_index: 0,
            fg_requested: 0,
        }
    }

    #[test]
    fn fg_fraction_examples() {
        assert_eq!(fg_voxel_fraction(&batch(vec![patch(vec![0, 0, 0])])), 0.0);
        assert_eq!(fg_voxel_fraction(&batch(vec![patch(vec![1]), patch(vec![0])])), 0.5);
        let b = batch(vec![patch(vec![0, 2, 1, 0]), patch(vec![0, 0, 0, 3, 3])]);
        assert_eq!(fg_voxel_fraction(&b), 4.0 / 9.0);
    }

    #[test]
    fn unique_fraction_examples() {
        assert_eq!(unique_class_fraction(&batch(vec![patch(vec![0, 1, 2, 3])]), 4), 1.0);
        assert_eq!(unique_class_fraction(&batch(vec![patch(vec![0; 5])]), 4), 0.25);
    }

    #[test]
    fn unique_fraction_fourteen_classes() {
        // a small batch covering ids 0..=10 and a large batch covering all 14
        let small = batch(vec![patch((0..=10).collect()), patch(vec![0, 3, 5])]);
        let large = batch((0..14).map(|c| patch(vec![0, c])).collect());
        let count = |b: &PatchBatch| {
            let mut ids: Vec<u16> = b.patches.iter().flat_map(|p| p.labels.clone()).collect();
            ids.sort();
            ids.dedup();
            ids.len() as f64 / 14.0
        };
        assert_eq!(unique_class_fraction(&small, 14), count(&small));
        assert!((unique_class_fraction(&small, 14) - 11.0 / 14.0).abs() < 1e-12);
        assert_eq!(unique_class_fraction(&large, 14), 1.0);
        assert!(unique_class_fraction(&large, 14) > unique_class_fraction(&small, 14));
    }

    #[test]
    fn dice_examples() {
        let t = vec![0, 1, 1, 2, 2, 0];
        assert_eq!(mean_fg_dice(&t, &t, 3).unwrap().mean, Some(1.0));
        let disjoint = mean_fg_dice(&[1, 1, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(disjoint.mean, Some(0.0));
        // |P| = |T| = 4, overlap 2
        let p = vec![1, 1, 1, 1, 0, 0, 0, 0];
        let t = vec![0, 0, 1, 1, 1, 1, 0, 0];
        assert_eq!(mean_fg_dice(&p, &t, 2).unwrap().mean, Some(0.5));
    }

    #[test]
    fn dice_excludes_doubly_empty_classes() {
        let d = mean_fg_dice(&[0, 1, 1], &[0, 1, 0], 4).unwrap();
        assert_eq!(d.per_class, vec![Some(2.0 / 3.0), None, None]);
        assert_eq!(d.mean, Some(2.0 / 3.0));
        assert_eq!(mean_fg_dice(&[0, 0], &[0, 0], 3).unwrap().mean, None);
    }

    fn timed(stages: &[(usize, f64)]) -> RunTrace {
        RunTrace {
            epochs: stages
                .iter()
                .map(|&(stage_index, seconds)| EpochTiming { stage_index, seconds })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn runtime_examples() {
        let arch = ArchConstraints::new([1, 1, 1]);
        let cps = build_schedule(&SamplingPolicy::for_mode(Mode::Cps, 0), &arch, [4, 2, 2], 2, 3, 1).unwrap();
        assert_eq!(virtual_relative_runtime(&timed(&[(0, 2.0), (0, 2.0), (0, 2.0)]), &cps).unwrap(), 1.0);
        let t = timed(&[(0, 1.5), (0, 2.5), (0, 2.0)]);
        assert!((virtual_relative_runtime(&t, &cps).unwrap() - 1.0).abs() < 1e-15);

        let eff = build_schedule(&SamplingPolicy::for_mode(Mode::PgpsEfficiency, 0), &arch, [4, 2, 2], 2, 2, 1).unwrap();
        assert_eq!(virtual_relative_runtime(&timed(&[(0, 1.0), (1, 4.0)]), &eff).unwrap(), 0.625);
        assert!(virtual_relative_runtime(&timed(&[(0, 1.0)]), &eff).is_err());
    }

    #[test]
    fn flops_ratio() {
        let mut a = RunTrace::default();
        let rec = |v| IterationRecord {
            stage_index: 0,
            fg_voxel_fraction: 0.0,
            unique_class_fraction: 0.0,
            tensor_voxels: v,
            loss: 0.0,
        };
        a.push(rec(10));
        a.push(rec(30));
        let mut b = RunTrace::default();
        b.push(rec(40));
        b.push(rec(40));
        assert_eq!(a.iterated_voxels, 40);
        assert_eq!(relative_flops(&a, &a).unwrap(), 1.0);
        assert_eq!(relative_flops(&a, &b).unwrap(), 0.5);
        assert!(relative_flops(&a, &RunTrace::default()).is_err());
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
