//! Statistics for comparing sampling strategies: the paired Wilcoxon
//! signed-rank test, Spearman correlation, repeated-run triplet win counts,
//! normalized averages and the inter/intra-method spread ratio.

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng::{Domain, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: String,
}

/// Largest sample for which the Wilcoxon null is enumerated exactly.
pub const WILCOXON_EXACT_MAX_N: usize = 20;
pub const SPEARMAN_PERMUTATIONS: usize = 100_000;
const PERMUTATION_CHUNK: usize = 1_000;

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided paired Wilcoxon signed-rank test on differences.
///
/// Zero differences are dropped. With at most [`WILCOXON_EXACT_MAX_N`]
/// remaining differences the null distribution of the positive rank sum is
/// enumerated exactly (mid-ranks included); beyond that a normal
/// approximation with tie-corrected variance is used. The reported statistic
/// is `min(W+, W-)`.
pub fn wilcoxon_signed_rank(differences: &[f64]) -> Result<StatResult> {
    if differences.iter().any(|d| !d.is_finite()) {
        return Err(Error::Stats("non-finite difference".into()));
    }
    let nonzero: Vec<f64> = differences.iter().copied().filter(|&d| d != 0.0).collect();
    let dropped = differences.len() - nonzero.len();
    if dropped > 0 {
        info!("wilcoxon: dropped {dropped} zero differences");
    }
    let n = nonzero.len();
    if n < 5 {
        return Err(Error::Stats(format!("need at least 5 non-zero differences, got {n}")));
    }

    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    // doubled ranks are integers even with ties
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let w_plus2: usize = doubled.iter().zip(&nonzero).filter(|(_, &d)| d > 0.0).map(|(r, _)| r).sum();
    let total2: usize = doubled.iter().sum();
    let w_plus = w_plus2 as f64 / 2.0;
    let w_minus = (total2 - w_plus2) as f64 / 2.0;
    let statistic = w_plus.min(w_minus);

    let (p_value, method) = if n <= WILCOXON_EXACT_MAX_N {
        // counts[s] = sign assignments whose doubled positive rank sum is s
        let mut counts = vec![0u64; total2 + 1];
        counts[0] = 1;
        for &r in &doubled {
            for s in (r..=total2).rev() {
                counts[s] += counts[s - r];
            }
        }
        let all = (1u64 << n) as f64;
        let cdf = counts[..=w_plus2].iter().sum::<u64>() as f64 / all;
        let sf = counts[w_plus2..].iter().sum::<u64>() as f64 / all;
        ((2.0 * cdf.min(sf)).min(1.0), "wilcoxon-exact")
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < sorted.len() {
            let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
            let t = j as f64;
            tie_term += t * t * t - t;
            i += j;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let z = (w_plus - mean) / var.sqrt();
        (erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0), "wilcoxon-normal")
    };

    Ok(StatResult {
        statistic,
        p_value,
        n,
        method: method.into(),
    })
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation with a two-sided p-value.
///
/// For n ≤ 20 the p-value comes from [`SPEARMAN_PERMUTATIONS`] seeded random
/// permutations, `(hits + 1) / (permutations + 1)`; larger samples use the
/// Student-t approximation.
pub fn spearman(x: &[f64], y: &[f64], seed: u64) -> Result<StatResult> {
    if x.len() != y.len() {
        return Err(Error::Stats(format!("length mismatch {} vs {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Stats(format!("need at least 3 pairs, got {n}")));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let rho = pearson(&rx, &ry).ok_or_else(|| Error::Stats("constant input: correlation undefined".into()))?;

    let (p_value, method) = if n <= 20 {
        let threshold = rho.abs() - 1e-12;
        let chunks = SPEARMAN_PERMUTATIONS / PERMUTATION_CHUNK;
        let hits: usize = (0..chunks)
            .into_par_iter()
            .map(|chunk| {
                let mut rng = RngStream::new(seed, Domain::Permutation, [chunk as u64, 0, 0]);
                let mut perm = ry.clone();
                let mut hits = 0;
                for _ in 0..PERMUTATION_CHUNK {
                    for i in (1..n).rev() {
                        perm.swap(i, rng.below(i + 1));
                    }
                    if pearson(&rx, &perm).is_some_and(|r| r.abs() >= threshold) {
                        hits += 1;
                    }
                }
                hits
            })
            .sum();
        (
            (hits + 1) as f64 / (SPEARMAN_PERMUTATIONS + 1) as f64,
            "spearman-permutation",
        )
    } else {
        let df = (n - 2) as f64;
        let p = if rho.abs() >= 1.0 {
            0.0
        } else {
            let t = rho * (df / (1.0 - rho * rho)).sqrt();
            let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Stats(e.to_string()))?;
            2.0 * dist.sf(t.abs())
        };
        (p, "spearman-t")
    };

    Ok(StatResult {
        statistic: rho,
        p_value,
        n,
        method: method.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletWins {
    /// Wins of strategy a, b, c.
    pub wins: [usize; 3],
    pub combinations: usize,
}

/// For every combination of one outcome per strategy, credit the strategy
/// strictly above both others; combinations without a strict maximum score
/// nobody.
pub fn triplet_win_counts(a: &[f64], b: &[f64], c: &[f64]) -> TripletWins {
    let mut wins = [0usize; 3];
    for &x in a {
        for &y in b {
            for &z in c {
                if x > y && x > z {
                    wins[0] += 1;
                } else if y > x && y > z {
                    wins[1] += 1;
                } else if z > x && z > y {
                    wins[2] += 1;
                }
            }
        }
    }
    TripletWins {
        wins,
        combinations: a.len() * b.len() * c.len(),
    }
}

/// Per-strategy mean over datasets of `value / reference value × 100`.
/// `table[d][s]` is the score of strategy `s` on dataset `d`.
pub fn normalized_average(table: &[Vec<f64>], reference: usize) -> Result<Vec<f64>> {
    let strategies = table.first().map(Vec::len).ok_or_else(|| Error::Stats("empty table".into()))?;
    if reference >= strategies || table.iter().any(|row| row.len() != strategies) {
        return Err(Error::Stats("ragged table or reference out of range".into()));
    }
    let mut sums = vec![0.0; strategies];
    for row in table {
        if row[reference] == 0.0 {
            return Err(Error::Stats("reference score is zero".into()));
        }
        for (s, v) in row.iter().enumerate() {
            sums[s] += v / row[reference] * 100.0;
        }
    }
    Ok(sums.into_iter().map(|s| s / table.len() as f64).collect())
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterIntra {
    pub intra_sds: Vec<f64>,
    pub avg_intra: f64,
    pub inter_sd: f64,
    /// `inter_sd / avg_intra`, as a fraction.
    pub ratio: f64,
}

/// Spread of method differences relative to run-to-run spread.
///
/// `scores[m][f]` is method `m` on fold (or repeat) `f`. Intra SD is the
/// sample SD over folds per method; inter SD is the sample SD over methods
/// within a fold, averaged over folds.
pub fn inter_intra_ratio(scores: &[Vec<f64>]) -> Result<InterIntra> {
    let methods = scores.len();
    let folds = scores.first().map(Vec::len).unwrap_or(0);
    if methods < 2 || folds < 2 || scores.iter().any(|r| r.len() != folds) {
        return Err(Error::Stats("need a rectangular matrix of at least 2 methods × 2 folds".into()));
    }
    let intra_sds: Vec<f64> = scores.iter().map(|r| sample_sd(r)).collect();
    let inter_sd = (0..folds)
        .map(|f| sample_sd(&scores.iter().map(|r| r[f]).collect::<Vec<_>>()))
        .sum::<f64>()
        / folds as f64;
    Ok(ratio_from_summary(&intra_sds, inter_sd))
}

/// Ratio from already-summarized SDs.
pub fn ratio_from_summary(intra_sds: &[f64], inter_sd: f64) -> InterIntra {
    let avg_intra = intra_sds.iter().sum::<f64>() / intra_sds.len() as f64;
    InterIntra {
        intra_sds: intra_sds.to_vec(),
        avg_intra,
        inter_sd,
        ratio: if avg_intra > 0.0 { inter_sd / avg_intra } else { 0.0 },
    }
}
