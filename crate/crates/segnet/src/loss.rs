//! Cross-entropy plus soft Dice, with the gradient taken by hand.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smoothing added to numerator and denominator of each soft Dice ratio.
pub const DICE_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub cross_entropy: f64,
    /// `1 - mean soft Dice`, zero when the batch labels hold no foreground.
    pub dice_term: f64,
    pub grad: Tensor,
}

/// Per-voxel softmax over the channel axis.
pub fn softmax(logits: &Tensor) -> Tensor {
    let v = logits.spatial();
    let k = logits.c;
    let mut out = Tensor::zeros(logits.n, k, logits.dims);
    for b in 0..logits.n {
        let base = b * k * v;
        for i in 0..v {
            let max = (0..k).map(|c| logits.data[base + c * v + i]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..k {
                let e = (logits.data[base + c * v + i] - max).exp();
                out.data[base + c * v + i] = e;
                sum += e;
            }
            for c in 0..k {
                out.data[base + c * v + i] /= sum;
            }
        }
    }
    out
}

/// Mean voxel cross-entropy plus `1 - soft Dice` averaged over the foreground
/// classes that occur in `labels`. Dice sums run over the whole batch.
///
/// `labels` is laid out `[sample, voxel]` to match the logits.
pub fn loss_dice_ce(logits: &Tensor, labels: &[u16]) -> Result<LossOutput> {
    let v = logits.spatial();
    let k = logits.c;
    let voxels = logits.n * v;
    if labels.len() != voxels {
        return Err(Error::Shape(format!("{} labels for {} voxels", labels.len(), voxels)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::Shape(format!("label {bad} with {k} classes")));
    }
    let probs = softmax(logits);
    let at = |b: usize, c: usize, i: usize| (b * k + c) * v + i;

    let mut ce = 0.0;
    for b in 0..logits.n {
        for i in 0..v {
            let y = labels[b * v + i] as usize;
            // log-softmax straight from the logits keeps CE finite for large margins
            let max = (0..k).map(|c| logits.data[at(b, c, i)]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..k).map(|c| (logits.data[at(b, c, i)] - max).exp()).sum::<f64>().ln();
            ce += lse - logits.data[at(b, y, i)];
        }
    }
    ce /= voxels as f64;

    // soft Dice statistics per class
    let mut inter = vec![0.0; k];
    let mut mass = vec![0.0; k];
    let mut count = vec![0usize; k];
    for b in 0..logits.n {
        for i in 0..v {
            let y = labels[b * v + i] as usize;
            count[y] += 1;
            inter[y] += probs.data[at(b, y, i)];
            for (c, m) in mass.iter_mut().enumerate() {
                *m += probs.data[at(b, c, i)];
            }
        }
    }
    let present: Vec<usize> = (1..k).filter(|&c| count[c] > 0).collect();
    let dice_term = if present.is_empty() {
        0.0
    } else {
        let mean: f64 = present
            .iter()
            .map(|&c| (2.0 * inter[c] + DICE_EPS) / (mass[c] + count[c] as f64 + DICE_EPS))
            .sum::<f64>()
            / present.len() as f64;
        1.0 - mean
    };

    // dL/dp for the Dice part, then through the softmax Jacobian
    let m = present.len() as f64;
    let mut grad = Tensor::zeros(logits.n, k, logits.dims);
    let mut g_p = vec![0.0; k];
    for b in 0..logits.n {
        for i in 0..v {
            let y = labels[b * v + i] as usize;
            g_p.fill(0.0);
            for &c in &present {
                let denom = mass[c] + count[c] as f64 + DICE_EPS;
                let num = 2.0 * inter[c] + DICE_EPS;
                let onehot = if y == c { 2.0 } else { 0.0 };
                g_p[c] = -(onehot * denom - num) / (denom * denom) / m;
            }
            let dot: f64 = (0..k).map(|c| probs.data[at(b, c, i)] * g_p[c]).sum();
            for c in 0..k {
                let p = probs.data[at(b, c, i)];
                let ce_grad = (p - if c == y { 1.0 } else { 0.0 }) / voxels as f64;
                grad.data[at(b, c, i)] = ce_grad + p * (g_p[c] - dot);
            }
        }
    }

    Ok(LossOutput {
        loss: ce + dice_term,
        cross_entropy: ce,
        dice_term,
        grad,
    })
}
