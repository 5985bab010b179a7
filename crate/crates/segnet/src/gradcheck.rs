//! Finite-difference verification of the hand-written gradients.

use crate::loss::loss_dice_ce;
use crate::net::{SegNet, SegNetConfig};
use crate::tensor::Tensor;

fn pseudo(len: usize, seed: u64) -> Vec<f64> {
    let mut s = seed;
    (0..len)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

/// Largest relative error per layer between backprop and a five-point
/// central difference of the Dice + CE loss, on a batch of two random
/// `dims` inputs. Biases are nudged off zero so their gradients matter.
pub fn layer_errors(config: SegNetConfig, dims: [usize; 3]) -> crate::Result<Vec<(String, f64)>> {
    let seed = config.seed;
    let k = config.num_classes as usize;
    let mut net = SegNet::new(config)?;
    let noise = pseudo(net.num_params(), seed + 100);
    for (p, n) in net.params.iter_mut().zip(noise) {
        *p += 0.05 * n;
    }
    let len = 2 * dims.iter().product::<usize>();
    let x = Tensor::from_data(2, 1, dims, pseudo(len, seed + 1));
    let labels: Vec<u16> = pseudo(len, seed + 2)
        .iter()
        .map(|v| (((v + 1.0) / 2.0 * k as f64) as usize).min(k - 1) as u16)
        .collect();

    let (logits, cache) = net.forward(&x)?;
    let grad = net.backward(&cache, &loss_dice_ce(&logits, &labels)?.grad);

    let pattern = cache.activation_pattern();
    let mut out = Vec::new();
    for (name, range) in net.layer_ranges() {
        let mut worst: f64 = 0.0;
        for i in range {
            let numeric = central_difference(&mut net, i, &x, &labels, &pattern)?;
            let scale = grad[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((grad[i] - numeric).abs() / scale);
        }
        out.push((name, worst));
    }
    Ok(out)
}

/// Steps tried in order; truncation error is O(h^4), roundoff near 1e-12.
const STEPS: [f64; 4] = [1e-4, 1e-5, 1e-6, 1e-7];

/// Five-point central difference of the loss in parameter `i`. A step is
/// only accepted if no pre-activation crosses the leaky-ReLU kink inside
/// the stencil, since the loss is not differentiable across it; the step
/// shrinks until that holds.
fn central_difference(net: &mut SegNet, i: usize, x: &Tensor, labels: &[u16], pattern: &[bool]) -> crate::Result<f64> {
    let orig = net.params[i];
    let mut estimate = 0.0;
    for h in STEPS {
        let mut smooth = true;
        let mut at = |offset: f64| -> crate::Result<f64> {
            net.params[i] = orig + offset;
            let (logits, cache) = net.forward(x)?;
            smooth &= cache.activation_pattern() == pattern;
            Ok(loss_dice_ce(&logits, labels)?.loss)
        };
        estimate = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
        if smooth {
            break;
        }
    }
    net.params[i] = orig;
    Ok(estimate)
}
