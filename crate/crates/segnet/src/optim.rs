/// Polynomial decay `base * (1 - iteration / total)^0.9`.
pub fn poly_lr(base: f64, iteration: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * (1.0 - iteration as f64 / total as f64).max(0.0).powf(0.9)
}

/// SGD with optional Nesterov momentum, in the form
/// `v <- mu * v + g`, then `p <- p - lr * (g + mu * v)` (Nesterov) or
/// `p <- p - lr * v` (plain heavy ball).
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub nesterov: bool,
    pub velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(num_params: usize, momentum: f64, nesterov: bool) -> Self {
        Self {
            momentum,
            nesterov,
            velocity: vec![0.0; num_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.velocity.len());
        let mu = self.momentum;
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            *v = mu * *v + g;
            let update = if self.nesterov { g + mu * *v } else { *v };
            *p -= lr * update;
        }
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// One Nesterov step on fresh (zero) velocity.
pub fn sgd_step(params: &[f64], grads: &[f64], lr: f64, momentum: f64) -> Vec<f64> {
    let mut out = params.to_vec();
    Sgd::new(params.len(), momentum, true).step(&mut out, grads, lr);
    out
}
