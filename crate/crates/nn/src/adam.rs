use std::collections::BTreeMap;

use ndarray::Array2;

use crate::{Param, Parameterized, Real};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient (not decoupled).
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with moments keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Array2<F>, Array2<F>)>,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter of `module` and clears grads.
    pub fn step<M: Parameterized<F> + ?Sized>(&mut self, module: &mut M, prefix: &str) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let lr = F::from_f64_lossy(c.lr * bias2.sqrt() / bias1);
        let b1 = F::from_f64_lossy(c.beta1);
        let b2 = F::from_f64_lossy(c.beta2);
        let eps = F::from_f64_lossy(c.eps * bias2.sqrt());
        let wd = F::from_f64_lossy(c.weight_decay);
        let moments = &mut self.moments;

        module.visit_mut(prefix, &mut |name: &str, p: &mut Param<F>| {
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (Array2::zeros(p.value.raw_dim()), Array2::zeros(p.value.raw_dim())));
            ndarray::Zip::from(&mut p.value)
                .and(&mut p.grad)
                .and(m)
                .and(v)
                .for_each(|w, g, m, v| {
                    let grad = *g + wd * *w;
                    *m = b1 * *m + (F::one() - b1) * grad;
                    *v = b2 * *v + (F::one() - b2) * grad * grad;
                    *w -= lr * *m / (v.sqrt() + eps);
                    *g = F::zero();
                });
        });
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<F: Real, M: Parameterized<F> + ?Sized>(module: &mut M, max_norm: f64) -> f64 {
    let mut total = 0.0f64;
    module.visit("", &mut |_, p| {
        total += p.grad.iter().map(|g| g.to_f64().unwrap_or(f64::NAN).powi(2)).sum::<f64>();
    });
    let norm = total.sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = F::from_f64_lossy(max_norm / norm);
        module.visit_mut("", &mut |_, p| p.grad.mapv_inplace(|g| g * scale));
    }
    norm
}
