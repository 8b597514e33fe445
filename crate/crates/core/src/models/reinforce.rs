//! Score-function gradients for independent Bernoulli token selectors.
//!
//! For `z_t ~ Bernoulli(sigmoid(s_t))` the gradient of `E[cost(z)]` with
//! respect to the logit `s_t` is `E[(cost(z) - baseline) (z_t - p_t)]`.

use rand::Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `d log p(z_t) / d s_t` for a Bernoulli with logit `s_t`.
pub fn logit_score(z: bool, p: f64) -> f64 {
    f64::from(u8::from(z)) - p
}

/// Sparsity plus gap penalty of a selection: `sparsity * (count + coherence * gaps)`
/// where `gaps` counts positions whose selection differs from the previous one.
pub fn selection_penalty(mask: &[bool], sparsity: f64, coherence: f64) -> f64 {
    let count = mask.iter().filter(|&&z| z).count() as f64;
    let gaps = mask.windows(2).filter(|w| w[0] != w[1]).count() as f64;
    sparsity * (count + coherence * gaps)
}

/// Exact gradient by summing over all `2^n` masks. Only for small `n`.
pub fn exact_gradient(logits: &[f64], cost: impl Fn(&[bool]) -> f64) -> Vec<f64> {
    let n = logits.len();
    assert!(n <= 20, "enumeration over {n} tokens is too large");
    let probs: Vec<f64> = logits.iter().map(|&s| sigmoid(s)).collect();
    let mut grad = vec![0.0; n];
    let mut mask = vec![false; n];
    for bits in 0u32..(1 << n) {
        let mut prob = 1.0;
        for t in 0..n {
            mask[t] = bits >> t & 1 == 1;
            prob *= if mask[t] { probs[t] } else { 1.0 - probs[t] };
        }
        let c = cost(&mask);
        for t in 0..n {
            grad[t] += prob * c * logit_score(mask[t], probs[t]);
        }
    }
    grad
}

/// Monte-Carlo estimate with a fixed baseline. Returns the per-logit mean
/// and its standard error.
pub fn estimate_gradient<R: Rng + ?Sized>(
    logits: &[f64],
    cost: impl Fn(&[bool]) -> f64,
    baseline: f64,
    samples: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let n = logits.len();
    let probs: Vec<f64> = logits.iter().map(|&s| sigmoid(s)).collect();
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let mut mask = vec![false; n];
    for _ in 0..samples {
        for t in 0..n {
            mask[t] = rng.random::<f64>() < probs[t];
        }
        let adv = cost(&mask) - baseline;
        for t in 0..n {
            let g = adv * logit_score(mask[t], probs[t]);
            sum[t] += g;
            sum_sq[t] += g * g;
        }
    }
    let m = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let stderr = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, mu)| ((sq / m - mu * mu).max(0.0) / (m - 1.0)).sqrt())
        .collect();
    (mean, stderr)
}

/// Exponential moving average baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingBaseline {
    pub value: f64,
    pub decay: f64,
    initialised: bool,
}

impl MovingBaseline {
    pub fn new(decay: f64) -> Self {
        MovingBaseline {
            value: 0.0,
            decay,
            initialised: false,
        }
    }

    /// Current value; the first observation seeds it.
    pub fn get(&self, first_observation: f64) -> f64 {
        if self.initialised {
            self.value
        } else {
            first_observation
        }
    }

    pub fn update(&mut self, observation: f64) {
        if self.initialised {
            self.value = self.decay * self.value + (1.0 - self.decay) * observation;
        } else {
            self.value = observation;
            self.initialised = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn penalty_counts_selections_and_transitions() {
        let m = [false, true, true, false, true];
        assert_eq!(selection_penalty(&m, 1.0, 0.0), 3.0);
        assert_eq!(selection_penalty(&m, 0.5, 1.0), 0.5 * (3.0 + 3.0));
        assert_eq!(selection_penalty(&[], 1.0, 1.0), 0.0);
    }

    #[test]
    fn single_token_gradient_in_closed_form() {
        // cost = z, so E[cost] = p and d/ds = p (1 - p)
        let g = exact_gradient(&[0.3], |m| f64::from(u8::from(m[0])));
        let p = sigmoid(0.3);
        assert!((g[0] - p * (1.0 - p)).abs() < 1e-12);
    }

    #[test]
    fn baseline_does_not_bias_the_estimate() {
        let logits = [0.4, -1.0, 0.0];
        let cost = |m: &[bool]| selection_penalty(m, 1.0, 2.0) + if m[1] { 0.5 } else { 0.0 };
        let exact = exact_gradient(&logits, cost);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (est, se) = estimate_gradient(&logits, cost, 2.0, 50_000, &mut rng);
        for t in 0..3 {
            assert!((est[t] - exact[t]).abs() < 4.0 * se[t], "{t}: {} vs {}", est[t], exact[t]);
        }
    }

    #[test]
    fn estimate_error_shrinks_as_inverse_sqrt_samples() {
        let logits = [0.8, -0.3, 1.5, -1.2, 0.1, 0.6];
        let cost = |m: &[bool]| selection_penalty(m, 0.5, 1.0) + if m[0] && !m[3] { 1.0 } else { 0.0 };
        let exact = exact_gradient(&logits, cost);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut rms = |samples: usize| {
            let reps = 200;
            let mut sq = 0.0;
            for _ in 0..reps {
                let (est, _) = estimate_gradient(&logits, cost, 1.0, samples, &mut rng);
                sq += est.iter().zip(&exact).map(|(e, x)| (e - x).powi(2)).sum::<f64>();
            }
            (sq / (reps * logits.len()) as f64).sqrt()
        };
        let ratio = rms(250) / rms(4000);
        // 16x the samples, so 4x smaller error
        assert!((3.4..4.7).contains(&ratio), "{ratio}");
    }

    #[test]
    fn baseline_seeds_then_decays() {
        let mut b = MovingBaseline::new(0.9);
        assert_eq!(b.get(3.0), 3.0);
        b.update(3.0);
        b.update(4.0);
        assert!((b.value - 3.1).abs() < 1e-12);
    }
}
