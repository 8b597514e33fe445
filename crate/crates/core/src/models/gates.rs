//! Rectified, stretched Kumaraswamy gates.
//!
//! A Kumaraswamy sample `k` in (0, 1) is stretched to `t = l + (r - l) k`
//! with `(l, r) = (-0.1, 1.1)` and clamped to [0, 1], which puts point masses
//! on exactly 0 and exactly 1. All math is in f64 with analytic derivatives.

use statrs::function::gamma::ln_gamma;

pub const STRETCH_LOW: f64 = -0.1;
pub const STRETCH_HIGH: f64 = 1.1;
const SPAN: f64 = STRETCH_HIGH - STRETCH_LOW;
/// Kumaraswamy quantile of the stretched point 0.
pub const K_ZERO: f64 = (0.0 - STRETCH_LOW) / SPAN;
/// Kumaraswamy quantile of the stretched point 1.
pub const K_ONE: f64 = (1.0 - STRETCH_LOW) / SPAN;

pub const SHAPE_MIN: f64 = 1e-6;
pub const SHAPE_MAX: f64 = 100.0;
/// Gates at or below this are "not selected".
pub const ZERO_EPS: f64 = 1e-6;
const U_EPS: f64 = 1e-6;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shape parameter from a pre-activation: softplus clamped to
/// `[SHAPE_MIN, SHAPE_MAX]`. Returns the value and its derivative (zero
/// where the clamp is active).
pub fn shape(pre: f64) -> (f64, f64) {
    let s = softplus(pre);
    if s < SHAPE_MIN {
        (SHAPE_MIN, 0.0)
    } else if s > SHAPE_MAX {
        (SHAPE_MAX, 0.0)
    } else {
        (s, sigmoid(pre))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateSample {
    pub z: f64,
    pub dz_da: f64,
    pub dz_db: f64,
}

/// Reparameterised sample for uniform noise `u`.
pub fn sample(a: f64, b: f64, u: f64) -> GateSample {
    let u = u.clamp(U_EPS, 1.0 - U_EPS);
    let log1mu = (-u).ln_1p();
    let rest = (log1mu / b).exp(); // (1-u)^(1/b)
    let w = -(log1mu / b).exp_m1(); // 1 - (1-u)^(1/b)
    let k = w.powf(1.0 / a);
    let t = STRETCH_LOW + SPAN * k;
    if t <= 0.0 {
        return GateSample { z: 0.0, dz_da: 0.0, dz_db: 0.0 };
    }
    if t >= 1.0 {
        return GateSample { z: 1.0, dz_da: 0.0, dz_db: 0.0 };
    }
    let dk_da = -k * w.ln() / (a * a);
    let dw_db = rest * log1mu / (b * b);
    let dk_db = w.powf(1.0 / a - 1.0) * dw_db / a;
    GateSample {
        z: t,
        dz_da: SPAN * dk_da,
        dz_db: SPAN * dk_db,
    }
}

/// `(1 - q^a)^b` with derivatives in a and b: the probability that a
/// Kumaraswamy sample exceeds `q`.
fn survival(a: f64, b: f64, q: f64) -> (f64, f64, f64) {
    let qa = q.powf(a);
    let log_rest = (-qa).ln_1p();
    let p = (b * log_rest).exp();
    let dp_db = p * log_rest;
    // d/da (1-q^a)^b = b (1-q^a)^(b-1) (-q^a ln q)
    let dp_da = b * ((b - 1.0) * log_rest).exp() * (-qa * q.ln());
    (p, dp_da, dp_db)
}

/// P(z != 0) and its gradient in (a, b).
pub fn prob_nonzero(a: f64, b: f64) -> (f64, f64, f64) {
    survival(a, b, K_ZERO)
}

/// P(z == 1).
pub fn prob_one(a: f64, b: f64) -> f64 {
    survival(a, b, K_ONE).0
}

/// Mean of the underlying Kumaraswamy: `b * B(1 + 1/a, b)`.
pub fn kumaraswamy_mean(a: f64, b: f64) -> f64 {
    let x = 1.0 + 1.0 / a;
    (b.ln() + ln_gamma(x) + ln_gamma(b) - ln_gamma(x + b)).exp()
}

/// Deterministic test-time gate: 0 or 1 when that point mass is the most
/// likely outcome, otherwise the clamped stretched mean.
pub fn eval_gate(a: f64, b: f64) -> f64 {
    let p0 = 1.0 - prob_nonzero(a, b).0;
    let p1 = prob_one(a, b);
    let pc = 1.0 - p0 - p1;
    if pc > p0 && pc > p1 {
        (STRETCH_LOW + SPAN * kumaraswamy_mean(a, b)).clamp(0.0, 1.0)
    } else if p0 > p1 {
        0.0
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stretch_constants() {
        assert_relative_eq!(K_ZERO, 1.0 / 12.0, epsilon = 1e-15);
        assert_relative_eq!(K_ONE, 11.0 / 12.0, epsilon = 1e-15);
    }

    #[test]
    fn point_masses_match_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (0.7, 1.6);
        let n = 200_000;
        let (mut zeros, mut ones, mut sum_k) = (0usize, 0usize, 0.0);
        for _ in 0..n {
            let u: f64 = rng.random();
            let z = sample(a, b, u).z;
            zeros += usize::from(z == 0.0);
            ones += usize::from(z == 1.0);
            let w = 1.0 - (1.0 - u).powf(1.0 / b);
            sum_k += w.powf(1.0 / a);
        }
        let se = |p: f64| (p * (1.0 - p) / n as f64).sqrt();
        let p_nz = prob_nonzero(a, b).0;
        assert!(((1.0 - zeros as f64 / n as f64) - p_nz).abs() < 4.0 * se(p_nz));
        let p1 = prob_one(a, b);
        assert!((ones as f64 / n as f64 - p1).abs() < 4.0 * se(p1));
        assert!((sum_k / n as f64 - kumaraswamy_mean(a, b)).abs() < 3e-3);
    }

    #[test]
    fn eval_gate_picks_dominant_mass() {
        // tiny a pushes k towards 0
        assert_eq!(eval_gate(0.05, 1.0), 0.0);
        // huge b with small a pushes towards 0 too; large a, small b towards 1
        assert_eq!(eval_gate(20.0, 0.05), 1.0);
        let mid = eval_gate(3.0, 3.0);
        assert!(mid > 0.0 && mid < 1.0, "{mid}");
    }

    #[test]
    fn shape_is_clamped() {
        assert_eq!(shape(-40.0), (SHAPE_MIN, 0.0));
        assert_eq!(shape(200.0), (SHAPE_MAX, 0.0));
        let (v, d) = shape(0.0);
        assert_relative_eq!(v, 2f64.ln());
        assert_relative_eq!(d, 0.5);
    }
}
