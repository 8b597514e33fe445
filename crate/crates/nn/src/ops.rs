//! Stateless element-wise and row-wise helpers.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::Real;

pub fn sigmoid<F: Real>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

/// `ln(1 + e^v)` without overflow.
pub fn softplus<F: Real>(v: F) -> F {
    if v > F::from_f64_lossy(30.0) {
        v
    } else {
        v.exp().ln_1p()
    }
}

pub fn log_softmax_rows<F: Real>(logits: &ArrayView2<F>) -> Array2<F> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax_rows<F: Real>(logits: &ArrayView2<F>) -> Array2<F> {
    log_softmax_rows(logits).mapv(F::exp)
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows<F: Real>(m: &ArrayView2<F>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Per-row cross entropy and `dL/dlogits` for `L = sum_rows(weight_r * ce_r)`.
pub fn cross_entropy<F: Real>(logits: &ArrayView2<F>, targets: &[usize], weights: &[F]) -> (Array1<F>, Array2<F>) {
    let logp = log_softmax_rows(logits);
    let mut losses = Array1::<F>::zeros(targets.len());
    let mut grad = logp.mapv(F::exp);
    for (r, &y) in targets.iter().enumerate() {
        losses[r] = -logp[[r, y]];
        grad[[r, y]] -= F::one();
        grad.row_mut(r).mapv_inplace(|g| g * weights[r]);
    }
    (losses, grad)
}

/// Inverted dropout mask (`0` or `1/(1-p)`), or all ones when `p == 0`.
pub fn dropout_mask<F: Real, R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Array2<F> {
    if p <= 0.0 {
        return Array2::from_elem((rows, cols), F::one());
    }
    let scale = F::from_f64_lossy(1.0 / (1.0 - p));
    Array2::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < p { F::zero() } else { scale })
}

/// Sum of squares of all entries.
pub fn sq_norm<F: Real>(m: &ArrayView2<F>) -> F {
    m.iter().map(|&v| v * v).sum()
}

pub fn mean_rows<F: Real>(m: &ArrayView2<F>) -> Array1<F> {
    m.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(m.ncols()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn cross_entropy_gradient_matches_softmax_minus_onehot() {
        let logits = array![[1.0f64, 2.0, 0.5], [0.0, 0.0, 0.0]];
        let (loss, grad) = cross_entropy(&logits.view(), &[1, 2], &[1.0, 0.5]);
        let p = softmax_rows(&logits.view());
        assert_abs_diff_eq!(loss[0], -p[[0, 1]].ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(grad[[0, 1]], p[[0, 1]] - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(grad[[1, 0]], 0.5 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn stable_sigmoid_and_softplus() {
        assert_abs_diff_eq!(sigmoid(-800.0f64), 0.0, epsilon = 1e-300);
        assert_abs_diff_eq!(softplus(100.0f64), 100.0, epsilon = 1e-12);
        assert_abs_diff_eq!(softplus(0.0f64), 2f64.ln(), epsilon = 1e-12);
    }
}
