//! Finite-difference checks of the hand-written backward passes.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rationale_nn::{BiLstm, Linear, Param, Parameterized};

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// Scalar objective: random projection of every output plus the final state.
struct Probe {
    out_weights: Vec<Array2<f64>>,
    final_weights: Array2<f64>,
}

fn objective(net: &BiLstm<f64>, head: &Linear<f64>, xs: &[Array2<f64>], lengths: &[usize], probe: &Probe) -> f64 {
    let (outs, tape) = net.forward(xs, lengths);
    let mut total: f64 = outs.iter().zip(&probe.out_weights).map(|(o, w)| (o * w).sum()).sum();
    let y = head.forward(&tape.final_state().view());
    total += (&y * &probe.final_weights).sum();
    total
}

fn bump(net: &mut BiLstm<f64>, name: &str, r: usize, c: usize, delta: f64) {
    net.visit_mut("net", &mut |n, p| {
        if n == name {
            p.value[[r, c]] += delta;
        }
    });
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

#[test]
fn bilstm_and_linear_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (input, hidden, steps) = (4, 3, 5);
    let lengths = vec![5, 2, 3];
    let mut net = BiLstm::<f64>::new(input, hidden, &mut rng);
    let mut head = Linear::<f64>::new(2 * hidden, 2, &mut rng);
    let xs: Vec<Array2<f64>> = (0..steps)
        .map(|t| {
            let mut x = random_matrix(lengths.len(), input, &mut rng);
            for (b, &len) in lengths.iter().enumerate() {
                if t >= len {
                    x.row_mut(b).fill(0.0);
                }
            }
            x
        })
        .collect();
    let probe = Probe {
        out_weights: (0..steps).map(|_| random_matrix(lengths.len(), 2 * hidden, &mut rng)).collect(),
        final_weights: random_matrix(lengths.len(), 2, &mut rng),
    };

    // analytic
    let (_, tape) = net.forward(&xs, &lengths);
    let fin = tape.final_state();
    let d_final = head.backward(&fin.view(), &probe.final_weights.view());
    let dxs = net.backward(&tape, &probe.out_weights, Some(&d_final.view()));

    let eps = 1e-6;
    let mut worst = 0.0f64;

    let mut names = Vec::new();
    net.visit("net", &mut |n, _| names.push(n.to_string()));
    for name in names {
        let mut grads: Option<Param<f64>> = None;
        net.visit("net", &mut |n, p| {
            if n == name {
                grads = Some(p.clone());
            }
        });
        let param = grads.unwrap();
        for idx in 0..param.len().min(12) {
            let (r, c) = (idx % param.value.nrows(), idx / param.value.nrows() % param.value.ncols());
            bump(&mut net, &name, r, c, eps);
            let plus = objective(&net, &head, &xs, &lengths, &probe);
            bump(&mut net, &name, r, c, -2.0 * eps);
            let minus = objective(&net, &head, &xs, &lengths, &probe);
            bump(&mut net, &name, r, c, eps);
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(numeric, param.grad[[r, c]]));
        }
    }

    for t in 0..steps {
        for b in 0..lengths.len() {
            if t >= lengths[b] {
                assert!(dxs[t].row(b).iter().all(|&v| v == 0.0), "padding received gradient");
                continue;
            }
            for k in 0..input {
                let mut shifted = xs.clone();
                shifted[t][[b, k]] += eps;
                let plus = objective(&net, &head, &shifted, &lengths, &probe);
                shifted[t][[b, k]] -= 2.0 * eps;
                let minus = objective(&net, &head, &shifted, &lengths, &probe);
                let numeric = (plus - minus) / (2.0 * eps);
                worst = worst.max(relative_error(numeric, dxs[t][[b, k]]));
            }
        }
    }

    assert!(worst < 1e-6, "worst relative error {worst}");
}
