use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::param::join;
use crate::{Param, Parameterized, Real};

/// Single-direction LSTM over a time-major padded batch.
///
/// Inputs are a slice of `[batch, input]` matrices, one per time step, and a
/// length per batch row. Past a row's length the state is carried unchanged
/// and the output is zero, so padded positions never influence anything.
/// Gate order inside the stacked weights is input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm<F> {
    pub w_ih: Param<F>,
    pub w_hh: Param<F>,
    pub bias: Param<F>,
    hidden: usize,
}

#[derive(Debug, Clone)]
struct StepCache<F> {
    h_prev: Array2<F>,
    c_prev: Array2<F>,
    /// Activated gates `[i | f | g | o]`.
    gates: Array2<F>,
    tanh_c: Array2<F>,
    mask: Array2<F>,
}

/// Intermediate values of one [`Lstm::forward`] call.
#[derive(Debug, Clone)]
pub struct LstmTape<F> {
    steps: Vec<StepCache<F>>,
    /// All inputs stacked time-major, `[steps * batch, input]`.
    inputs: Array2<F>,
    /// Final hidden state per row (state after the row's last real token).
    pub final_h: Array2<F>,
}

fn sigmoid<F: Real>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

pub(crate) fn step_mask<F: Real>(lengths: &[usize], t: usize) -> Array2<F> {
    Array2::from_shape_fn((lengths.len(), 1), |(b, _)| if t < lengths[b] { F::one() } else { F::zero() })
}

fn stack_steps<F: Real>(xs: &[Array2<F>], width: usize) -> Array2<F> {
    if xs.is_empty() {
        return Array2::zeros((0, width));
    }
    let views: Vec<ArrayView2<F>> = xs.iter().map(|x| x.view()).collect();
    concatenate(Axis(0), &views).expect("steps share a shape")
}

impl<F: Real> Lstm<F> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut bias = Param::uniform(1, 4 * hidden, bound, rng);
        // forget gate starts open
        bias.value.slice_mut(s![.., hidden..2 * hidden]).fill(F::one());
        Lstm {
            w_ih: Param::uniform(inputs, 4 * hidden, bound, rng),
            w_hh: Param::uniform(hidden, 4 * hidden, bound, rng),
            bias,
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn inputs(&self) -> usize {
        self.w_ih.value.nrows()
    }

    pub fn forward(&self, xs: &[Array2<F>], lengths: &[usize]) -> (Vec<Array2<F>>, LstmTape<F>) {
        let batch = lengths.len();
        let h = self.hidden;
        let mut h_prev = Array2::<F>::zeros((batch, h));
        let mut c_prev = Array2::<F>::zeros((batch, h));
        let mut outputs = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        let inputs = stack_steps(xs, self.inputs());
        // one large input projection instead of one per step
        let projected = inputs.dot(&self.w_ih.value) + &self.bias.value;

        for t in 0..xs.len() {
            let mask = step_mask::<F>(lengths, t);
            let mut gates = h_prev.dot(&self.w_hh.value) + projected.slice(s![t * batch..(t + 1) * batch, ..]);
            gates.slice_mut(s![.., 0..2 * h]).mapv_inplace(sigmoid);
            gates.slice_mut(s![.., 2 * h..3 * h]).mapv_inplace(F::tanh);
            gates.slice_mut(s![.., 3 * h..4 * h]).mapv_inplace(sigmoid);

            let i = gates.slice(s![.., 0..h]);
            let f = gates.slice(s![.., h..2 * h]);
            let g = gates.slice(s![.., 2 * h..3 * h]);
            let o = gates.slice(s![.., 3 * h..4 * h]);

            let c_new = &f * &c_prev + &i * &g;
            let tanh_c = c_new.mapv(F::tanh);
            let h_new = &o * &tanh_c;

            let keep = mask.mapv(|m| F::one() - m);
            let h_next = &h_new * &mask + &h_prev * &keep;
            let c_next = &c_new * &mask + &c_prev * &keep;
            outputs.push(&h_new * &mask);

            steps.push(StepCache {
                h_prev: std::mem::replace(&mut h_prev, h_next),
                c_prev: std::mem::replace(&mut c_prev, c_next),
                gates,
                tanh_c,
                mask,
            });
        }

        (
            outputs,
            LstmTape {
                steps,
                inputs,
                final_h: h_prev,
            },
        )
    }

    /// Backpropagates through time. `d_final_h` is the gradient on the
    /// final hidden state, if it was used downstream.
    pub fn backward(
        &mut self,
        tape: &LstmTape<F>,
        d_outputs: &[Array2<F>],
        d_final_h: Option<&ArrayView2<F>>,
    ) -> Vec<Array2<F>> {
        let h = self.hidden;
        let batch = tape.final_h.nrows();
        let mut dh = match d_final_h {
            Some(d) => d.to_owned(),
            None => Array2::zeros((batch, h)),
        };
        let mut dc = Array2::<F>::zeros((batch, h));
        let steps = tape.steps.len();
        let mut d_gates = Array2::<F>::zeros((steps * batch, 4 * h));

        for (t, step) in tape.steps.iter().enumerate().rev() {
            let keep = step.mask.mapv(|m| F::one() - m);
            let dh_new = (&dh + &d_outputs[t]) * &step.mask;
            let dh_carry = &dh * &keep;
            let mut dc_new = &dc * &step.mask;
            let dc_carry = &dc * &keep;

            let i = step.gates.slice(s![.., 0..h]);
            let f = step.gates.slice(s![.., h..2 * h]);
            let g = step.gates.slice(s![.., 2 * h..3 * h]);
            let o = step.gates.slice(s![.., 3 * h..4 * h]);

            let d_o = &dh_new * &step.tanh_c;
            Zip::from(&mut dc_new)
                .and(&dh_new)
                .and(&o)
                .and(&step.tanh_c)
                .for_each(|dc, &dh, &o, &tc| *dc += dh * o * (F::one() - tc * tc));

            let d_f = &dc_new * &step.c_prev;
            let d_i = &dc_new * &g;
            let d_g = &dc_new * &i;

            let mut dz = d_gates.slice_mut(s![t * batch..(t + 1) * batch, ..]);
            Zip::from(dz.slice_mut(s![.., 0..h]))
                .and(&d_i)
                .and(&i)
                .for_each(|z, &d, &a| *z = d * a * (F::one() - a));
            Zip::from(dz.slice_mut(s![.., h..2 * h]))
                .and(&d_f)
                .and(&f)
                .for_each(|z, &d, &a| *z = d * a * (F::one() - a));
            Zip::from(dz.slice_mut(s![.., 2 * h..3 * h]))
                .and(&d_g)
                .and(&g)
                .for_each(|z, &d, &a| *z = d * (F::one() - a * a));
            Zip::from(dz.slice_mut(s![.., 3 * h..4 * h]))
                .and(&d_o)
                .and(&o)
                .for_each(|z, &d, &a| *z = d * a * (F::one() - a));

            self.w_hh.grad += &step.h_prev.t().dot(&dz);
            dh = dz.dot(&self.w_hh.value.t()) + dh_carry;
            dc = &dc_new * &f + dc_carry;
        }
        self.w_ih.grad += &tape.inputs.t().dot(&d_gates);
        self.bias.grad += &d_gates.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dx_all = d_gates.dot(&self.w_ih.value.t());
        (0..steps)
            .map(|t| dx_all.slice(s![t * batch..(t + 1) * batch, ..]).to_owned())
            .collect()
    }
}

impl<F: Real> Parameterized<F> for Lstm<F> {
    fn visit(&self, prefix: &str, f: &mut crate::ParamVisitor<'_, F>) {
        f(&join(prefix, "w_ih"), &self.w_ih);
        f(&join(prefix, "w_hh"), &self.w_hh);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&join(prefix, "w_ih"), &mut self.w_ih);
        f(&join(prefix, "w_hh"), &mut self.w_hh);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Reverses every row of a padded time-major batch within its own length.
/// Padding stays at the end and is zero-filled.
fn reverse_within_lengths<F: Real>(xs: &[Array2<F>], lengths: &[usize]) -> Vec<Array2<F>> {
    let steps = xs.len();
    let width = xs.first().map_or(0, |x| x.ncols());
    (0..steps)
        .map(|t| {
            let mut out = Array2::<F>::zeros((lengths.len(), width));
            for (b, &len) in lengths.iter().enumerate() {
                if t < len {
                    out.row_mut(b).assign(&xs[len - 1 - t].row(b));
                }
            }
            out
        })
        .collect()
}

/// Bidirectional LSTM; outputs are `[forward | backward]` per step.
#[derive(Debug, Clone)]
pub struct BiLstm<F> {
    pub forward: Lstm<F>,
    pub backward: Lstm<F>,
}

#[derive(Debug, Clone)]
pub struct BiLstmTape<F> {
    fwd: LstmTape<F>,
    bwd: LstmTape<F>,
    lengths: Vec<usize>,
}

impl<F: Real> BiLstmTape<F> {
    /// `[forward final | backward final]`: the forward state after the last
    /// token and the backward state after reading back to the first token.
    pub fn final_state(&self) -> Array2<F> {
        concatenate![Axis(1), self.fwd.final_h, self.bwd.final_h]
    }
}

impl<F: Real> BiLstm<F> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        BiLstm {
            forward: Lstm::new(inputs, hidden, rng),
            backward: Lstm::new(inputs, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }

    pub fn output_size(&self) -> usize {
        2 * self.forward.hidden()
    }

    pub fn forward(&self, xs: &[Array2<F>], lengths: &[usize]) -> (Vec<Array2<F>>, BiLstmTape<F>) {
        let (fwd_out, fwd) = self.forward.forward(xs, lengths);
        let reversed = reverse_within_lengths(xs, lengths);
        let (bwd_rev, bwd) = self.backward.forward(&reversed, lengths);
        let bwd_out = reverse_within_lengths(&bwd_rev, lengths);
        let outputs = fwd_out
            .iter()
            .zip(&bwd_out)
            .map(|(a, b)| concatenate![Axis(1), *a, *b])
            .collect();
        (
            outputs,
            BiLstmTape {
                fwd,
                bwd,
                lengths: lengths.to_vec(),
            },
        )
    }

    /// `d_final` is the gradient on [`BiLstmTape::final_state`].
    pub fn backward(
        &mut self,
        tape: &BiLstmTape<F>,
        d_outputs: &[Array2<F>],
        d_final: Option<&ArrayView2<F>>,
    ) -> Vec<Array2<F>> {
        let h = self.hidden();
        let d_fwd: Vec<Array2<F>> = d_outputs.iter().map(|d| d.slice(s![.., 0..h]).to_owned()).collect();
        let d_bwd: Vec<Array2<F>> = d_outputs.iter().map(|d| d.slice(s![.., h..2 * h]).to_owned()).collect();
        let d_bwd_rev = reverse_within_lengths(&d_bwd, &tape.lengths);

        let final_fwd = d_final.map(|d| d.slice(s![.., 0..h]));
        let final_bwd = d_final.map(|d| d.slice(s![.., h..2 * h]));

        let dx_fwd = self.forward.backward(&tape.fwd, &d_fwd, final_fwd.as_ref());
        let dx_bwd_rev = self.backward.backward(&tape.bwd, &d_bwd_rev, final_bwd.as_ref());
        let dx_bwd = reverse_within_lengths(&dx_bwd_rev, &tape.lengths);
        dx_fwd.into_iter().zip(dx_bwd).map(|(a, b)| a + b).collect()
    }
}

impl<F: Real> Parameterized<F> for BiLstm<F> {
    fn visit(&self, prefix: &str, f: &mut crate::ParamVisitor<'_, F>) {
        self.forward.visit(&join(prefix, "fwd"), f);
        self.backward.visit(&join(prefix, "bwd"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.forward.visit_mut(&join(prefix, "fwd"), f);
        self.backward.visit_mut(&join(prefix, "bwd"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn reverse_keeps_padding_at_end() {
        let xs = vec![array![[1.0f64], [10.0]], array![[2.0], [0.0]], array![[3.0], [0.0]]];
        let rev = reverse_within_lengths(&xs, &[3, 1]);
        assert_eq!(rev[0], array![[3.0], [10.0]]);
        assert_eq!(rev[1], array![[2.0], [0.0]]);
        assert_eq!(rev[2], array![[1.0], [0.0]]);
    }

    #[test]
    fn padded_steps_do_not_move_state() {
        let mut rng = rand::rng();
        let lstm = Lstm::<f64>::new(2, 3, &mut rng);
        let x0 = array![[0.5, -0.2]];
        let junk = array![[9.0, 9.0]];
        let (_, short) = lstm.forward(std::slice::from_ref(&x0), &[1]);
        let (out, padded) = lstm.forward(&[x0, junk], &[1]);
        assert_eq!(short.final_h, padded.final_h);
        assert!(out[1].iter().all(|&v| v == 0.0));
    }
}
