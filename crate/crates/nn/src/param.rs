use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::Real;

/// A trainable matrix and its accumulated gradient.
///
/// Biases are stored as `1 x n` matrices so that optimizers only deal with
/// one shape.
#[derive(Debug, Clone)]
pub struct Param<F> {
    pub value: Array2<F>,
    pub grad: Array2<F>,
}

impl<F: Real> Param<F> {
    pub fn new(value: Array2<F>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Param::new(Array2::zeros((rows, cols)))
    }

    /// Uniform initialisation in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        let value = Array2::from_shape_simple_fn((rows, cols), || F::from_f64_lossy(dist.sample(rng)));
        Param::new(value)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Callback used to walk the parameters of a module tree.
pub type ParamVisitor<'a, F> = dyn FnMut(&str, &Param<F>) + 'a;

/// Anything holding named parameters.
pub trait Parameterized<F: Real> {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_, F>);
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>));

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.len());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
