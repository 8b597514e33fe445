//! Small dense and recurrent layers with explicit forward/backward passes.
//!
//! Every layer keeps its parameters in [`Param`] slots that carry an
//! accumulated gradient next to the value. A forward call returns whatever
//! the matching backward call needs (a "tape"), so several forward passes can
//! be in flight at once and gradients are only touched on `backward`.
//!
//! All layers are generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference checks.

mod adam;
mod linear;
mod lstm;
pub mod ops;
mod param;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use linear::Linear;
pub use lstm::{BiLstm, BiLstmTape, Lstm, LstmTape};
pub use param::{Param, ParamVisitor, Parameterized};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};

/// Floating point type the layers operate on.
pub trait Real:
    LinalgScalar
    + Float
    + NumAssign
    + FromPrimitive
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + std::iter::Sum
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite float conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}
