//! Differentiable primitives with exact reverse-mode gradients.
//!
//! [`Tape`] records a forward pass over [`Tensor`]s and replays it backwards.
//! The raw kernels live in [`ops`] so they can be tested in isolation, and
//! [`gradcheck`] compares analytic gradients with central differences.
//!
//! Everything is generic over [`Real`] so that training can run in `f32`
//! while verification runs in `f64`.

pub mod gradcheck;
pub mod ops;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{ArrayD, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};

pub use gradcheck::{gradcheck, GradCheckReport, Probe};
pub use tape::{Gradients, Tape, Var};

/// Scalar type usable on the tape.
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + NumAssign
    + 'static
{
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + LinalgScalar
        + ScalarOperand
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + Sum
        + NumAssign
        + 'static
{
}

/// Dense n-d array; gradients live on the [`Tape`], not on the tensor.
pub type Tensor<F> = ArrayD<F>;

#[inline]
pub(crate) fn lit<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("literal representable")
}
