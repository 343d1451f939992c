//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records every operation as it is evaluated. Leaves are created
//! with [`Tape::param`] (differentiable) or [`Tape::constant`], operations
//! return [`Var`] handles, and [`Tape::backward`] produces [`Gradients`] for
//! the parameter leaves. Quaternion product, vector rotation and quaternion
//! normalization are single composite primitives with hand-written
//! derivatives, so kinematic chains stay cheap to differentiate.

mod check;
mod params;
mod tape;
mod tensor;

pub use check::{check_gradient, GradCheckConfig, GradCheckReport};
pub use params::ParamStore;
pub use tape::{Gradients, Tape, Var, NORM_EPS};
pub use tensor::Tensor;
