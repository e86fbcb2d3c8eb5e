//! ARMA recurrent networks for frame-level sequence classification, trained
//! under the echo-state constraint `‖W‖_∞ ≤ 1/γ` by a primal-dual method,
//! with a gradient-clipping BPTT baseline.
//!
//! The numerical core is generic over [`Real`] (`f32`/`f64`); the aliases
//! below fix the `f64` instantiation used by the file formats and the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clipping;
pub mod data_io;
pub mod echo_state;
pub mod error;
pub mod gradients;
pub mod model;
pub mod numerics;
pub mod primal_dual;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
pub use model::{ArmaConfig, OutputHead};
pub use numerics::{Nonlin, Real};

pub type Mat = numerics::Matrix<f64>;
pub type Params = model::ModelParams<f64>;
pub type Seq = model::Sequence<f64>;
pub type Trace = model::ForwardTrace<f64>;
pub type Grads = gradients::GradSet<f64>;
pub type State = training::OptState<f64>;
