//! Dense tensors, reverse-mode differentiation and first-order optimisation.

mod gaussian;
pub mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gaussian::{gaussian_kl_value, reparam_sample, GaussianPosterior};
pub use optim::{clip_factor, Adam, AdamConfig, CLIP_NORM};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{Axis, Gradients, Tape, Var, LEAKY_SLOPE};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
}

#[cfg(test)]
mod tests;
