//! A compact BERT-style masked language model.
//!
//! The forward pass is the usual post-norm encoder: embedding sum
//! `LayerNorm(tok + pos + seg₀)`, then `L` blocks of multi-head self-attention
//! and a GELU feed-forward network, each wrapped in a residual connection and
//! layer normalization, then an MLM head (dense, GELU, layer norm, vocabulary
//! projection with bias). Backward passes are written by hand so that the
//! gradient with respect to one input-embedding row is exact.

mod bundle;
mod config;
pub mod encoder;
pub mod ops;
mod train;
pub mod weights;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};

pub use bundle::{EncodedItem, ForwardResult, ModelBundle};
pub use config::{Activation, ModelConfig};
pub use train::{train_toy, TrainConfig, TrainReport};
pub use weights::Weights;

/// Floating-point element type of a model. Experiments run in `f32`; the
/// gradient check runs in `f64`.
pub trait Real:
    Float + FromPrimitive + NumAssign + LinalgScalar + ScalarOperand + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn erf(self) -> Self;
}

impl Real for f32 {
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Real for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }
}
