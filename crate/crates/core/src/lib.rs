//! Masked pseudoword probing: invert a masked language model with respect to
//! one input embedding row, then probe the contextual space around the
//! recovered vector.
//!
//! The guide in `book/` walks through every module with runnable examples.

pub mod archive;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod induction;
pub mod manifest;
pub mod model;
pub mod plot;
pub mod report;
pub mod rng;
pub mod store;
pub mod tokenizer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/getting-started.md")]
    mod getting_started {}
    #[doc = include_str!("../../../book/src/induction.md")]
    mod induction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
