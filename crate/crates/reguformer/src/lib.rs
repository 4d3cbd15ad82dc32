//! Regularized sparse-attention encoders for multivariate sequence
//! similarity learning.
//!
//! The crate trains transformer-style encoders on the well-linking task:
//! deciding whether two well-log intervals come from the same well. Attention
//! can run dense, with randomly or top-scored selected query/key rows
//! (the Reguformer family, including the Informer special case), or with
//! FAVOR+ random features (Performer). Everything runs on a small `f64`
//! tape-based autodiff core, so gradients are checkable against finite
//! differences end to end.
//!
//! Module map:
//! - [`tensor`]: dense tensors, seeded RNG, reverse-mode tape.
//! - [`attention`]: dense/sparse/FAVOR+ attention kernels and the FFN.
//! - [`encoder`]: the stacked encoder with embedding head and model files.
//! - [`training`]: Siamese/Triplet objectives, scoring heads, Adam.
//! - [`data`]: CSV ingestion, preprocessing, interval sampling, synthesis.
//! - [`eval`]: metrics, clustering, robustness, interpretability, timing.

pub mod attention;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Rng, Tape, Tensor, Var};

#[cfg(doctest)]
mod book {
    //! Runs every code block in the guide as a doctest, keeping the book
    //! in sync with the library.
    #[doc = include_str!("../../../book/src/tensors.md")]
    pub mod tensors {}
    #[doc = include_str!("../../../book/src/attention.md")]
    pub mod attention {}
    #[doc = include_str!("../../../book/src/performer.md")]
    pub mod performer {}
    #[doc = include_str!("../../../book/src/encoder.md")]
    pub mod encoder {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/data.md")]
    pub mod data {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
}
