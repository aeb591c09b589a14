//! Few-shot audio-visual classification with hallucinated modalities.
//!
//! The pipeline has three phases:
//!
//! 1. [`halluc`]: pretrain a pair of conditional cross-modal generators
//!    (audio → visual and visual → audio) with adversarial and reconstruction
//!    losses on base classes.
//! 2. [`fewshot`]: meta-train a prototypical embedder on fused
//!    `[audio ; visual]` features, with a Monte-Carlo dropout penalty on the
//!    spread of class probabilities.
//! 3. [`eval`]: on novel classes, replace a missing modality with its
//!    hallucinated counterpart before classifying.
//!
//! Everything operates on fixed-size feature vectors, either generated by
//! [`data::generate_synthetic`] or loaded from a feature file.
//!
//! ```
//! use hvn::numerics::Tensor2;
//! use hvn::fewshot::fuse;
//!
//! let audio = Tensor2::zeros(1, 1024);
//! let visual = Tensor2::zeros(1, 1024);
//! assert_eq!(fuse(&audio, &visual).unwrap().shape(), (1, 2048));
//! ```
//!
//! The `book/` directory next to this crate walks through each phase; its
//! code listings are compiled and run as doctests of this crate.

mod binio;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fewshot;
pub mod halluc;
pub mod numerics;
pub mod rng;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/hallucination.md")]
    mod hallucination {}
    #[doc = include_str!("../../../book/src/prototypes.md")]
    mod prototypes {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
