//! Child-face latent aggregation from parent images.
//!
//! The crate covers the whole desk-scale pipeline: parent augmentation
//! (MixUp and a reduced AugMix affine family), facial label maps, a
//! pluggable latent codec with a deterministic linear implementation, the
//! two-layer aggregator MLP trained with Adam, and evaluation metrics.
//! Everything is seeded; identical inputs produce bit-identical outputs.
//!
//! The `book/` directory at the repository root walks through each stage;
//! its code listings are compiled and run as doc-tests of this crate.

pub mod augment;
pub mod codec;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod numerics;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
    #[doc = include_str!("../../../book/src/imaging.md")]
    mod imaging {}
    #[doc = include_str!("../../../book/src/augment.md")]
    mod augment {}
    #[doc = include_str!("../../../book/src/codec.md")]
    mod codec {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/eval.md")]
    mod eval {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
