//! Multi-scale multiple-instance audio-visual contrastive learning and
//! multi-scale multi-instance attention fusion for sound source localization.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, experiment drivers and
//! the command-line interface live in the companion `m2vsl` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;

pub mod audio;
pub mod autodiff;
pub mod contrastive;
pub mod encoders;
pub mod gradcheck;
pub mod eval;
pub mod image;
pub mod locseg;
pub mod metrics;
pub mod mmt;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
