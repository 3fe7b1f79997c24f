//! Minimal dense-tensor compute with reverse-mode gradient accumulation.
//!
//! Everything is 64-bit: the losses built on top of this crate difference
//! log-gamma terms that lose too much precision in f32. The tape is
//! define-by-run; see [`tape::Tape`].

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod params;
pub mod rng;
pub mod special;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use error::{AdError, Result};
pub use params::{Param, ParamSet};
pub use tape::{concat, DropoutKey, Tape, Var};
pub use tensor::Tensor;
