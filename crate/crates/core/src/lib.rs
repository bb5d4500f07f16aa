//! Building blocks for extending language models to ultra-long contexts and
//! checking that the extension worked.
//!
//! - [`rope`]: rotary frequency tables with YaRN, NTK-aware, dynamic-NTK and
//!   position-interpolation scaling.
//! - [`packer`]: length-bucketed resampling and separator-delimited packing of
//!   tokenized corpora into fixed-length training sequences.
//! - [`evalgen`]: synthetic needle-in-a-haystack and multi-needle cases.
//! - [`harness`]: drives an OpenAI-compatible endpoint over case files and
//!   scores the replies into length-bucketed reports.
//! - [`toylab`]: a small transformer with hand-written gradients for running
//!   the extension recipe and its ablations at desk scale.

pub mod error;
pub mod evalgen;
pub mod harness;
pub mod packer;
pub mod rope;
pub mod seed;
pub mod toylab;

pub use error::{Error, Result};
