//! Minimal-pair negation probing for masked language models.
//!
//! The harness renders two-sentence inputs that differ only in verbal
//! negation, asks a masked-language-model backend for its top-1 fill-in,
//! and measures how often the context verb (the ACT token) is repeated.
//!
//! - [`lexicon`]: name, profession and verb lists
//! - [`patterns`]: rendering of every tested string
//! - [`model`]: backends, wire protocol, prediction cache
//! - [`selection`]: per-model triplet selection
//! - [`evaluation`]: repetition rates and drops
//! - [`reporting`]: tables, run diffs and manifests

pub mod clock;
pub mod digest;
pub mod error;
pub mod evaluation;
pub mod lexicon;
pub mod model;
pub mod patterns;
pub mod reporting;
pub mod selection;

pub use error::{Error, Result};

pub const HARNESS_VERSION: &str = env!("CARGO_PKG_VERSION");
