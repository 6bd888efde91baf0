//! Multilingual subjectivity classification pipeline.
//!
//! The crate loads shared-task TSV corpora in five languages (plus a
//! multilingual mix), normalizes the text, optionally machine-translates it
//! to English, fine-tunes a pluggable 3-class sentiment encoder under a
//! subjectivity label mapping with confidence-weighted cross-entropy, and
//! scores predictions with macro-F1 and friends.
//!
//! Row-level work (preprocessing, batch forward/backward, prediction,
//! confusion tallies) runs data-parallel when the default `parallel`
//! feature is on and sequentially otherwise; outputs are bit-identical
//! either way.

pub mod cli;
pub mod corpus;
pub mod labels;
pub mod metrics;
pub mod preprocess;
pub mod trainer;
pub mod translate;

mod error;
mod ioutil;
mod par;

pub use error::{Error, Result};
