//! Source speaker tracing against voice conversion.
//!
//! The crate synthesizes a converted-speech corpus with a controllable
//! residual of source-speaker style, trains a small embedding extractor in
//! three phases (source-only AAM, converted+source AAM fine-tuning, and AAM
//! plus a speaker contrastive loss against a frozen source-speech embedding
//! bank), and scores source speaker verification trials with cosine
//! similarity and EER.

pub mod cli;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod par;
pub mod pipeline;
pub mod synthcorpus;

pub use error::{Error, Result};
pub use par::Exec;
