//! Correlation-aware document-level relation extraction.
//!
//! The crate trains a small transformer that encodes a document together
//! with one learned token per relation type, pools entity representations
//! with log-sum-exp over mentions, and classifies every entity pair with a
//! grouped bilinear layer. Two auxiliary objectives push relation
//! co-occurrence structure into the relation tokens: a coarse head predicts
//! which relations appear together in a document, and a fine head predicts
//! co-occurrence conditioned on the entity pair. The evaluation side covers
//! corpus co-occurrence statistics (PPMI), micro/Ign F1, long-tail macro
//! scores, multi-label splits, and significance testing.
//!
//! Start with the runnable programs in `examples/`; each one exercises a
//! single capability end to end.

pub mod autograd;
pub mod cli;
pub mod cooccur;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod gradcheck;
pub mod heatmap;
pub mod relstats;
pub mod repmodel;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
