//! Supervised representational alignment for word embeddings.
//!
//! Embedding features are pruned so that cosine similarities over the kept
//! features best rank-correlate with human similarity judgments. The kept
//! feature subspaces are then probed by regressing them onto annotated
//! semantic dimensions with leave-one-out PLSR, and the resulting prediction
//! profiles are compared across groups.
//!
//! Modules follow the data flow:
//! [`corpus_io`] → [`simkit`] → [`pruning`] → [`setanalysis`] / [`plsr`] →
//! [`stats`], orchestrated by [`pipeline`].

pub mod corpus_io;
pub mod error;
pub mod numfmt;
pub mod pipeline;
pub mod plsr;
pub mod pruning;
pub mod setanalysis;
pub mod simkit;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
