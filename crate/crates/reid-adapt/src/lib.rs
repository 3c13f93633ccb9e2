//! Unsupervised domain adaptation for re-identification at desk scale.
//!
//! The library trains a part-pooled descriptor model on a labeled source
//! domain (batch-hard triplet mining on the adapted global features plus
//! identity cross-entropy on the part heads), then adapts it to an
//! unlabeled target domain by alternating density-based pseudo-labeling
//! with group-contrastive refinement against a momentum-updated cluster
//! memory. Camera-aware CMC/mAP evaluation and a synthetic domain-shift
//! generator close the loop for verification.
//!
//! Everything is deterministic given the configured seeds: randomness goes
//! through one named generator ([`numerics::SeededRng`], ChaCha8 with
//! derived child streams) and all reductions run in fixed order. Hot loops
//! (pairwise distances, batch forwards, embedding extraction, per-query
//! evaluation) are data-parallel via rayon behind the default-on `parallel`
//! feature; the sequential twins (`*_seq`) are always compiled and produce
//! bit-identical results.

pub mod clustering;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod losses;
pub mod memory;
pub mod model;
pub mod numerics;
mod parallel;
pub mod pipeline;
pub mod training;

pub mod cli;

pub use error::{Error, Result};
