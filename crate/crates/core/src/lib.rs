//! Grounding and generation of referring expressions.
//!
//! A referring expression ("the largest ball left of the red box") picks out
//! one region in a scene. The model scores each candidate region by pairing
//! it with a softly estimated context — an attention-weighted mixture of the
//! other regions — and combines referent, context, and regularization score
//! heads into a region posterior. A decoder head can reconstruct the
//! expression from the referent and its context, and policy-gradient training
//! couples the two tasks. Everything runs on a small reverse-mode tape over
//! f64 vectors, with finite-difference and enumeration oracles that certify
//! the gradients, the variational bound, and the score-function estimator.

pub mod compute;
pub mod error;

pub use error::{Error, Result};
