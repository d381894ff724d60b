//! Context-aware CycleGAN feature synthesis for intensity classes with few
//! training instances.
//!
//! Pipeline: pretrain a softmax classifier on real features, train two
//! context-conditioned generators and critics on unpaired class pairs,
//! synthesize features for rare classes, retrain the classifier on the
//! union and compare against a real-only baseline.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod models;
pub mod training;

pub use error::{Error, Result};
