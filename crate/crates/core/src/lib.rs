//! Robustness and bias diagnostics for relation-extraction classifiers.
//!
//! The crate builds randomized, adversarial, counterfactual and bias evaluation sets
//! from a labeled corpus, emits the matching augmented training sets, and scores any
//! classifier reachable through the [`oracle`] contract.

pub mod attack;
pub mod bias;
pub mod corpus;
pub mod counterfactual;
pub mod error;
pub mod lexicon;
pub mod oracle;
pub mod perturb;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
