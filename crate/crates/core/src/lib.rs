//! Fairness-audit harness and desk-scale mitigation trainer for LLM-based
//! clinical trial matching and medical question answering.
//!
//! The pipeline: canonical corpora -> SDOH counterfactual variants -> model
//! backends (HTTP, deterministic mock, or a trained embedding model) ->
//! per-category outcomes -> fairness metrics, correlation analysis, and
//! reports. The trainer realizes the contrastive mitigation objective on a
//! small embedding model with finite-difference-verified gradients.

pub mod audit;
pub mod category;
pub mod config;
pub mod corpus;
pub mod error;
pub mod gateway;
pub mod lexicon;
pub mod metrics;
pub mod perturb;
pub mod ranker;
pub mod report;
pub mod stablehash;
pub mod svg;
pub mod trainer;

pub use category::{Axis, Category};
pub use error::{Error, Result};
pub use lexicon::Lexicon;
