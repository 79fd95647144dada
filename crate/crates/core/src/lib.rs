//! Core numerics for the VIGOR+ confounder refinement loop.
//!
//! This crate is the pure-computation half of the workspace: a minimal dense
//! neural-network kernel, the CEVAE model with manual backpropagation, the
//! validation statistics (information gain, correlations, kNN mutual
//! information, predictive R²), the feedback translation into the fixed
//! natural-language template, the convergence decision logic, and the
//! synthetic planted-confounder benchmark.
//!
//! Everything here is deterministic given explicit seeds and works without
//! the standard library (`alloc` is required). IO, file formats, generator
//! backends, and the CLI live in the companion `vigor-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod cevae;
pub mod confounder;
pub mod convergence;
pub mod dataset;
pub mod feedback;
pub mod fmath;
pub mod matrix;
pub mod neural;
pub mod rng;
pub mod synth;
pub mod validation;

pub use cevae::{CevaeConfig, CevaeError, CevaeModel, ElboReport, LatentPosterior, TrainedCevae};
pub use confounder::{ConfounderProposal, DistributionSpec};
pub use convergence::{check_convergence, Decision, LoopThresholds};
pub use dataset::{split, Dataset, DatasetError};
pub use feedback::{DiagnosisCode, FeedbackConfig, FeedbackMessage};
pub use matrix::Matrix;
pub use synth::SyntheticSpec;
pub use validation::{CorrelationResult, PerDimStat, ValidationSignal};
