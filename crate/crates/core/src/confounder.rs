//! Candidate-confounder proposals and deterministic value sampling.
//!
//! A proposal carries the generated name/explanation, the per-individual
//! distribution parameters, and the sampled values. Sampling is pure given a
//! seed: Normal deviates via Box–Muller, Bernoulli via a uniform threshold.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub enum ProposalError {
    LengthMismatch { expected: usize, got: usize },
    InvalidParam { row: usize, message: String },
}

impl fmt::Display for ProposalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LengthMismatch { expected, got } => {
                write!(f, "distribution has {got} parameter rows, dataset has {expected}")
            }
            Self::InvalidParam { row, message } => write!(f, "row {row}: {message}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ProposalError {}

/// Per-individual distribution parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    /// `(mean, std)` per individual; `std` must be non-negative.
    Normal { params: Vec<(f64, f64)> },
    /// Success probability per individual; must lie in `[0,1]`.
    Bernoulli { params: Vec<f64> },
}

impl DistributionSpec {
    pub fn len(&self) -> usize {
        match self {
            Self::Normal { params } => params.len(),
            Self::Bernoulli { params } => params.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Normal { .. } => "normal",
            Self::Bernoulli { .. } => "bernoulli",
        }
    }

    pub fn validate(&self) -> Result<(), ProposalError> {
        match self {
            Self::Normal { params } => {
                for (row, &(mean, std)) in params.iter().enumerate() {
                    if !mean.is_finite() || !std.is_finite() || std < 0.0 {
                        return Err(ProposalError::InvalidParam {
                            row,
                            message: alloc::format!("invalid normal params ({mean}, {std})"),
                        });
                    }
                }
                Ok(())
            }
            Self::Bernoulli { params } => {
                for (row, &p) in params.iter().enumerate() {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(ProposalError::InvalidParam {
                            row,
                            message: alloc::format!("bernoulli p {p} outside [0,1]"),
                        });
                    }
                }
                Ok(())
            }
        }
    }
}

/// Draws one value per individual from the per-row parameters.
pub fn sample_values(spec: &DistributionSpec, n: usize, seed: u64) -> Result<Vec<f64>, ProposalError> {
    if spec.len() != n {
        return Err(ProposalError::LengthMismatch { expected: n, got: spec.len() });
    }
    spec.validate()?;
    let mut rng = rng::seeded(seed);
    Ok(match spec {
        DistributionSpec::Normal { params } => params
            .iter()
            .map(|&(mean, std)| mean + std * rng::standard_normal(&mut rng))
            .collect(),
        DistributionSpec::Bernoulli { params } => params
            .iter()
            .map(|&p| if rng::uniform(&mut rng) < p { 1.0 } else { 0.0 })
            .collect(),
    })
}

/// One generation round's confounder: name, explanation, distribution, and
/// the sampled values (length = dataset size).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfounderProposal {
    pub name: String,
    pub explanation: String,
    pub distribution: DistributionSpec,
    pub values: Vec<f64>,
}

impl ConfounderProposal {
    /// Builds a proposal by sampling values from the distribution.
    pub fn sampled(
        name: String,
        explanation: String,
        distribution: DistributionSpec,
        n: usize,
        seed: u64,
    ) -> Result<Self, ProposalError> {
        let values = sample_values(&distribution, n, seed)?;
        Ok(Self { name, explanation, distribution, values })
    }
}
