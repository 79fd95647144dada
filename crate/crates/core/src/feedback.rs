//! Feedback translation: converts a validation signal plus generation history
//! into the fixed natural-language template sent to the generator.
//!
//! Rendering is a pure function; identical inputs produce byte-identical
//! output, so the template is golden-file testable.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::fmath;
use crate::matrix::Matrix;
use crate::validation::{spearman, ValidationSignal};

/// Verbatim diagnosis sentences.
const REDUNDANT_TEXT: &str =
    "The generated confounder is statistically redundant with observed covariates.";
const WEAK_ALIGNMENT_TEXT: &str =
    "The confounder shows weak alignment with data-driven latent factors.";
const NOISE_TEXT: &str = "The confounder captures noise rather than true confounding.";
/// All-clear sentence for the case no rule fires (the rule set only covers
/// failures; a non-empty diagnosis keeps the template well-formed).
const ALL_CLEAR_TEXT: &str = "No deficiency detected.";

#[derive(Debug, Clone, PartialEq)]
pub enum FeedbackError {
    /// A template field could not be filled.
    MissingField { field: &'static str },
}

impl fmt::Display for FeedbackError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingField { field } => write!(f, "cannot render feedback: missing {field}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for FeedbackError {}

/// Diagnosis thresholds plus the hint heuristics' knobs.
///
/// These are deliberately separate from the loop's convergence thresholds
/// (0.01 / 0.2): conflating the two changes which sentences fire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    /// Below this information gain the confounder is called redundant.
    pub redundancy_threshold: f64,
    /// Below this max |Spearman| the confounder is called weakly aligned.
    pub weak_alignment_threshold: f64,
    /// Covariates whose |Spearman| with the best latent dimension exceeds
    /// this are listed as directions to avoid.
    pub redundant_covariate_threshold: f64,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self {
            redundancy_threshold: 0.001,
            weak_alignment_threshold: 0.1,
            redundant_covariate_threshold: 0.3,
        }
    }
}

impl FeedbackConfig {
    pub fn validate(&self) -> core::result::Result<(), String> {
        if self.redundancy_threshold <= 0.0
            || self.weak_alignment_threshold <= 0.0
            || self.redundant_covariate_threshold <= 0.0
        {
            return Err(String::from("feedback thresholds must be > 0"));
        }
        Ok(())
    }
}

/// Diagnosis rules, in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagnosisCode {
    /// Information gain below the redundancy threshold.
    Redundant,
    /// Max |Spearman| below the alignment threshold.
    WeakAlignment,
    /// Positive information gain without latent alignment.
    Noise,
}

impl DiagnosisCode {
    pub fn sentence(self) -> &'static str {
        match self {
            Self::Redundant => REDUNDANT_TEXT,
            Self::WeakAlignment => WEAK_ALIGNMENT_TEXT,
            Self::Noise => NOISE_TEXT,
        }
    }
}

/// Applies the diagnosis rules; returns the fired codes in rule order and the
/// concatenated diagnosis text (or the all-clear sentence).
pub fn diagnose(signal: &ValidationSignal, config: &FeedbackConfig) -> (Vec<DiagnosisCode>, String) {
    let mut codes = Vec::new();
    if signal.delta_elbo < config.redundancy_threshold {
        codes.push(DiagnosisCode::Redundant);
    }
    if signal.rho_max < config.weak_alignment_threshold {
        codes.push(DiagnosisCode::WeakAlignment);
    }
    if signal.delta_elbo > 0.0 && signal.rho_max < config.weak_alignment_threshold {
        codes.push(DiagnosisCode::Noise);
    }
    let text = if codes.is_empty() {
        String::from(ALL_CLEAR_TEXT)
    } else {
        let sentences: Vec<&str> = codes.iter().map(|c| c.sentence()).collect();
        sentences.join(" ")
    };
    (codes, text)
}

/// Directional hints derived from covariate/latent rank correlations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Hints {
    /// Covariates already explained by the best-correlated latent dimension.
    pub redundant_covariates: Vec<String>,
    /// Under-explained covariate domains, phrased "factors related to {name}".
    pub suggested_domains: Vec<String>,
}

/// Computes hints from the baseline posterior means and the covariates.
///
/// `redundant_covariates`: covariate names whose |Spearman| with the latent
/// dimension achieving `rho_max` strictly exceeds the configured threshold.
/// `suggested_domains`: the bottom quartile (at least one) of covariates by
/// max |Spearman| to any latent dimension. Degenerate correlations count as
/// zero.
pub fn derive_hints(
    posterior_mu: &Matrix,
    x: &Matrix,
    column_names: &[String],
    signal: &ValidationSignal,
    config: &FeedbackConfig,
) -> Hints {
    let latent = posterior_mu.cols();
    let d = x.cols();
    if latent == 0 || d == 0 || signal.per_dim.is_empty() {
        return Hints::default();
    }
    let best_dim = signal
        .per_dim
        .iter()
        .max_by(|a, b| {
            a.spearman
                .abs()
                .partial_cmp(&b.spearman.abs())
                .unwrap_or(core::cmp::Ordering::Equal)
        })
        .map(|s| s.dim)
        .unwrap_or(0);

    let abs_rho = |a: &[f64], b: &[f64]| -> f64 {
        spearman(a, b).map(|c| c.r.abs()).unwrap_or(0.0)
    };

    let best_col = posterior_mu.col_vec(best_dim);
    let latent_cols: Vec<Vec<f64>> = (0..latent).map(|j| posterior_mu.col_vec(j)).collect();

    let mut redundant = Vec::new();
    let mut coverage: Vec<(usize, f64)> = Vec::with_capacity(d);
    for c in 0..d {
        let xc = x.col_vec(c);
        if abs_rho(&xc, &best_col) > config.redundant_covariate_threshold {
            redundant.push(column_names[c].clone());
        }
        let max_any = latent_cols
            .iter()
            .map(|zc| abs_rho(&xc, zc))
            .fold(0.0f64, f64::max);
        coverage.push((c, max_any));
    }
    coverage.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let quartile = (d / 4).max(1);
    let suggested = coverage
        .iter()
        .take(quartile)
        .map(|&(c, _)| alloc::format!("factors related to {}", column_names[c]))
        .collect();

    Hints {
        redundant_covariates: redundant,
        suggested_domains: suggested,
    }
}

/// A rendered feedback message for one completed round.
///
/// `round` is the completed round's index; the exclusion list holds every
/// confounder name generated so far (rounds 1..=k), so the *upcoming* round
/// never reuses them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackMessage {
    pub round: usize,
    pub rendered_text: String,
    pub diagnosis_codes: Vec<DiagnosisCode>,
    pub exclusion_list: Vec<String>,
    pub suggested_domains: Vec<String>,
    pub redundant_covariates: Vec<String>,
}

fn format_p_segment(p: f64) -> String {
    if p < 1e-4 {
        // Tightest power-of-ten bound above p.
        let exponent = if p <= 0.0 {
            -308
        } else {
            fmath::floor(fmath::log10(p)) as i32 + 1
        };
        alloc::format!("p<1e{exponent}")
    } else {
        alloc::format!("p={p:.4}")
    }
}

fn join_or_none(items: &[String]) -> String {
    if items.is_empty() {
        String::from("none")
    } else {
        items.join(", ")
    }
}

/// Fills the feedback template for the completed round `history.len()`.
///
/// `history` holds the confounder names of rounds `1..=k` in order; the last
/// entry is the round being diagnosed. The p-value shown is the Spearman
/// p-value of the latent dimension achieving `rho_max`.
pub fn render(
    signal: &ValidationSignal,
    diagnosis_codes: Vec<DiagnosisCode>,
    diagnosis_text: &str,
    history: &[String],
    hints: &Hints,
) -> core::result::Result<FeedbackMessage, FeedbackError> {
    let round = history.len();
    if round == 0 {
        return Err(FeedbackError::MissingField { field: "history (round >= 1)" });
    }
    let name = history.last().expect("non-empty history");
    let best = signal
        .per_dim
        .iter()
        .max_by(|a, b| {
            a.spearman
                .abs()
                .partial_cmp(&b.spearman.abs())
                .unwrap_or(core::cmp::Ordering::Equal)
        })
        .ok_or(FeedbackError::MissingField { field: "per_dim (p_value)" })?;

    let rendered_text = alloc::format!(
        "=== VIGOR+ Validation Feedback (Round {round}) ===\n\
         \n\
         [Previous Attempt]\n\
         - Confounder Name: {name}\n\
         - Information Gain (ELBO): {delta:.4}\n\
         - Max Correlation with Latent z: {rho:.3} ({p_segment})\n\
         - Predictive R-squared: {r2:.3}\n\
         \n\
         [Diagnosis]\n\
         {diagnosis}\n\
         \n\
         [Guidance for Next Round]\n\
         1. Avoid generating confounders similar to: {exclusion}\n\
         2. Consider directions orthogonal to: {redundant}\n\
         3. Suggested semantic domains: {suggested}\n\
         \n\
         [Requirements]\n\
         - Generate a NEW confounder different from previous attempts\n\
         - Provide causal explanation linking to treatment and outcome\n\
         - Specify distribution type and parameter inference logic\n",
        round = round,
        name = name,
        delta = signal.delta_elbo,
        rho = signal.rho_max,
        p_segment = format_p_segment(best.spearman_p),
        r2 = signal.r_squared,
        diagnosis = diagnosis_text,
        exclusion = join_or_none(history),
        redundant = join_or_none(&hints.redundant_covariates),
        suggested = join_or_none(&hints.suggested_domains),
    );

    Ok(FeedbackMessage {
        round,
        rendered_text,
        diagnosis_codes,
        exclusion_list: history.to_vec(),
        suggested_domains: hints.suggested_domains.clone(),
        redundant_covariates: hints.redundant_covariates.clone(),
    })
}
