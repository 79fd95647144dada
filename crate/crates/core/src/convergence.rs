//! Loop termination logic: success thresholds, iteration budget, and
//! diminishing returns.

use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Convergence thresholds. Distinct from the feedback diagnosis thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopThresholds {
    /// Minimum information gain for success (strict).
    pub tau_elbo: f64,
    /// Minimum max |Spearman| for success (strict).
    pub tau_rho: f64,
    /// Iteration budget.
    pub k_max: usize,
    /// Diminishing-returns threshold on consecutive information-gain deltas.
    pub epsilon: f64,
    /// Consecutive small deltas required before stopping early.
    pub m: usize,
}

impl Default for LoopThresholds {
    fn default() -> Self {
        Self {
            tau_elbo: 0.01,
            tau_rho: 0.2,
            k_max: 5,
            epsilon: 0.001,
            m: 2,
        }
    }
}

impl LoopThresholds {
    pub fn validate(&self) -> Result<(), String> {
        if self.tau_elbo <= 0.0 || self.tau_rho <= 0.0 || self.epsilon <= 0.0 {
            return Err(String::from("thresholds must be > 0"));
        }
        if self.m < 1 || self.k_max < 1 {
            return Err(String::from("m and k_max must be >= 1"));
        }
        Ok(())
    }
}

/// Outcome of the convergence check after a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    /// Latest round passed both thresholds.
    Success,
    /// Budget exhausted without success.
    MaxIters,
    /// Information gain plateaued for `m` consecutive round pairs.
    Diminishing,
    Continue,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Success => write!(f, "SUCCESS"),
            Self::MaxIters => write!(f, "MAX_ITERS"),
            Self::Diminishing => write!(f, "DIMINISHING"),
            Self::Continue => write!(f, "CONTINUE"),
        }
    }
}

/// The per-round numbers the decision depends on. `None` values mark rounds
/// whose generator failed, so no signal exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: usize,
    pub delta_elbo: Option<f64>,
    pub rho_max: Option<f64>,
}

impl RoundOutcome {
    pub fn new(round: usize, delta_elbo: f64, rho_max: f64) -> Self {
        Self { round, delta_elbo: Some(delta_elbo), rho_max: Some(rho_max) }
    }

    pub fn failed(round: usize) -> Self {
        Self { round, delta_elbo: None, rho_max: None }
    }
}

/// Pure decision function over the round history.
///
/// Priority: SUCCESS > MAX_ITERS > DIMINISHING > CONTINUE. Success requires
/// the *latest* round to pass both thresholds strictly. Diminishing returns
/// needs the last `m` consecutive pairs of validated rounds to differ by less
/// than `epsilon` in information gain (a failed round breaks the chain), so
/// it cannot fire before round `m + 1`.
pub fn check_convergence(history: &[RoundOutcome], thresholds: &LoopThresholds) -> Decision {
    assert!(!history.is_empty(), "convergence check needs at least one round");
    let latest = history.last().expect("non-empty history");
    if let (Some(delta), Some(rho)) = (latest.delta_elbo, latest.rho_max) {
        if delta > thresholds.tau_elbo && rho > thresholds.tau_rho {
            return Decision::Success;
        }
    }
    if history.len() >= thresholds.k_max {
        return Decision::MaxIters;
    }
    if history.len() >= thresholds.m + 1 {
        let tail = &history[history.len() - thresholds.m - 1..];
        let plateaued = tail.windows(2).all(|pair| {
            match (pair[0].delta_elbo, pair[1].delta_elbo) {
                (Some(a), Some(b)) => (b - a).abs() < thresholds.epsilon,
                _ => false,
            }
        });
        if plateaued {
            return Decision::Diminishing;
        }
    }
    Decision::Continue
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn published_trajectory_decides_fail_fail_success() {
        let t = LoopThresholds::default();
        let rounds = [
            RoundOutcome::new(1, 0.002, 0.142),
            RoundOutcome::new(2, 0.0045, 0.188),
            RoundOutcome::new(3, 0.0112, 0.215),
        ];
        assert_eq!(check_convergence(&rounds[..1], &t), Decision::Continue);
        assert_eq!(check_convergence(&rounds[..2], &t), Decision::Continue);
        assert_eq!(check_convergence(&rounds[..3], &t), Decision::Success);
    }

    #[test]
    fn thresholds_are_strict() {
        let t = LoopThresholds::default();
        let exactly_tau = [RoundOutcome::new(1, 0.01, 0.25)];
        assert_eq!(check_convergence(&exactly_tau, &t), Decision::Continue);
        let exactly_rho = [RoundOutcome::new(1, 0.02, 0.2)];
        assert_eq!(check_convergence(&exactly_rho, &t), Decision::Continue);
    }

    #[test]
    fn budget_exhaustion_beats_diminishing() {
        let t = LoopThresholds { k_max: 3, ..LoopThresholds::default() };
        let rounds = vec![
            RoundOutcome::new(1, 0.002, 0.1),
            RoundOutcome::new(2, 0.0021, 0.1),
            RoundOutcome::new(3, 0.0022, 0.1),
        ];
        assert_eq!(check_convergence(&rounds, &t), Decision::MaxIters);
    }

    #[test]
    fn success_beats_budget() {
        let t = LoopThresholds { k_max: 2, ..LoopThresholds::default() };
        let rounds = vec![
            RoundOutcome::new(1, 0.002, 0.1),
            RoundOutcome::new(2, 0.02, 0.3),
        ];
        assert_eq!(check_convergence(&rounds, &t), Decision::Success);
    }

    #[test]
    fn diminishing_needs_m_consecutive_pairs() {
        let t = LoopThresholds::default(); // epsilon 0.001, m 2
        let rounds = vec![
            RoundOutcome::new(1, 0.0050, 0.1),
            RoundOutcome::new(2, 0.0052, 0.1),
            RoundOutcome::new(3, 0.0051, 0.1),
        ];
        assert_eq!(check_convergence(&rounds[..2], &t), Decision::Continue);
        assert_eq!(check_convergence(&rounds, &t), Decision::Diminishing);
    }

    #[test]
    fn failed_round_breaks_the_plateau_chain() {
        let t = LoopThresholds::default();
        let rounds = vec![
            RoundOutcome::new(1, 0.0050, 0.1),
            RoundOutcome::failed(2),
            RoundOutcome::new(3, 0.0051, 0.1),
        ];
        assert_eq!(check_convergence(&rounds, &t), Decision::Continue);
    }

    #[test]
    fn decision_is_pure() {
        let t = LoopThresholds::default();
        let rounds = vec![
            RoundOutcome::new(1, 0.002, 0.142),
            RoundOutcome::new(2, 0.0045, 0.188),
        ];
        assert_eq!(check_convergence(&rounds, &t), check_convergence(&rounds, &t));
    }
}
