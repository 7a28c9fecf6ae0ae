//! The online threshold update.
//!
//! At step `t` the prediction set is `{y : s_t(x, y) <= q_t}` and, after the
//! score is revealed, the threshold moves by
//!
//! ```text
//! q_{t+1} = q_t + eta_t * (1{s_t > q_t} - alpha)
//! ```
//!
//! which is a subgradient step on the pinball loss `rho_{1-alpha}(s_t - q_t)`.
//! Stepping is a pure transition: the old state goes in, the new state comes
//! out, so runs can be replayed and snapshotted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::DeltaAccount;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub alpha: f64,
    pub q_init: f64,
    /// Declared upper bound `B` on scores; gates envelope and bound checks.
    pub score_bound: Option<f64>,
}

impl TrackerConfig {
    /// `q_init` defaults to `B/2` with a declared bound, else 0.
    pub fn new(alpha: f64, q_init: Option<f64>, score_bound: Option<f64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if let Some(b) = score_bound {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::config(format!("score bound must be finite and >= 0, got {b}")));
            }
        }
        let q_init = q_init.unwrap_or_else(|| score_bound.map_or(0.0, |b| b / 2.0));
        if !q_init.is_finite() {
            return Err(Error::config("q_init must be finite"));
        }
        if let Some(b) = score_bound {
            if !(0.0..=b).contains(&q_init) {
                return Err(Error::config(format!(
                    "q_init must lie in [0, B] = [0, {b}], got {q_init}"
                )));
            }
        }
        Ok(Self {
            alpha,
            q_init,
            score_bound,
        })
    }

    pub fn initial_state(&self) -> TrackerState {
        TrackerState::new(self.q_init)
    }
}

/// One observed conformal score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub score: f64,
    pub timestamp: Option<u64>,
}

impl StreamEvent {
    pub fn new(score: f64) -> Self {
        Self {
            score,
            timestamp: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerState {
    /// Index of the step about to be taken (1-based).
    pub t: u64,
    /// Threshold `q_t` used for that step.
    pub q: f64,
    /// `M_{t-1}`, the largest step size used so far (0 before the first step).
    pub running_max_eta: f64,
    pub running_min_eta: Option<f64>,
    pub delta: DeltaAccount,
    pub miss_count: u64,
    /// Largest score observed so far.
    pub max_score: Option<f64>,
    /// Number of scores seen outside `[0, B]` (declared bound only).
    pub out_of_range: u64,
}

impl TrackerState {
    pub fn new(q_init: f64) -> Self {
        Self {
            t: 1,
            q: q_init,
            running_max_eta: 0.0,
            running_min_eta: None,
            delta: DeltaAccount::new(),
            miss_count: 0,
            max_score: None,
            out_of_range: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t - 1
    }

    pub fn delta_l1(&self) -> f64 {
        self.delta.delta_l1
    }

    /// `N_t`, the number of step-size increases so far.
    pub fn n_resets(&self) -> u64 {
        self.delta.n_increases
    }

    /// Declared bound, else the running maximum of observed scores.
    pub fn effective_bound(&self, config: &TrackerConfig) -> Option<f64> {
        config.score_bound.or(self.max_score)
    }

    /// Advances one step. See [`step`].
    pub fn step(&self, config: &TrackerConfig, eta: f64, event: StreamEvent) -> Result<(bool, Self)> {
        step(self, config, eta, event)
    }
}

/// Evaluates the set at `state.q` on `event` and applies the update.
///
/// Returns whether the score was covered, plus the successor state.
pub fn step(
    state: &TrackerState,
    config: &TrackerConfig,
    eta: f64,
    event: StreamEvent,
) -> Result<(bool, TrackerState)> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::RejectedInput {
            step: state.t,
            reason: format!("step size must be positive and finite, got {eta}"),
        });
    }
    if !event.score.is_finite() {
        return Err(Error::RejectedInput {
            step: state.t,
            reason: format!("score must be finite, got {}", event.score),
        });
    }
    let covered = set_membership(state.q, event.score);
    let err = if covered { 0.0 } else { 1.0 };
    let mut next = *state;
    next.q = state.q + eta * (err - config.alpha);
    next.t = state.t + 1;
    next.running_max_eta = state.running_max_eta.max(eta);
    next.running_min_eta = Some(state.running_min_eta.map_or(eta, |m| m.min(eta)));
    next.delta = state.delta.update(eta);
    next.miss_count += u64::from(!covered);
    next.max_score = Some(state.max_score.map_or(event.score, |m| m.max(event.score)));
    if let Some(b) = config.score_bound {
        if event.score < 0.0 || event.score > b {
            next.out_of_range += 1;
        }
    }
    Ok((covered, next))
}

/// Prediction-set membership in score space: covered iff `score <= q`.
#[inline]
pub fn set_membership(q: f64, score: f64) -> bool {
    score <= q
}

/// Range `[-alpha * M, B + (1 - alpha) * M]` that confines `q_t` whenever all
/// scores so far lie in `[0, B]`, with `M = M_{t-1}`.
pub fn threshold_envelope(config: &TrackerConfig, running_max_eta: f64) -> Result<(f64, f64)> {
    let b = config.score_bound.ok_or(Error::EnvelopeUnavailable)?;
    Ok((
        -config.alpha * running_max_eta,
        b + (1.0 - config.alpha) * running_max_eta,
    ))
}

/// Degeneracy class of the set implied by a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetClass {
    Empty,
    Proper,
    Full,
}

impl SetClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            SetClass::Empty => "empty",
            SetClass::Proper => "proper",
            SetClass::Full => "full",
        }
    }
}

impl std::fmt::Display for SetClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `Full` iff `q >= bound`, `Empty` iff `q < 0`, else `Proper`.
pub fn set_state_class(q: f64, bound: f64) -> SetClass {
    if q >= bound {
        SetClass::Full
    } else if q < 0.0 {
        SetClass::Empty
    } else {
        SetClass::Proper
    }
}

/// Pinball-loss subgradient in `q` used by the update: `-(1 - alpha)` when
/// the score exceeds the threshold, `alpha` otherwise.
pub fn pinball_subgradient(alpha: f64, q: f64, score: f64) -> f64 {
    if score > q {
        -(1.0 - alpha)
    } else {
        alpha
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg(alpha: f64) -> TrackerConfig {
        TrackerConfig::new(alpha, Some(0.5), Some(1.0)).unwrap()
    }

    #[test]
    fn step_branches() {
        let c = cfg(0.1);
        let s = TrackerState::new(0.5);
        let (covered, next) = s.step(&c, 0.1, StreamEvent::new(0.7)).unwrap();
        assert!(!covered);
        assert_relative_eq!(next.q, 0.59, epsilon = 1e-12);
        assert_eq!(next.t, 2);
        assert_eq!(next.miss_count, 1);

        let (covered, next) = s.step(&c, 0.1, StreamEvent::new(0.3)).unwrap();
        assert!(covered);
        assert_relative_eq!(next.q, 0.49, epsilon = 1e-12);

        // tie counts as covered
        let (covered, next) = s.step(&c, 0.1, StreamEvent::new(0.5)).unwrap();
        assert!(covered);
        assert_relative_eq!(next.q, 0.49, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let c = cfg(0.1);
        let s = TrackerState::new(0.5);
        assert!(s.step(&c, 0.0, StreamEvent::new(0.1)).is_err());
        assert!(s.step(&c, -1.0, StreamEvent::new(0.1)).is_err());
        assert!(s.step(&c, 0.1, StreamEvent::new(f64::NAN)).is_err());
        assert!(s.step(&c, 0.1, StreamEvent::new(f64::INFINITY)).is_err());
    }

    #[test]
    fn membership() {
        assert!(set_membership(1.0, 1.0));
        assert!(!set_membership(0.0, 0.5));
        for s in [0.0, 0.3, 1.0] {
            assert!(!set_membership(-0.01, s));
        }
    }

    #[test]
    fn envelope_examples() {
        let c = TrackerConfig::new(0.1, None, Some(1.0)).unwrap();
        let (lo, hi) = threshold_envelope(&c, 0.05).unwrap();
        assert_relative_eq!(lo, -0.005);
        assert_relative_eq!(hi, 1.045);
        assert_eq!(threshold_envelope(&c, 0.0).unwrap(), (0.0, 1.0));
        let c = TrackerConfig::new(0.5, None, Some(2.0)).unwrap();
        let (lo, hi) = threshold_envelope(&c, 0.2).unwrap();
        assert_relative_eq!(lo, -0.1);
        assert_relative_eq!(hi, 2.1);
        let c = TrackerConfig::new(0.1, None, None).unwrap();
        assert!(matches!(threshold_envelope(&c, 0.1), Err(Error::EnvelopeUnavailable)));
    }

    #[test]
    fn set_classes() {
        assert_eq!(set_state_class(1.2, 1.0), SetClass::Full);
        assert_eq!(set_state_class(-0.3, 1.0), SetClass::Empty);
        assert_eq!(set_state_class(0.4, 1.0), SetClass::Proper);
    }

    #[test]
    fn config_defaults_and_validation() {
        assert_eq!(TrackerConfig::new(0.1, None, Some(2.0)).unwrap().q_init, 1.0);
        assert_eq!(TrackerConfig::new(0.1, None, None).unwrap().q_init, 0.0);
        assert!(TrackerConfig::new(0.0, None, None).is_err());
        assert!(TrackerConfig::new(1.0, None, None).is_err());
        assert!(TrackerConfig::new(0.1, Some(1.5), Some(1.0)).is_err());
        assert!(TrackerConfig::new(0.1, Some(-0.1), Some(1.0)).is_err());
        // no bound: any finite start is allowed
        assert!(TrackerConfig::new(0.1, Some(-3.0), None).is_ok());
    }

    #[test]
    fn flags_out_of_range_without_clipping() {
        let c = cfg(0.1);
        let (_, next) = TrackerState::new(0.5)
            .step(&c, 0.1, StreamEvent::new(1.5))
            .unwrap();
        assert_eq!(next.out_of_range, 1);
        assert_eq!(next.max_score, Some(1.5));
    }

    #[test]
    fn state_serde_round_trip() {
        let c = cfg(0.1);
        let (_, s) = TrackerState::new(0.5)
            .step(&c, 0.3, StreamEvent::new(0.9))
            .unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: TrackerState = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
    }

    proptest! {
        #[test]
        fn telescoping_and_envelope(
            alpha in 0.01f64..0.99,
            q0 in 0.0f64..1.0,
            steps in prop::collection::vec((0.0f64..=1.0, 1e-3f64..2.0), 1..300),
        ) {
            let c = TrackerConfig::new(alpha, Some(q0), Some(1.0)).unwrap();
            let mut s = c.initial_state();
            let mut weighted = 0.0;
            let mut eta_sum = 0.0;
            for &(score, eta) in &steps {
                let (lo, hi) = threshold_envelope(&c, s.running_max_eta).unwrap();
                prop_assert!(lo <= s.q && s.q <= hi, "q={} outside [{lo}, {hi}]", s.q);
                let (covered, next) = s.step(&c, eta, StreamEvent::new(score)).unwrap();
                weighted += eta * (if covered { 0.0 } else { 1.0 } - alpha);
                eta_sum += eta;
                s = next;
            }
            let resid = (s.q - q0 - weighted).abs();
            prop_assert!(resid <= 1e-9 * (1.0 + q0.abs() + eta_sum));
        }

        #[test]
        fn miss_exceeds_cover_by_eta(alpha in 0.01f64..0.99, q in -2.0f64..2.0, eta in 1e-4f64..5.0) {
            let c = TrackerConfig::new(alpha, Some(0.0), None).unwrap();
            let s = TrackerState::new(q);
            let (_, miss) = s.step(&c, eta, StreamEvent::new(q + 1.0)).unwrap();
            let (_, cover) = s.step(&c, eta, StreamEvent::new(q - 1.0)).unwrap();
            prop_assert!(miss.q > cover.q);
            prop_assert!(((miss.q - cover.q) - eta).abs() <= 1e-12 * (1.0 + q.abs() + eta));
        }

        #[test]
        fn update_is_pinball_subgradient_step(
            alpha in 0.01f64..0.99, q in -2.0f64..2.0, eta in 1e-4f64..5.0, score in -3.0f64..3.0,
        ) {
            let c = TrackerConfig::new(alpha, Some(0.0), None).unwrap();
            let (_, next) = TrackerState::new(q).step(&c, eta, StreamEvent::new(score)).unwrap();
            let expected = q - eta * pinball_subgradient(alpha, q, score);
            prop_assert!((next.q - expected).abs() <= 1e-12 * (1.0 + q.abs() + eta));
        }
    }
}
