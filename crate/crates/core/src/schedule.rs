//! Step-size schedules and inverse-step-size accounting.
//!
//! Three rules are supported:
//!
//! - `Fixed`: `eta_t = eta` for every step.
//! - `PolyDecay`: `eta_t = c * t^(-1/2 - eps)` with `eps` in `(0, 1/2)`.
//! - `DecayAdapt`: polynomial decay until a run of `n_miscoverage` consecutive
//!   misses or `n_coverage` consecutive covers is observed. A changepoint is
//!   then declared at the current step `T_cp` and the rate restarts as
//!   `b_hat * (t - T_cp)^(-1/2 - eps)` from the following step on.
//!
//! [`DeltaAccount`] tracks `||Delta_{1:t}||_1` for the sequence actually
//! emitted, where `Delta_1 = 1/eta_1` and `Delta_t = 1/eta_t - 1/eta_{t-1}`.
//! For nonincreasing schedules this telescopes to `1/eta_t`; with resets it is
//! at most `2 N_t / min eta`, `N_t` being the number of step-size increases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default consecutive-miss count that declares a changepoint.
pub const DEFAULT_N_MISCOVERAGE: u32 = 10;
/// Default consecutive-cover count that declares a changepoint.
pub const DEFAULT_N_COVERAGE: u32 = 30;
/// Decay exponent offset used throughout the experiments.
pub const DEFAULT_EPSILON: f64 = 0.1;
/// Constant step size of the fixed baseline.
pub const DEFAULT_FIXED_ETA: f64 = 0.05;

/// Declarative step-size rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ScheduleSpec {
    Fixed {
        eta: f64,
    },
    PolyDecay {
        scale: f64,
        epsilon: f64,
    },
    DecayAdapt {
        scale: f64,
        epsilon: f64,
        n_miscoverage: u32,
        n_coverage: u32,
        /// Numerator of the post-reset rate. `None` means: the declared score
        /// bound when there is one, else the running maximum of observed
        /// scores at the changepoint.
        reset_scale: Option<f64>,
    },
}

impl ScheduleSpec {
    pub fn fixed(eta: f64) -> Result<Self> {
        Self::Fixed { eta }.validated()
    }

    pub fn poly_decay(scale: f64, epsilon: f64) -> Result<Self> {
        Self::PolyDecay { scale, epsilon }.validated()
    }

    /// Decay+adapt with the default run-length triggers (10 misses, 30 covers).
    pub fn decay_adapt(scale: f64, epsilon: f64) -> Result<Self> {
        Self::DecayAdapt {
            scale,
            epsilon,
            n_miscoverage: DEFAULT_N_MISCOVERAGE,
            n_coverage: DEFAULT_N_COVERAGE,
            reset_scale: None,
        }
        .validated()
    }

    /// `eta_t = t^(-0.6)`.
    pub fn default_decaying() -> Self {
        Self::PolyDecay {
            scale: 1.0,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn default_fixed() -> Self {
        Self::Fixed {
            eta: DEFAULT_FIXED_ETA,
        }
    }

    pub fn default_decay_adapt() -> Self {
        Self::DecayAdapt {
            scale: 1.0,
            epsilon: DEFAULT_EPSILON,
            n_miscoverage: DEFAULT_N_MISCOVERAGE,
            n_coverage: DEFAULT_N_COVERAGE,
            reset_scale: None,
        }
    }

    pub fn validated(self) -> Result<Self> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive and finite, got {v}")))
            }
        }
        fn exponent(v: f64) -> Result<()> {
            if v > 0.0 && v < 0.5 {
                Ok(())
            } else {
                Err(Error::config(format!("epsilon must lie in (0, 1/2), got {v}")))
            }
        }
        match self {
            Self::Fixed { eta } => positive("eta", eta)?,
            Self::PolyDecay { scale, epsilon } => {
                positive("scale", scale)?;
                exponent(epsilon)?;
            }
            Self::DecayAdapt {
                scale,
                epsilon,
                n_miscoverage,
                n_coverage,
                reset_scale,
            } => {
                positive("scale", scale)?;
                exponent(epsilon)?;
                if n_miscoverage == 0 || n_coverage == 0 {
                    return Err(Error::config("changepoint run lengths must be at least 1"));
                }
                if let Some(b) = reset_scale {
                    positive("reset_scale", b)?;
                }
            }
        }
        Ok(self)
    }

    /// Short method label used in comparison tables.
    pub fn label(&self) -> &'static str {
        match self {
            Self::Fixed { .. } => "fixed",
            Self::PolyDecay { .. } => "decaying",
            Self::DecayAdapt { .. } => "decay+adapt",
        }
    }

    /// True when the rule can never emit an increasing step.
    pub fn is_nonincreasing(&self) -> bool {
        !matches!(self, Self::DecayAdapt { .. })
    }

    /// Step size for step `state.t` (1-based).
    pub fn eta_at(&self, state: &ScheduleState) -> f64 {
        let t = state.t.max(1) as f64;
        match *self {
            Self::Fixed { eta } => eta,
            Self::PolyDecay { scale, epsilon } => scale * t.powf(-0.5 - epsilon),
            Self::DecayAdapt { scale, epsilon, .. } => {
                if state.t_changepoint == 0 {
                    scale * t.powf(-0.5 - epsilon)
                } else {
                    let local = (state.t - state.t_changepoint) as f64;
                    state.reset_scale * local.powf(-0.5 - epsilon)
                }
            }
        }
    }

    /// Records whether step `state.t` was covered and advances the clock.
    ///
    /// `reset_scale_hint` is used as `b_hat` if a changepoint is declared and
    /// the spec carries no explicit `reset_scale`. The new rate applies from
    /// the next step.
    pub fn observe_outcome(
        &self,
        state: &ScheduleState,
        covered: bool,
        reset_scale_hint: f64,
    ) -> (ScheduleState, bool) {
        let mut next = *state;
        if covered {
            next.consecutive_covers += 1;
            next.consecutive_misses = 0;
        } else {
            next.consecutive_misses += 1;
            next.consecutive_covers = 0;
        }
        let mut declared = false;
        if let Self::DecayAdapt {
            n_miscoverage,
            n_coverage,
            reset_scale,
            ..
        } = *self
        {
            if next.consecutive_misses >= n_miscoverage || next.consecutive_covers >= n_coverage {
                declared = true;
                next.t_changepoint = state.t;
                next.consecutive_misses = 0;
                next.consecutive_covers = 0;
                next.n_changepoints += 1;
                next.reset_scale = reset_scale.unwrap_or(reset_scale_hint);
            }
        }
        next.last_eta = self.eta_at(state);
        next.t = state.t + 1;
        (next, declared)
    }
}

/// Per-stream schedule clock and run-length counters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    /// Step index the next `eta_at` call refers to (1-based).
    pub t: u64,
    pub consecutive_misses: u32,
    pub consecutive_covers: u32,
    /// Step at which the last changepoint was declared, 0 if none.
    pub t_changepoint: u64,
    /// `b_hat` in effect since the last changepoint.
    pub reset_scale: f64,
    pub last_eta: f64,
    pub n_changepoints: u64,
}

impl Default for ScheduleState {
    fn default() -> Self {
        Self {
            t: 1,
            consecutive_misses: 0,
            consecutive_covers: 0,
            t_changepoint: 0,
            reset_scale: 0.0,
            last_eta: 0.0,
            n_changepoints: 0,
        }
    }
}

/// Running `||Delta_{1:t}||_1` over the emitted step sizes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeltaAccount {
    pub delta_l1: f64,
    /// `1 / eta_{t-1}`; zero before the first step.
    pub prev_inv_eta: f64,
    /// `N_t`: number of steps with `eta_t > eta_{t-1}`.
    pub n_increases: u64,
    pub steps: u64,
    pub max_eta: f64,
    pub min_eta: Option<f64>,
}

impl DeltaAccount {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `eta` (must be positive; callers validate).
    pub fn update(&self, eta: f64) -> Self {
        let inv = eta.recip();
        let mut next = *self;
        if self.steps == 0 {
            next.delta_l1 = inv;
        } else {
            next.delta_l1 += (inv - self.prev_inv_eta).abs();
            // eta_t > eta_{t-1} exactly when 1/eta_t < 1/eta_{t-1}
            if inv < self.prev_inv_eta {
                next.n_increases += 1;
            }
        }
        next.prev_inv_eta = inv;
        next.steps += 1;
        next.max_eta = self.max_eta.max(eta);
        next.min_eta = Some(self.min_eta.map_or(eta, |m| m.min(eta)));
        next
    }

    pub fn from_etas(etas: &[f64]) -> Self {
        etas.iter().fold(Self::new(), |acc, &eta| acc.update(eta))
    }

    /// `2 N_t / min eta`, the reset-count form of the bound on `delta_l1`.
    pub fn reset_bound(&self) -> Option<f64> {
        self.min_eta.map(|m| 2.0 * self.n_increases as f64 / m)
    }
}

/// Spec plus clock, stepped together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub spec: ScheduleSpec,
    pub state: ScheduleState,
}

impl Schedule {
    pub fn new(spec: ScheduleSpec) -> Result<Self> {
        Ok(Self {
            spec: spec.validated()?,
            state: ScheduleState::default(),
        })
    }

    pub fn eta(&self) -> f64 {
        self.spec.eta_at(&self.state)
    }

    /// Returns true when a changepoint was declared at this step.
    pub fn observe(&mut self, covered: bool, reset_scale_hint: f64) -> bool {
        let (next, declared) = self
            .spec
            .observe_outcome(&self.state, covered, reset_scale_hint);
        self.state = next;
        declared
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn state_at(t: u64) -> ScheduleState {
        ScheduleState {
            t,
            ..ScheduleState::default()
        }
    }

    #[test]
    fn poly_decay_values() {
        let spec = ScheduleSpec::poly_decay(1.0, 0.1).unwrap();
        assert_eq!(spec.eta_at(&state_at(1)), 1.0);
        // 100^-0.6 = 10^-1.2
        assert_relative_eq!(spec.eta_at(&state_at(100)), 10f64.powf(-1.2), max_relative = 1e-12);
        assert_relative_eq!(spec.eta_at(&state_at(100)), 0.0631, epsilon = 1e-4);
    }

    #[test]
    fn decay_adapt_reset_rate() {
        let spec = ScheduleSpec::DecayAdapt {
            scale: 1.0,
            epsilon: 0.1,
            n_miscoverage: 10,
            n_coverage: 30,
            reset_scale: Some(1.0),
        };
        let st = ScheduleState {
            t: 501,
            t_changepoint: 500,
            reset_scale: 1.0,
            ..ScheduleState::default()
        };
        assert_eq!(spec.eta_at(&st), 1.0);
    }

    #[test]
    fn tenth_miss_declares() {
        let spec = ScheduleSpec::default_decay_adapt();
        let st = ScheduleState {
            t: 40,
            consecutive_misses: 9,
            ..ScheduleState::default()
        };
        let (next, declared) = spec.observe_outcome(&st, false, 1.0);
        assert!(declared);
        assert_eq!(next.t_changepoint, 40);
        assert_eq!((next.consecutive_misses, next.consecutive_covers), (0, 0));
        // triggering step used the pre-reset rate; the next one restarts at b_hat
        assert_relative_eq!(next.last_eta, 40f64.powf(-0.6));
        assert_eq!(spec.eta_at(&next), 1.0);
    }

    #[test]
    fn thirtieth_cover_declares() {
        let spec = ScheduleSpec::default_decay_adapt();
        let st = ScheduleState {
            t: 77,
            consecutive_covers: 29,
            ..ScheduleState::default()
        };
        let (_, declared) = spec.observe_outcome(&st, true, 1.0);
        assert!(declared);
    }

    #[test]
    fn cover_breaks_miss_run() {
        let spec = ScheduleSpec::default_decay_adapt();
        let st = ScheduleState {
            t: 7,
            consecutive_misses: 5,
            ..ScheduleState::default()
        };
        let (next, declared) = spec.observe_outcome(&st, true, 1.0);
        assert!(!declared);
        assert_eq!((next.consecutive_misses, next.consecutive_covers), (0, 1));
    }

    #[test]
    fn fixed_and_poly_never_declare() {
        for spec in [ScheduleSpec::default_fixed(), ScheduleSpec::default_decaying()] {
            let st = ScheduleState {
                consecutive_misses: 1000,
                ..ScheduleState::default()
            };
            assert!(!spec.observe_outcome(&st, false, 1.0).1);
        }
    }

    #[test]
    fn delta_account_examples() {
        let acct = DeltaAccount::from_etas(&[1.0, 0.5, 0.25]);
        assert_eq!(acct.delta_l1, 4.0);
        assert_eq!(acct.n_increases, 0);

        assert_eq!(DeltaAccount::from_etas(&[1.0, 1.0, 1.0]).delta_l1, 1.0);

        let acct = DeltaAccount::from_etas(&[0.5, 1.0]);
        assert_eq!(acct.delta_l1, 3.0);
        assert_eq!(acct.n_increases, 1);
        assert_eq!(acct.reset_bound(), Some(4.0));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ScheduleSpec::fixed(0.0).is_err());
        assert!(ScheduleSpec::fixed(f64::NAN).is_err());
        assert!(ScheduleSpec::poly_decay(1.0, 0.5).is_err());
        assert!(ScheduleSpec::poly_decay(1.0, 0.0).is_err());
        assert!(ScheduleSpec::poly_decay(-1.0, 0.1).is_err());
        assert!(ScheduleSpec::decay_adapt(1.0, 0.6).is_err());
    }

    #[test]
    fn multiple_changepoints_restart_local_clock() {
        let mut sched = Schedule::new(ScheduleSpec::default_decay_adapt()).unwrap();
        for _ in 0..10 {
            sched.observe(false, 2.0);
        }
        assert_eq!(sched.state.t_changepoint, 10);
        assert_eq!(sched.eta(), 2.0);
        for _ in 0..10 {
            sched.observe(false, 3.0);
        }
        assert_eq!(sched.state.t_changepoint, 20);
        assert_eq!(sched.state.n_changepoints, 2);
        assert_eq!(sched.eta(), 3.0);
    }
}
