//! Coverage metrics, finite-sample bound reports and run summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::DeltaAccount;
use crate::tracker::{set_state_class, SetClass, TrackerConfig};

/// Per-step record of a completed (or in-progress) run.
///
/// Every series has one entry per step; `q_next` is the threshold after the
/// last step, so `q_series` plus `q_next` is `q_1 .. q_{T+1}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CoverageLedger {
    pub scores: Vec<f64>,
    pub indicators: Vec<bool>,
    pub q_series: Vec<f64>,
    pub eta_series: Vec<f64>,
    pub inst_cov_series: Option<Vec<f64>>,
    pub q_next: f64,
}

impl CoverageLedger {
    pub fn with_capacity(q_init: f64, n: usize) -> Self {
        Self {
            scores: Vec::with_capacity(n),
            indicators: Vec::with_capacity(n),
            q_series: Vec::with_capacity(n),
            eta_series: Vec::with_capacity(n),
            inst_cov_series: None,
            q_next: q_init,
        }
    }

    /// Appends step `t` (threshold `q` used at that step) and the post-update threshold.
    pub fn push(&mut self, score: f64, covered: bool, q: f64, eta: f64, q_next: f64) {
        self.scores.push(score);
        self.indicators.push(covered);
        self.q_series.push(q);
        self.eta_series.push(eta);
        self.q_next = q_next;
    }

    pub fn len(&self) -> usize {
        self.indicators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicators.is_empty()
    }

    /// First `horizon` steps; `q_next` becomes `q_{horizon+1}`.
    pub fn prefix(&self, horizon: usize) -> CoverageLedger {
        let h = horizon.min(self.len());
        let q_next = if h < self.len() {
            self.q_series[h]
        } else {
            self.q_next
        };
        CoverageLedger {
            scores: self.scores[..h].to_vec(),
            indicators: self.indicators[..h].to_vec(),
            q_series: self.q_series[..h].to_vec(),
            eta_series: self.eta_series[..h].to_vec(),
            inst_cov_series: self.inst_cov_series.as_ref().map(|v| v[..h].to_vec()),
            q_next,
        }
    }

    pub fn delta_account(&self) -> DeltaAccount {
        DeltaAccount::from_etas(&self.eta_series)
    }
}

/// Mean of the coverage indicators.
pub fn long_run_coverage(ledger: &CoverageLedger) -> Result<f64> {
    if ledger.is_empty() {
        return Err(Error::EmptyLedger);
    }
    let covered = ledger.indicators.iter().filter(|&&c| c).count();
    Ok(covered as f64 / ledger.len() as f64)
}

/// Cumulative coverage after each step.
pub fn long_run_series(ledger: &CoverageLedger) -> Vec<f64> {
    let mut covered = 0usize;
    ledger
        .indicators
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            covered += usize::from(c);
            covered as f64 / (i + 1) as f64
        })
        .collect()
}

/// Mean of the indicators over `(t - window, t]`. The first `window - 1`
/// entries average the available prefix.
pub fn rolling_coverage(ledger: &CoverageLedger, window: usize) -> Vec<f64> {
    let window = window.max(1);
    let ind = &ledger.indicators;
    let mut covered = 0usize;
    let mut out = Vec::with_capacity(ind.len());
    for t in 0..ind.len() {
        covered += usize::from(ind[t]);
        if t >= window {
            covered -= usize::from(ind[t - window]);
        }
        out.push(covered as f64 / (t + 1).min(window) as f64);
    }
    out
}

/// Values entering the finite-sample bounds at one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageBounds {
    pub score_bound: f64,
    pub nonincreasing: bool,
    /// `(B + eta_1) / (eta_T * T)`, nonincreasing schedules only.
    pub bound_nonincreasing: Option<f64>,
    /// `(B + max_t eta_t) * ||Delta_{1:T}||_1 / T`.
    pub bound_general: f64,
    /// `(B + max eta) * (2 N_T / min eta) / T`, schedules with at least one increase.
    pub bound_resets: Option<f64>,
    pub delta_l1: f64,
    pub max_eta: f64,
    pub min_eta: f64,
    pub n_increases: u64,
    pub satisfied_nonincreasing: Option<bool>,
    pub satisfied_general: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BoundCheck {
    Applicable(CoverageBounds),
    NotApplicable { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub horizon: usize,
    pub realized_gap: f64,
    pub check: BoundCheck,
}

impl BoundReport {
    pub fn bounds(&self) -> Option<&CoverageBounds> {
        match &self.check {
            BoundCheck::Applicable(b) => Some(b),
            BoundCheck::NotApplicable { .. } => None,
        }
    }

    /// True when the bounds apply and every one of them holds.
    pub fn all_satisfied(&self) -> bool {
        self.bounds()
            .is_some_and(|b| b.satisfied_general && b.satisfied_nonincreasing.unwrap_or(true))
    }
}

/// Evaluates both long-run coverage bounds over the whole ledger.
///
/// `acct` must describe `ledger.eta_series`. The bounds only apply with a
/// declared `B`, `q_1` in `[0, B]`, positive steps and every score in `[0, B]`;
/// otherwise the report says why.
pub fn coverage_bounds(
    ledger: &CoverageLedger,
    config: &TrackerConfig,
    acct: &DeltaAccount,
) -> Result<BoundReport> {
    let horizon = ledger.len();
    let coverage = long_run_coverage(ledger)?;
    let realized_gap = (coverage - (1.0 - config.alpha)).abs();
    let not_applicable = |reason: String| BoundReport {
        horizon,
        realized_gap,
        check: BoundCheck::NotApplicable { reason },
    };

    let Some(b) = config.score_bound else {
        return Ok(not_applicable("no score bound declared".into()));
    };
    let q1 = ledger.q_series[0];
    if !(0.0..=b).contains(&q1) {
        return Ok(not_applicable(format!("q_1 = {q1} outside [0, {b}]")));
    }
    if let Some(i) = ledger.scores.iter().position(|&s| !(0.0..=b).contains(&s)) {
        return Ok(not_applicable(format!(
            "score {} at step {} outside [0, {b}]",
            ledger.scores[i],
            i + 1
        )));
    }
    if ledger.eta_series.iter().any(|&e| e.is_nan() || e <= 0.0) {
        return Ok(not_applicable("step sizes not all positive".into()));
    }
    if acct.steps as usize != horizon {
        return Err(Error::config(format!(
            "delta account covers {} steps, ledger has {horizon}",
            acct.steps
        )));
    }

    let t = horizon as f64;
    let eta_first = ledger.eta_series[0];
    let eta_last = ledger.eta_series[horizon - 1];
    let max_eta = acct.max_eta;
    let min_eta = acct.min_eta.unwrap_or(eta_last);
    let nonincreasing = acct.n_increases == 0;
    let bound_nonincreasing = nonincreasing.then(|| (b + eta_first) / (eta_last * t));
    let bound_general = (b + max_eta) * acct.delta_l1 / t;
    let bound_resets = (acct.n_increases > 0)
        .then(|| acct.reset_bound().map(|r| (b + max_eta) * r / t))
        .flatten();

    Ok(BoundReport {
        horizon,
        realized_gap,
        check: BoundCheck::Applicable(CoverageBounds {
            score_bound: b,
            nonincreasing,
            bound_nonincreasing,
            bound_general,
            bound_resets,
            delta_l1: acct.delta_l1,
            max_eta,
            min_eta,
            n_increases: acct.n_increases,
            satisfied_nonincreasing: bound_nonincreasing.map(|bound| realized_gap <= bound),
            satisfied_general: realized_gap <= bound_general,
        }),
    })
}

/// Bound report for the first `horizon` steps.
pub fn coverage_bounds_at(
    ledger: &CoverageLedger,
    config: &TrackerConfig,
    horizon: usize,
) -> Result<BoundReport> {
    let prefix = ledger.prefix(horizon);
    let acct = prefix.delta_account();
    coverage_bounds(&prefix, config, &acct)
}

/// Smallest `q` such that the fraction of `scores` at or below `q` is at
/// least `1 - alpha`: an order statistic of the sequence.
pub fn oracle_qstar(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyLedger);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let target = 1.0 - alpha;
    let attains = |k: usize| k as f64 / n as f64 >= target;
    // ceil((1-alpha) n) up to rounding; settle on the exact smallest count.
    let mut k = ((target * n as f64).ceil() as usize).clamp(1, n);
    while k > 1 && attains(k - 1) {
        k -= 1;
    }
    while k < n && !attains(k) {
        k += 1;
    }
    // with ties, the k-th order statistic already covers every equal value
    Ok(sorted[k - 1])
}

/// Pre-sorted holdout scores for repeated empirical-CDF evaluation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SortedScores(Vec<f64>);

impl SortedScores {
    pub fn new(mut scores: Vec<f64>) -> Self {
        scores.sort_by(f64::total_cmp);
        Self(scores)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Fraction of scores `<= q`; `None` for an empty set.
    pub fn coverage(&self, q: f64) -> Option<f64> {
        if self.0.is_empty() {
            return None;
        }
        let covered = self.0.partition_point(|&s| s <= q);
        Some(covered as f64 / self.0.len() as f64)
    }
}

/// Fraction of `holdout` scores `<= q`.
pub fn empirical_coverage(q: f64, holdout: &[f64]) -> Result<f64> {
    if holdout.is_empty() {
        return Err(Error::EmptyLedger);
    }
    let covered = holdout.iter().filter(|&&s| s <= q).count();
    Ok(covered as f64 / holdout.len() as f64)
}

/// The four per-run metrics of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub longrun_coverage: f64,
    /// `Var(q_t) / Var(s_t)`; absent when the scores have zero variance.
    pub normalized_q_variance: Option<f64>,
    /// `mean((q_t - q*)^2) / Var(s_t)`; absent when the scores have zero variance.
    pub normalized_mse: Option<f64>,
    pub infinite_set_fraction: f64,
}

/// Population variance; exactly 0 for a constant sequence.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() || xs.iter().all(|&x| x == xs[0]) {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

pub fn run_summary(
    ledger: &CoverageLedger,
    scores: &[f64],
    qstar: f64,
    set_classes: &[SetClass],
) -> Result<RunSummary> {
    if scores.len() != ledger.len() || set_classes.len() != ledger.len() {
        return Err(Error::config(format!(
            "misaligned sequences: ledger {}, scores {}, set classes {}",
            ledger.len(),
            scores.len(),
            set_classes.len()
        )));
    }
    let longrun_coverage = long_run_coverage(ledger)?;
    let var_s = variance(scores);
    let (normalized_q_variance, normalized_mse) = if var_s > 0.0 {
        let mse = ledger
            .q_series
            .iter()
            .map(|q| (q - qstar).powi(2))
            .sum::<f64>()
            / ledger.len() as f64;
        (Some(variance(&ledger.q_series) / var_s), Some(mse / var_s))
    } else {
        (None, None)
    };
    let full = set_classes.iter().filter(|&&c| c == SetClass::Full).count();
    Ok(RunSummary {
        longrun_coverage,
        normalized_q_variance,
        normalized_mse,
        infinite_set_fraction: full as f64 / ledger.len() as f64,
    })
}

/// Per-step set classes: declared `B`, else the running maximum of the
/// scores seen up to and including each step.
pub fn set_classes(ledger: &CoverageLedger, config: &TrackerConfig) -> Vec<SetClass> {
    let mut running_max = f64::NEG_INFINITY;
    ledger
        .q_series
        .iter()
        .zip(&ledger.scores)
        .map(|(&q, &s)| {
            running_max = running_max.max(s);
            set_state_class(q, config.score_bound.unwrap_or(running_max))
        })
        .collect()
}

/// Degenerate-set counts over a run, with the step of the last occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OscillationCounts {
    pub n_full: u64,
    pub n_empty: u64,
    pub last_full: Option<u64>,
    pub last_empty: Option<u64>,
}

/// Counts steps with `q_t >= B_eff` (full set) and `q_t < 0` (empty set).
pub fn oscillation_check(ledger: &CoverageLedger, config: &TrackerConfig) -> OscillationCounts {
    let mut counts = OscillationCounts::default();
    for (i, class) in set_classes(ledger, config).into_iter().enumerate() {
        let t = i as u64 + 1;
        match class {
            SetClass::Full => {
                counts.n_full += 1;
                counts.last_full = Some(t);
            }
            SetClass::Empty => {
                counts.n_empty += 1;
                counts.last_empty = Some(t);
            }
            SetClass::Proper => {}
        }
    }
    counts
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ledger_from(indicators: &[bool]) -> CoverageLedger {
        let mut l = CoverageLedger::with_capacity(0.5, indicators.len());
        for &c in indicators {
            l.push(0.5, c, 0.5, 0.1, 0.5);
        }
        l
    }

    #[test]
    fn long_run_examples() {
        assert_eq!(long_run_coverage(&ledger_from(&[true, true, false, true])).unwrap(), 0.75);
        assert_eq!(long_run_coverage(&ledger_from(&[true; 1000])).unwrap(), 1.0);
        let alt: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        assert_eq!(long_run_coverage(&ledger_from(&alt)).unwrap(), 0.5);
        assert!(matches!(long_run_coverage(&CoverageLedger::default()), Err(Error::EmptyLedger)));
    }

    #[test]
    fn rolling_examples() {
        assert!(rolling_coverage(&ledger_from(&[true; 1500]), 1000)
            .iter()
            .all(|&c| c == 1.0));
        assert_eq!(
            rolling_coverage(&ledger_from(&[true, false, true, false]), 2),
            vec![1.0, 0.5, 0.5, 0.5]
        );
        let mut ind = vec![false; 500];
        ind.extend(vec![true; 500]);
        assert_eq!(rolling_coverage(&ledger_from(&ind), 1000)[999], 0.5);
    }

    fn brute_force_qstar(scores: &[f64], alpha: f64) -> f64 {
        let n = scores.len() as f64;
        scores
            .iter()
            .copied()
            .filter(|&q| scores.iter().filter(|&&s| s <= q).count() as f64 / n >= 1.0 - alpha)
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn qstar_examples() {
        let scores: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(brute_force_qstar(&scores, 0.1), 0.9);
        assert_eq!(oracle_qstar(&scores, 0.1).unwrap(), 0.9);
        assert_eq!(oracle_qstar(&[0.42], 0.5).unwrap(), 0.42);
        assert_eq!(oracle_qstar(&[0.3; 17], 0.37).unwrap(), 0.3);
        assert!(oracle_qstar(&[], 0.1).is_err());
    }

    #[test]
    fn qstar_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.random_range(1..60);
            // coarse values so ties are common
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 4.0).collect();
            let alpha = rng.random_range(0.01..0.99);
            assert_eq!(oracle_qstar(&scores, alpha).unwrap(), brute_force_qstar(&scores, alpha));
        }
    }

    #[test]
    fn empirical_coverage_examples() {
        let h = [0.2, 0.4, 0.6, 0.8];
        assert_eq!(empirical_coverage(0.5, &h).unwrap(), 0.5);
        assert_eq!(empirical_coverage(0.8, &h).unwrap(), 1.0);
        assert_eq!(empirical_coverage(0.1, &h).unwrap(), 0.0);
        let sorted = SortedScores::new(vec![0.8, 0.2, 0.6, 0.4]);
        for q in [-1.0, 0.2, 0.3, 0.6, 0.79, 0.8, 2.0] {
            assert_eq!(sorted.coverage(q), Some(empirical_coverage(q, &h).unwrap()));
        }
    }

    #[test]
    fn bound_examples() {
        let cfg = TrackerConfig::new(0.1, Some(0.5), Some(1.0)).unwrap();

        // decaying t^-0.6, T = 100
        let mut l = CoverageLedger::with_capacity(0.5, 100);
        for t in 1..=100 {
            l.push(0.5, t % 10 != 0, 0.5, (t as f64).powf(-0.6), 0.5);
        }
        let r = coverage_bounds(&l, &cfg, &l.delta_account()).unwrap();
        let b = r.bounds().unwrap();
        assert_relative_eq!(b.bound_nonincreasing.unwrap(), 2.0 / 10f64.powf(0.8), max_relative = 1e-12);
        assert_relative_eq!(b.bound_nonincreasing.unwrap(), 0.3170, epsilon = 1e-4);
        assert_relative_eq!(b.bound_general, b.bound_nonincreasing.unwrap(), max_relative = 1e-9);

        // fixed 0.05, T = 1000
        let mut l = CoverageLedger::with_capacity(0.5, 1000);
        for t in 0..1000 {
            l.push(0.5, t % 10 != 0, 0.5, 0.05, 0.5);
        }
        let r = coverage_bounds(&l, &cfg, &l.delta_account()).unwrap();
        let b = r.bounds().unwrap();
        assert_relative_eq!(b.bound_nonincreasing.unwrap(), 0.021, max_relative = 1e-12);
        assert_relative_eq!(b.bound_general, 0.021, max_relative = 1e-12);
        assert!(r.all_satisfied());
    }

    #[test]
    fn bounds_not_applicable() {
        let l = ledger_from(&[true, false]);
        let unbounded = TrackerConfig::new(0.1, None, None).unwrap();
        let r = coverage_bounds(&l, &unbounded, &l.delta_account()).unwrap();
        assert!(matches!(r.check, BoundCheck::NotApplicable { .. }));

        let mut l = ledger_from(&[true]);
        l.scores[0] = 1.5;
        let cfg = TrackerConfig::new(0.1, None, Some(1.0)).unwrap();
        let r = coverage_bounds(&l, &cfg, &l.delta_account()).unwrap();
        assert!(matches!(r.check, BoundCheck::NotApplicable { ref reason } if reason.contains("outside")));
    }

    #[test]
    fn summary_examples() {
        let mut l = CoverageLedger::with_capacity(0.7, 1000);
        let scores: Vec<f64> = (0..1000).map(|i| (i % 10) as f64 / 10.0).collect();
        for &s in &scores {
            l.push(s, s <= 0.7, 0.7, 0.05, 0.7);
        }
        let mut classes = vec![SetClass::Proper; 1000];
        for c in classes.iter_mut().take(5) {
            *c = SetClass::Full;
        }
        let s = run_summary(&l, &scores, 0.7, &classes).unwrap();
        assert_eq!(s.normalized_mse, Some(0.0));
        assert_eq!(s.normalized_q_variance, Some(0.0));
        assert_eq!(s.infinite_set_fraction, 0.005);

        let flat = vec![0.3; 1000];
        let s = run_summary(&l, &flat, 0.7, &classes).unwrap();
        assert_eq!(s.normalized_mse, None);
        assert_eq!(s.normalized_q_variance, None);
        assert!(run_summary(&l, &flat[..10], 0.7, &classes).is_err());
    }

    #[test]
    fn oscillation_interior_is_quiet() {
        let cfg = TrackerConfig::new(0.1, None, Some(1.0)).unwrap();
        let mut l = CoverageLedger::with_capacity(0.5, 50);
        for i in 0..50 {
            l.push(0.5, true, 0.1 + 0.8 * (i as f64 / 50.0), 0.05, 0.5);
        }
        let c = oscillation_check(&l, &cfg);
        assert_eq!((c.n_full, c.n_empty), (0, 0));
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [10.0, 100.0, 1000.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.6)).collect();
        assert_relative_eq!(loglog_slope(&xs, &ys).unwrap(), -0.6, epsilon = 1e-12);
    }

    #[test]
    fn prefix_carries_next_threshold() {
        let mut l = CoverageLedger::with_capacity(0.0, 3);
        l.push(0.1, true, 0.0, 0.1, 1.0);
        l.push(0.1, true, 1.0, 0.1, 2.0);
        l.push(0.1, true, 2.0, 0.1, 3.0);
        assert_eq!(l.prefix(2).q_next, 2.0);
        assert_eq!(l.prefix(3).q_next, 3.0);
        assert_eq!(l.prefix(2).len(), 2);
    }
}
