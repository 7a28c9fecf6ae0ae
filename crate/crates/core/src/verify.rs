//! Acceptance checks. Each check runs real simulations and reports pass/fail
//! with a one-line detail; nothing here is tuned to make a check pass.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{
    empirical_coverage, loglog_slope, run_summary, set_classes, coverage_bounds_at, CoverageLedger,
    RunSummary,
};
use crate::error::Result;
use crate::experiment::{run, step_table_bytes, track, Method, RunConfig, StreamSource};
use crate::schedule::{DeltaAccount, Schedule, ScheduleSpec};
use crate::streams::{
    adversarial_worstcase, generate, Adversary, AdversaryPolicy, SimKind, SimSpec,
};
use crate::tracker::{threshold_envelope, SetClass, TrackerConfig};

pub const ALPHA: f64 = 0.1;
pub const HORIZONS: [usize; 4] = [10, 100, 1000, 10_000];
pub const CONVERGENCE_HORIZONS: [usize; 3] = [2_500, 10_000, 40_000];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "criterion {} [{}] {}: {}", self.id, status, self.name, self.detail)
    }
}

/// Sample sizes for the statistical checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Settings {
    pub adversarial_sequences: usize,
    pub convergence_seeds: u64,
    pub holdout_size: usize,
    pub oscillation_seeds: u64,
    pub oscillation_length: usize,
    pub delta_trajectories: usize,
    pub piecewise_seeds: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            adversarial_sequences: 100,
            convergence_seeds: 200,
            holdout_size: 100_000,
            oscillation_seeds: 3,
            oscillation_length: 1_000_000,
            delta_trajectories: 1000,
            piecewise_seeds: 100,
        }
    }
}

pub fn schedules_under_test() -> [ScheduleSpec; 3] {
    [
        ScheduleSpec::default_fixed(),
        ScheduleSpec::default_decaying(),
        ScheduleSpec::default_decay_adapt(),
    ]
}

fn unit_tracker() -> TrackerConfig {
    TrackerConfig::new(ALPHA, None, Some(1.0)).expect("valid tracker")
}

/// One of the adversarial score sequences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdversarialCase {
    Oblivious(Adversary, u64),
    Adaptive(AdversaryPolicy),
}

impl AdversarialCase {
    /// AllMax, AllMin, Alternating, the three deterministic adaptive
    /// policies, then seeded random blocks and seeded adaptive flips.
    pub fn suite(n: usize) -> Vec<AdversarialCase> {
        let mut cases = vec![
            AdversarialCase::Oblivious(Adversary::AllMax, 0),
            AdversarialCase::Oblivious(Adversary::AllMin, 0),
            AdversarialCase::Oblivious(Adversary::Alternating, 0),
            AdversarialCase::Adaptive(AdversaryPolicy::AlwaysMiss),
            AdversarialCase::Adaptive(AdversaryPolicy::AlwaysCover),
            AdversarialCase::Adaptive(AdversaryPolicy::Alternating),
        ];
        let rest = n.saturating_sub(cases.len());
        let blocks = rest / 2;
        let flips = rest - blocks;
        cases.extend((0..blocks as u64).map(|s| AdversarialCase::Oblivious(Adversary::RandomBlocks, s)));
        cases.extend((0..flips as u64).map(|s| {
            let miss_prob = 0.02 + 0.96 * s as f64 / flips.max(2).saturating_sub(1) as f64;
            AdversarialCase::Adaptive(AdversaryPolicy::RandomFlip { miss_prob, seed: s })
        }));
        cases.truncate(n);
        cases
    }

    pub fn scores(&self, schedule: &ScheduleSpec, tracker: &TrackerConfig, horizon: usize) -> Result<Vec<f64>> {
        match *self {
            AdversarialCase::Oblivious(adversary, seed) => {
                let kind = SimKind::Adversarial { adversary, bound: 1.0 };
                Ok(generate(&SimSpec::new(kind, horizon, seed))?.scores)
            }
            AdversarialCase::Adaptive(policy) => adversarial_worstcase(schedule, tracker, horizon, policy),
        }
    }
}

/// Every (sequence, schedule) run of the adversarial suite at the longest horizon.
pub fn adversarial_runs(settings: &Settings) -> Result<Vec<(AdversarialCase, ScheduleSpec, CoverageLedger)>> {
    let tracker = unit_tracker();
    let horizon = *HORIZONS.last().expect("horizons");
    let mut out = Vec::new();
    for case in AdversarialCase::suite(settings.adversarial_sequences) {
        for schedule in schedules_under_test() {
            let scores = case.scores(&schedule, &tracker, horizon)?;
            let run = track(&tracker, &schedule, &scores)?;
            out.push((case, schedule, run.ledger));
        }
    }
    Ok(out)
}

pub fn criterion_1(runs: &[(AdversarialCase, ScheduleSpec, CoverageLedger)]) -> Result<CriterionResult> {
    let tracker = unit_tracker();
    let mut checks = 0usize;
    let mut failures = Vec::new();
    let mut worst_ratio: f64 = 0.0;
    for (case, schedule, ledger) in runs {
        for &h in &HORIZONS {
            let report = coverage_bounds_at(ledger, &tracker, h)?;
            checks += 1;
            if let Some(b) = report.bounds() {
                let applicable = b.bound_nonincreasing.unwrap_or(b.bound_general).min(b.bound_general);
                worst_ratio = worst_ratio.max(report.realized_gap / applicable);
            }
            if !report.all_satisfied() {
                failures.push(format!("{case:?}/{}/T={h}", schedule.label()));
            }
        }
    }
    Ok(CriterionResult {
        id: 1,
        name: "adversarial coverage bounds",
        passed: failures.is_empty() && checks > 0,
        detail: format!(
            "{} sequences x {} schedules x {} horizons = {checks} checks, {} violations, max gap/bound {worst_ratio:.3}{}",
            runs.len() / 3,
            3,
            HORIZONS.len(),
            failures.len(),
            first_few(&failures)
        ),
    })
}

/// `q_{T+1} - q_1 - sum eta_t (err_t - alpha)`, and `sum eta_t`.
pub fn telescoping_residual(ledger: &CoverageLedger, alpha: f64) -> (f64, f64) {
    let q1 = ledger.q_series.first().copied().unwrap_or(ledger.q_next);
    let mut drift = 0.0;
    let mut eta_sum = 0.0;
    for (&eta, &covered) in ledger.eta_series.iter().zip(&ledger.indicators) {
        let err = if covered { 0.0 } else { 1.0 };
        drift += eta * (err - alpha);
        eta_sum += eta;
    }
    (ledger.q_next - q1 - drift, eta_sum)
}

pub fn criterion_2(runs: &[(AdversarialCase, ScheduleSpec, CoverageLedger)]) -> CriterionResult {
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for (_, _, ledger) in runs {
        let (res, eta_sum) = telescoping_residual(ledger, ALPHA);
        let scaled = res.abs() / (1.0 + eta_sum);
        worst = worst.max(scaled);
        if res.abs() > 1e-9 * (1.0 + eta_sum) {
            failures += 1;
        }
    }
    CriterionResult {
        id: 2,
        name: "telescoping identity",
        passed: failures == 0 && !runs.is_empty(),
        detail: format!(
            "{} runs, {failures} above 1e-9 (1 + sum eta), worst scaled residual {worst:.3e}",
            runs.len()
        ),
    }
}

/// Steps where `q_t` leaves the envelope, including `q_{T+1}`.
pub fn envelope_violations(ledger: &CoverageLedger, tracker: &TrackerConfig) -> Result<usize> {
    let mut running_max = 0.0f64;
    let mut bad = 0;
    let qs = ledger.q_series.iter().chain(std::iter::once(&ledger.q_next));
    for (i, &q) in qs.enumerate() {
        let (lo, hi) = threshold_envelope(tracker, running_max)?;
        if q < lo || q > hi {
            bad += 1;
        }
        if let Some(&eta) = ledger.eta_series.get(i) {
            running_max = running_max.max(eta);
        }
    }
    Ok(bad)
}

pub fn criterion_3(runs: &[(AdversarialCase, ScheduleSpec, CoverageLedger)]) -> Result<CriterionResult> {
    let tracker = unit_tracker();
    let mut steps = 0usize;
    let mut bad = 0usize;
    let mut n_runs = 0usize;
    let mut check = |ledger: &CoverageLedger| -> Result<()> {
        steps += ledger.len() + 1;
        bad += envelope_violations(ledger, &tracker)?;
        n_runs += 1;
        Ok(())
    };
    for (_, _, ledger) in runs {
        check(ledger)?;
    }
    // plus stochastic streams in [0, 1]
    for seed in 0..10 {
        for schedule in schedules_under_test() {
            let scores = generate(&SimSpec::new(SimKind::IidUniform, 10_000, 900 + seed))?.scores;
            check(&track(&tracker, &schedule, &scores)?.ledger)?;
        }
    }
    Ok(CriterionResult {
        id: 3,
        name: "threshold envelope",
        passed: bad == 0 && n_runs > 0,
        detail: format!("{n_runs} runs, {steps} thresholds checked, {bad} outside the envelope"),
    })
}

/// Thresholds at the convergence horizons and final holdout coverage, per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceBatch {
    pub q_at: Vec<[f64; 3]>,
    pub final_coverage: Vec<f64>,
}

pub fn convergence_batch(settings: &Settings) -> Result<ConvergenceBatch> {
    let tracker = unit_tracker();
    let schedule = ScheduleSpec::default_decaying();
    let horizon = *CONVERGENCE_HORIZONS.last().expect("horizons");
    let mut q_at = Vec::new();
    let mut final_coverage = Vec::new();
    for seed in 0..settings.convergence_seeds {
        let mut spec = SimSpec::new(SimKind::IidUniform, horizon, 10_000 + seed);
        spec.holdout_size = settings.holdout_size;
        let stream = generate(&spec)?;
        let ledger = track(&tracker, &schedule, &stream.scores)?.ledger;
        let q = CONVERGENCE_HORIZONS.map(|t| ledger.q_series[t - 1]);
        final_coverage.push(empirical_coverage(q[2], stream.holdout.all_scores().as_slice())?);
        q_at.push(q);
    }
    Ok(ConvergenceBatch { q_at, final_coverage })
}

pub fn criterion_4(batch: &ConvergenceBatch) -> CriterionResult {
    let qstar = 1.0 - ALPHA;
    let mse: Vec<f64> = (0..3)
        .map(|k| batch.q_at.iter().map(|q| (q[k] - qstar).powi(2)).sum::<f64>() / batch.q_at.len() as f64)
        .collect();
    let rmse: Vec<f64> = mse.iter().map(|m| m.sqrt()).collect();
    let decreasing = rmse.windows(2).all(|w| w[1] < w[0]);
    let xs = CONVERGENCE_HORIZONS.map(|t| t as f64);
    let slope = loglog_slope(&xs, &mse).unwrap_or(f64::NAN);
    CriterionResult {
        id: 4,
        name: "threshold convergence",
        passed: batch.q_at.len() >= 50 && decreasing && slope <= -0.4,
        detail: format!(
            "{} seeds, RMSE at T=2500/10000/40000: {:.5} / {:.5} / {:.5}, MSE log-log slope {slope:.3} (need <= -0.4)",
            batch.q_at.len(),
            rmse[0],
            rmse[1],
            rmse[2]
        ),
    }
}

pub fn criterion_5(batch: &ConvergenceBatch) -> CriterionResult {
    let n = batch.final_coverage.len();
    let inside = batch
        .final_coverage
        .iter()
        .filter(|c| (**c - (1.0 - ALPHA)).abs() <= 0.02)
        .count();
    let frac = inside as f64 / n.max(1) as f64;
    CriterionResult {
        id: 5,
        name: "coverage convergence",
        passed: n >= 50 && frac >= 0.9,
        detail: format!("{inside}/{n} seeds ({:.1}%) within 0.9 +/- 0.02 on a fresh holdout", 100.0 * frac),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct OscillationSample {
    pub full_early: u64,
    pub full_late: u64,
    pub empty_early: u64,
    pub empty_late: u64,
    pub last_event: Option<u64>,
}

fn oscillation_sample(classes: &[SetClass], early: usize) -> OscillationSample {
    let mut s = OscillationSample::default();
    for (i, c) in classes.iter().enumerate() {
        let (full, empty) = match c {
            SetClass::Full => (1, 0),
            SetClass::Empty => (0, 1),
            SetClass::Proper => continue,
        };
        if i < early {
            s.full_early += full;
            s.empty_early += empty;
        }
        s.full_late += full;
        s.empty_late += empty;
        s.last_event = Some(i as u64 + 1);
    }
    s
}

pub fn criterion_6(settings: &Settings) -> Result<CriterionResult> {
    let tracker = unit_tracker();
    let t = settings.oscillation_length;
    let early = t / 10;
    let mut all_ok = true;
    let mut parts = Vec::new();
    for seed in 0..settings.oscillation_seeds {
        let scores = generate(&SimSpec::new(SimKind::IidUniform, t, 20_000 + seed))?.scores;
        let fixed = track(&tracker, &ScheduleSpec::default_fixed(), &scores)?.ledger;
        let f = oscillation_sample(&set_classes(&fixed, &tracker), early);
        let fixed_ok = f.full_late > f.full_early
            && f.full_early > 0
            && f.empty_late > f.empty_early
            && f.empty_early > 0;
        let decay = track(&tracker, &ScheduleSpec::default_decaying(), &scores)?.ledger;
        let d = oscillation_sample(&set_classes(&decay, &tracker), early);
        let decay_ok = d.last_event.is_none_or(|last| last as usize <= early);
        all_ok &= fixed_ok && decay_ok;
        parts.push(format!(
            "seed {seed}: fixed q>=1 {}->{}, q<0 {}->{}; decaying events {}+{}, last at {:?}",
            f.full_early, f.full_late, f.empty_early, f.empty_late, d.full_late, d.empty_late, d.last_event
        ));
    }
    Ok(CriterionResult {
        id: 6,
        name: "oscillation dichotomy",
        passed: all_ok && settings.oscillation_seeds > 0,
        detail: format!("T={t} (early = first {early}); {}", parts.join("; ")),
    })
}

/// Random nonincreasing step sequence: fixed, polynomial decay, or sorted random.
fn random_nonincreasing(rng: &mut ChaCha8Rng, k: usize) -> Result<Vec<f64>> {
    let len = rng.random_range(1..=2000);
    Ok(match k % 3 {
        0 => vec![10f64.powf(rng.random_range(-3.0..0.0)); len],
        1 => {
            let spec = ScheduleSpec::poly_decay(rng.random_range(0.1..5.0), rng.random_range(0.01..0.49))?;
            let mut s = Schedule::new(spec)?;
            (0..len)
                .map(|_| {
                    let eta = s.eta();
                    s.observe(rng.random_bool(0.9), 1.0);
                    eta
                })
                .collect()
        }
        _ => {
            let mut v: Vec<f64> = (0..len).map(|_| 10f64.powf(rng.random_range(-4.0..1.0))).collect();
            v.sort_by(|a, b| b.total_cmp(a));
            v
        }
    })
}

/// Decay-with-reset trajectory driven by Bernoulli outcomes, with at least one reset.
fn random_reset_trajectory(rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    loop {
        let base = ScheduleSpec::decay_adapt(rng.random_range(0.1..3.0), rng.random_range(0.01..0.49))?;
        let spec = match base {
            ScheduleSpec::DecayAdapt { scale, epsilon, .. } => ScheduleSpec::DecayAdapt {
                scale,
                epsilon,
                n_miscoverage: rng.random_range(2..=15),
                n_coverage: rng.random_range(5..=40),
                reset_scale: rng.random_bool(0.5).then(|| rng.random_range(0.1..3.0)),
            }
            .validated()?,
            other => other,
        };
        let hint = rng.random_range(0.1..3.0);
        let p_cover = rng.random_range(0.05..0.95);
        let len = rng.random_range(50..=5000);
        let mut s = Schedule::new(spec)?;
        let etas: Vec<f64> = (0..len)
            .map(|_| {
                let eta = s.eta();
                s.observe(rng.random_bool(p_cover), hint);
                eta
            })
            .collect();
        if DeltaAccount::from_etas(&etas).n_increases > 0 {
            return Ok(etas);
        }
    }
}

pub fn criterion_7(settings: &Settings) -> Result<CriterionResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n_mono = settings.delta_trajectories / 2;
    let n_reset = settings.delta_trajectories - n_mono;
    let mut identity_fail = 0;
    let mut worst_rel: f64 = 0.0;
    for k in 0..n_mono {
        let etas = random_nonincreasing(&mut rng, k)?;
        let acct = DeltaAccount::from_etas(&etas);
        let inv_last = 1.0 / etas[etas.len() - 1];
        let rel = (acct.delta_l1 - inv_last).abs() / inv_last;
        worst_rel = worst_rel.max(rel);
        if rel > 1e-9 {
            identity_fail += 1;
        }
    }
    let mut stated_fail = 0;
    let mut corrected_fail = 0;
    let mut worst_excess: f64 = 0.0;
    for _ in 0..n_reset {
        let etas = random_reset_trajectory(&mut rng)?;
        let acct = DeltaAccount::from_etas(&etas);
        let min_eta = acct.min_eta.expect("nonempty");
        let stated = acct.reset_bound().expect("nonempty");
        if acct.delta_l1 > stated {
            stated_fail += 1;
            worst_excess = worst_excess.max(acct.delta_l1 / stated);
        }
        let corrected = 1.0 / etas[etas.len() - 1] + 2.0 * acct.n_increases as f64 / min_eta;
        if acct.delta_l1 > corrected * (1.0 + 1e-12) {
            corrected_fail += 1;
        }
    }
    Ok(CriterionResult {
        id: 7,
        name: "step-size increment accounting",
        passed: identity_fail == 0 && stated_fail == 0,
        detail: format!(
            "nonincreasing: {identity_fail}/{n_mono} off 1/eta_T (worst rel {worst_rel:.2e}); \
             resets: {stated_fail}/{n_reset} exceed 2N/min eta (worst ratio {worst_excess:.3}), \
             {corrected_fail}/{n_reset} exceed 1/eta_T + 2N/min eta"
        ),
    })
}

/// Per-seed summaries of the three schedules on the piecewise-Normal stream.
pub fn piecewise_table(seeds: u64) -> Result<[Vec<RunSummary>; 3]> {
    let tracker = TrackerConfig::new(ALPHA, None, None)?;
    let mut out: [Vec<RunSummary>; 3] = Default::default();
    for seed in 0..seeds {
        let stream = generate(&SimSpec::piecewise_default(30_000 + seed))?;
        let qstar = crate::analysis::oracle_qstar(&stream.scores, ALPHA)?;
        for (k, schedule) in schedules_under_test().iter().enumerate() {
            let ledger = track(&tracker, schedule, &stream.scores)?.ledger;
            let classes = set_classes(&ledger, &tracker);
            out[k].push(run_summary(&ledger, &stream.scores, qstar, &classes)?);
        }
    }
    Ok(out)
}

pub fn criterion_8(settings: &Settings) -> Result<CriterionResult> {
    let table = piecewise_table(settings.piecewise_seeds)?;
    let mean = |rows: &[RunSummary], f: fn(&RunSummary) -> f64| {
        rows.iter().map(f).sum::<f64>() / rows.len().max(1) as f64
    };
    let var: Vec<f64> = table.iter().map(|r| mean(r, |s| s.normalized_q_variance.unwrap_or(f64::NAN))).collect();
    let mse: Vec<f64> = table.iter().map(|r| mean(r, |s| s.normalized_mse.unwrap_or(f64::NAN))).collect();
    let inf: Vec<f64> = table.iter().map(|r| mean(r, |s| s.infinite_set_fraction)).collect();
    let cov: Vec<f64> = table.iter().map(|r| mean(r, |s| s.longrun_coverage)).collect();
    let (f, d, a) = (0, 1, 2);
    let var_ok = var[a] <= var[d] && var[d] <= var[f];
    let mse_ok = mse[a] <= mse[d] && mse[d] <= mse[f];
    let inf_ok = inf[d] < inf[f];
    let row = |k: usize| format!("var {:.3} mse {:.3} inf {:.5} cov {:.3}", var[k], mse[k], inf[k], cov[k]);
    Ok(CriterionResult {
        id: 8,
        name: "piecewise-Normal method ordering",
        passed: settings.piecewise_seeds >= 50 && var_ok && mse_ok && inf_ok,
        detail: format!(
            "{} seeds; fixed: {}; decaying: {}; decay+adapt: {}; variance order {}, mse order {}, infinite sets {}",
            settings.piecewise_seeds,
            row(f),
            row(d),
            row(a),
            ok(var_ok),
            ok(mse_ok),
            ok(inf_ok)
        ),
    })
}

pub fn determinism_configs() -> Result<Vec<RunConfig>> {
    let uniform = TrackerConfig::new(ALPHA, None, Some(1.0))?;
    let open = TrackerConfig::new(ALPHA, None, None)?;
    let mut multi = RunConfig::new(
        uniform,
        Method::online(ScheduleSpec::default_decay_adapt()),
        StreamSource::Simulated(SimSpec::new(SimKind::IidUniform, 5000, 1)),
    );
    multi.seeds = vec![1, 2, 3];
    Ok(vec![
        multi,
        RunConfig::new(
            open,
            Method::online(ScheduleSpec::default_fixed()),
            StreamSource::Simulated(SimSpec::piecewise_default(5)),
        ),
        RunConfig::new(
            uniform,
            Method::online(ScheduleSpec::default_decaying()),
            StreamSource::Simulated(SimSpec::new(
                SimKind::Adversarial { adversary: Adversary::RandomBlocks, bound: 1.0 },
                3000,
                9,
            )),
        ),
        RunConfig::new(
            open,
            Method::Oracle,
            StreamSource::Simulated(SimSpec::piecewise_default(6)),
        ),
    ])
}

pub fn criterion_9() -> Result<CriterionResult> {
    let mut tables = 0;
    let mut mismatched = 0;
    for cfg in determinism_configs()? {
        let a = run(&cfg)?;
        let b = run(&cfg)?;
        for (x, y) in a.runs.iter().zip(&b.runs) {
            tables += 1;
            let same = step_table_bytes(&x.rows)? == step_table_bytes(&y.rows)?
                && serde_json::to_string(&x.summary)? == serde_json::to_string(&y.summary)?;
            if !same {
                mismatched += 1;
            }
        }
    }
    Ok(CriterionResult {
        id: 9,
        name: "determinism",
        passed: mismatched == 0 && tables > 0,
        detail: format!("{tables} repeated runs, {mismatched} with differing tables or summaries"),
    })
}

/// Runs every check in order.
pub fn verify_all(settings: &Settings) -> Result<Vec<CriterionResult>> {
    let runs = adversarial_runs(settings)?;
    let batch = convergence_batch(settings)?;
    Ok(vec![
        criterion_1(&runs)?,
        criterion_2(&runs),
        criterion_3(&runs)?,
        criterion_4(&batch),
        criterion_5(&batch),
        criterion_6(settings)?,
        criterion_7(settings)?,
        criterion_8(settings)?,
        criterion_9()?,
    ])
}

fn ok(b: bool) -> &'static str {
    if b {
        "holds"
    } else {
        "violated"
    }
}

fn first_few(items: &[String]) -> String {
    if items.is_empty() {
        String::new()
    } else {
        let shown: Vec<&str> = items.iter().take(3).map(String::as_str).collect();
        format!(" (e.g. {})", shown.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_has_requested_size_and_named_cases() {
        let s = AdversarialCase::suite(100);
        assert_eq!(s.len(), 100);
        assert!(s.contains(&AdversarialCase::Oblivious(Adversary::AllMax, 0)));
        assert!(s.contains(&AdversarialCase::Adaptive(AdversaryPolicy::AlwaysMiss)));
        let flips = s
            .iter()
            .filter(|c| matches!(c, AdversarialCase::Adaptive(AdversaryPolicy::RandomFlip { .. })))
            .count();
        assert_eq!(flips, 47);
    }

    #[test]
    fn telescoping_residual_of_two_steps() {
        let mut l = CoverageLedger::with_capacity(0.5, 2);
        l.push(0.9, false, 0.5, 0.1, 0.59);
        l.push(0.1, true, 0.59, 0.1, 0.58);
        let (res, eta_sum) = telescoping_residual(&l, 0.1);
        assert!(res.abs() < 1e-15);
        assert_eq!(eta_sum, 0.2);
    }

    #[test]
    fn envelope_flags_an_escape() {
        let cfg = unit_tracker();
        let mut l = CoverageLedger::with_capacity(0.5, 1);
        l.push(1.0, false, 0.5, 0.5, 0.95);
        assert_eq!(envelope_violations(&l, &cfg).unwrap(), 0);
        l.q_next = 1.5;
        assert_eq!(envelope_violations(&l, &cfg).unwrap(), 1);
    }

    #[test]
    fn small_scale_suite_runs() {
        let settings = Settings {
            adversarial_sequences: 8,
            convergence_seeds: 3,
            holdout_size: 1000,
            oscillation_seeds: 1,
            oscillation_length: 20_000,
            delta_trajectories: 20,
            piecewise_seeds: 2,
        };
        let results = verify_all(&settings).unwrap();
        assert_eq!(results.iter().map(|r| r.id).collect::<Vec<_>>(), (1..=9).collect::<Vec<_>>());
        for id in [1, 2, 3, 9] {
            assert!(results[id as usize - 1].passed, "{}", results[id as usize - 1]);
        }
    }
}
