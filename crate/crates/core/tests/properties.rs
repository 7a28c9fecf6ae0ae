use online_conformal::analysis::{coverage_bounds, CoverageLedger};
use online_conformal::schedule::{DeltaAccount, Schedule, ScheduleSpec};
use online_conformal::tracker::{threshold_envelope, StreamEvent, TrackerConfig};
use proptest::prelude::*;

fn positive_etas() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-4f64..2.0, 1..300)
}

/// Runs the raw update with an arbitrary step sequence.
fn drive(cfg: &TrackerConfig, scores: &[f64], etas: &[f64]) -> CoverageLedger {
    let mut state = cfg.initial_state();
    let mut ledger = CoverageLedger::with_capacity(state.q, scores.len());
    for (&s, &eta) in scores.iter().zip(etas) {
        let q = state.q;
        let (covered, next) = state.step(cfg, eta, StreamEvent::new(s)).unwrap();
        ledger.push(s, covered, q, eta, next.q);
        state = next;
    }
    ledger
}

proptest! {
    #[test]
    fn delta_norm_decomposes_over_increases(etas in positive_etas()) {
        let acct = DeltaAccount::from_etas(&etas);
        let last = 1.0 / etas[etas.len() - 1];
        let rises: f64 = etas.windows(2).filter(|w| w[1] > w[0]).map(|w| 1.0 / w[0] - 1.0 / w[1]).sum();
        let expected = last + 2.0 * rises;
        prop_assert!((acct.delta_l1 - expected).abs() <= 1e-9 * expected);
        let min_eta = acct.min_eta.unwrap();
        prop_assert!(acct.delta_l1 <= (last + 2.0 * acct.n_increases as f64 / min_eta) * (1.0 + 1e-12));
    }

    #[test]
    fn nonincreasing_delta_norm_is_last_inverse(mut etas in positive_etas()) {
        etas.sort_by(|a, b| b.total_cmp(a));
        let acct = DeltaAccount::from_etas(&etas);
        let last = 1.0 / etas[etas.len() - 1];
        prop_assert_eq!(acct.n_increases, 0);
        prop_assert!((acct.delta_l1 - last).abs() <= 1e-9 * last);
    }

    #[test]
    fn general_bound_holds_for_any_steps_and_scores(
        pairs in prop::collection::vec((0.0f64..=1.0, 1e-3f64..1.5), 1..400),
        alpha in 0.01f64..0.5,
        q0 in 0.0f64..=1.0,
    ) {
        let cfg = TrackerConfig::new(alpha, Some(q0), Some(1.0)).unwrap();
        let (scores, etas): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let ledger = drive(&cfg, &scores, &etas);
        let report = coverage_bounds(&ledger, &cfg, &ledger.delta_account()).unwrap();
        prop_assert!(report.all_satisfied(), "{:?}", report);
    }

    #[test]
    fn envelope_holds_for_any_steps_and_scores(
        pairs in prop::collection::vec((0.0f64..=1.0, 1e-3f64..1.5), 1..400),
        alpha in 0.01f64..0.5,
    ) {
        let cfg = TrackerConfig::new(alpha, None, Some(1.0)).unwrap();
        let (scores, etas): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let ledger = drive(&cfg, &scores, &etas);
        let mut m = 0.0f64;
        for (i, &q) in ledger.q_series.iter().chain(std::iter::once(&ledger.q_next)).enumerate() {
            let (lo, hi) = threshold_envelope(&cfg, m).unwrap();
            prop_assert!(lo <= q && q <= hi, "step {}: {} not in [{}, {}]", i + 1, q, lo, hi);
            if let Some(&eta) = ledger.eta_series.get(i) {
                m = m.max(eta);
            }
        }
    }

    #[test]
    fn counters_never_both_nonzero(outcomes in prop::collection::vec(any::<bool>(), 1..2000)) {
        let mut s = Schedule::new(ScheduleSpec::default_decay_adapt()).unwrap();
        for covered in outcomes {
            s.observe(covered, 1.0);
            prop_assert!(s.state.consecutive_misses == 0 || s.state.consecutive_covers == 0);
            prop_assert!(s.state.consecutive_misses < 10 && s.state.consecutive_covers < 30);
            prop_assert!(s.eta() > 0.0 && s.eta().is_finite());
        }
    }

    /// Partial sums follow the Robbins-Monro pattern: sum eta grows like
    /// T^(1/2 - eps) while sum eta^2 stays under its integral bound.
    #[test]
    fn poly_decay_partial_sums(scale in 0.1f64..5.0, eps in 0.01f64..0.49, horizon in 10usize..5000) {
        let mut s = Schedule::new(ScheduleSpec::poly_decay(scale, eps).unwrap()).unwrap();
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..horizon {
            let eta = s.eta();
            sum += eta;
            sq += eta * eta;
            s.observe(true, 1.0);
        }
        let p = 0.5 - eps;
        let lower = scale * (((horizon + 1) as f64).powf(p) - 1.0) / p;
        prop_assert!(sum >= lower * (1.0 - 1e-12));
        prop_assert!(sq <= scale * scale * (1.0 + 1.0 / (2.0 * eps)));
    }
}
