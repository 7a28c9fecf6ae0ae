//! Long-run coverage against an adaptive adversary, next to the worst-case bounds.

use online_conformal::analysis::coverage_bounds_at;
use online_conformal::streams::{adversarial_worstcase, AdversaryPolicy};
use online_conformal::{track, ScheduleSpec, TrackerConfig};

fn main() -> online_conformal::Result<()> {
    let config = TrackerConfig::new(0.1, None, Some(1.0))?;
    let policies = [
        AdversaryPolicy::AlwaysMiss,
        AdversaryPolicy::Alternating,
        AdversaryPolicy::RandomFlip { miss_prob: 0.5, seed: 1 },
    ];
    for schedule in [
        ScheduleSpec::default_fixed(),
        ScheduleSpec::default_decaying(),
        ScheduleSpec::default_decay_adapt(),
    ] {
        for policy in policies {
            let scores = adversarial_worstcase(&schedule, &config, 10_000, policy)?;
            let ledger = track(&config, &schedule, &scores)?.ledger;
            print!("{:<12} {:<40}", schedule.label(), format!("{policy:?}"));
            for t in [100, 1000, 10_000] {
                let r = coverage_bounds_at(&ledger, &config, t)?;
                let b = r.bounds().expect("scores are in [0, 1]");
                print!("  T={t}: gap {:.4} <= {:.4}", r.realized_gap, b.bound_nonincreasing.unwrap_or(b.bound_general));
            }
            println!();
        }
    }
    Ok(())
}
