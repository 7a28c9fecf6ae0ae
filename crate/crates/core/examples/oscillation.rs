//! A fixed step keeps producing full (infinite) prediction sets forever;
//! a decaying step stops after a short prefix.

use online_conformal::analysis::oscillation_check;
use online_conformal::streams::{generate, SimKind, SimSpec};
use online_conformal::{track, ScheduleSpec, TrackerConfig};

fn main() -> online_conformal::Result<()> {
    let config = TrackerConfig::new(0.1, None, Some(1.0))?;
    let scores = generate(&SimSpec::new(SimKind::IidUniform, 400_000, 3))?.scores;
    for schedule in [ScheduleSpec::default_fixed(), ScheduleSpec::default_decaying()] {
        let ledger = track(&config, &schedule, &scores)?.ledger;
        for t in [10_000, 100_000, 400_000] {
            let c = oscillation_check(&ledger.prefix(t), &config);
            println!(
                "{:<9} T={t:>6}: q>=1 at {:>5} steps (last {:?}), q<0 at {} steps",
                schedule.label(),
                c.n_full,
                c.last_full,
                c.n_empty
            );
        }
    }
    Ok(())
}
