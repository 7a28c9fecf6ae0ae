//! I.I.D. uniform scores: the decaying threshold settles on the 0.9 quantile.

use online_conformal::analysis::{empirical_coverage, loglog_slope};
use online_conformal::streams::{generate, SimKind, SimSpec};
use online_conformal::{track, ScheduleSpec, TrackerConfig};

fn main() -> online_conformal::Result<()> {
    let config = TrackerConfig::new(0.1, None, Some(1.0))?;
    let horizons = [1_000usize, 4_000, 16_000, 64_000];
    let seeds = 40;
    let mut mse = vec![0.0; horizons.len()];
    let mut coverage = Vec::new();
    for seed in 0..seeds {
        let mut spec = SimSpec::new(SimKind::IidUniform, *horizons.last().unwrap(), seed);
        spec.holdout_size = 20_000;
        let stream = generate(&spec)?;
        let ledger = track(&config, &ScheduleSpec::default_decaying(), &stream.scores)?.ledger;
        for (k, &t) in horizons.iter().enumerate() {
            mse[k] += (ledger.q_series[t - 1] - 0.9).powi(2) / seeds as f64;
        }
        coverage.push(empirical_coverage(ledger.q_next, &stream.holdout.all_scores())?);
    }
    for (t, m) in horizons.iter().zip(&mse) {
        println!("T={t:>6}  RMSE={:.5}", m.sqrt());
    }
    let xs: Vec<f64> = horizons.iter().map(|&t| t as f64).collect();
    println!("log-log MSE slope: {:.3}", loglog_slope(&xs, &mse).unwrap());
    let mean = coverage.iter().sum::<f64>() / coverage.len() as f64;
    println!("mean holdout coverage at the end: {mean:.4}");
    Ok(())
}
