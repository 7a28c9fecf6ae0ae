//! Fixed, decaying and decay+adapt schedules on a stream whose mean jumps
//! every 1000 steps, plus the oracle threshold.

use online_conformal::experiment::StreamSource;
use online_conformal::streams::SimSpec;
use online_conformal::{compare, Method, RunConfig, ScheduleSpec, TrackerConfig};

fn main() -> online_conformal::Result<()> {
    let tracker = TrackerConfig::new(0.1, None, None)?;
    let stream = StreamSource::Simulated(SimSpec::piecewise_default(0));
    let configs: Vec<RunConfig> = [
        Method::online(ScheduleSpec::default_fixed()),
        Method::online(ScheduleSpec::default_decaying()),
        Method::online(ScheduleSpec::default_decay_adapt()),
        Method::Oracle,
    ]
    .into_iter()
    .map(|m| {
        let mut cfg = RunConfig::new(tracker, m, stream.clone());
        cfg.seeds = (0..20).collect();
        cfg
    })
    .collect();
    let table = compare(&configs)?;
    table.write_csv(std::io::stdout().lock())?;
    Ok(())
}
