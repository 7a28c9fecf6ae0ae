//! Drive the tracker by hand: one score at a time, with a decaying step size
//! that resets after runs of misses or covers.

use online_conformal::{Schedule, ScheduleSpec, SetClass, StreamEvent, TrackerConfig};

fn main() -> online_conformal::Result<()> {
    let config = TrackerConfig::new(0.1, None, Some(10.0))?;
    let mut schedule = Schedule::new(ScheduleSpec::default_decay_adapt())?;
    let mut state = config.initial_state();

    // a calm stretch, then scores jump to the top of the range
    let scores = (0..90).map(|t| if t < 50 { 1.0 + 0.1 * (t % 7) as f64 } else { 8.0 });
    for (t, score) in scores.enumerate() {
        let eta = schedule.eta();
        let (covered, next) = state.step(&config, eta, StreamEvent::new(score))?;
        let reset = schedule.observe(covered, config.score_bound.unwrap_or(10.0));
        let class = online_conformal::tracker::set_state_class(state.q, 10.0);
        println!(
            "t={:>2} q={:.4} s={score:.2} eta={eta:.4} {}{}",
            t + 1,
            state.q,
            if covered { "cover" } else { "MISS " },
            if reset { "  <- changepoint" } else if class == SetClass::Full { "  (full set)" } else { "" },
        );
        state = next;
    }
    println!("changepoints: {}", schedule.state.n_changepoints);
    Ok(())
}
