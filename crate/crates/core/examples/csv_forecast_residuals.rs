//! Time-series pipeline: a CSV column, a lagged moving-average forecaster,
//! absolute residuals scaled to [0, 1], alternate points held out.
//!
//! Pass a CSV path and column name, or run without arguments to use a
//! synthetic half-hourly demand series.

use std::path::PathBuf;

use online_conformal::experiment::{write_outputs, StreamSource};
use online_conformal::streams::{Forecaster, Normalization, SeriesSource, Split};
use online_conformal::{run, Method, RunConfig, ScheduleSpec, TrackerConfig};

fn synthetic(dir: &std::path::Path) -> std::io::Result<PathBuf> {
    let path = dir.join("demand.csv");
    let mut body = String::from("period,demand\n");
    for t in 0..8_000 {
        let daily = (t as f64 * std::f64::consts::TAU / 48.0).sin();
        let regime = if t > 5_000 { 1.8 } else { 1.0 };
        let noise = ((t * 2_654_435_761u64 as usize) % 1000) as f64 / 1000.0 - 0.5;
        body.push_str(&format!("{t},{}\n", 5.0 + regime * daily + 0.3 * noise));
    }
    std::fs::write(&path, body)?;
    Ok(path)
}

fn main() -> anyhow::Result<()> {
    let out_dir = std::env::temp_dir().join("oconf-csv-example");
    std::fs::create_dir_all(&out_dir)?;
    let mut args = std::env::args().skip(1);
    let (path, column) = match (args.next(), args.next()) {
        (Some(p), Some(c)) => (PathBuf::from(p), c),
        _ => (synthetic(&out_dir)?, "demand".to_string()),
    };
    let source = SeriesSource {
        path,
        value_column: column,
        split: Split::EvenStreamOddHoldout,
        forecaster: Forecaster::elec2(),
        normalization: Normalization::UnitInterval,
    };
    let tracker = TrackerConfig::new(0.1, None, Some(1.0))?;
    let config = RunConfig::new(
        tracker,
        Method::online(ScheduleSpec::default_decay_adapt()),
        StreamSource::Csv(source),
    );
    let output = run(&config)?;
    let s = &output.runs[0].summary;
    println!(
        "{} steps, coverage {:.4}, {} changepoints, q* {:.4}",
        s.steps, s.summary.longrun_coverage, s.n_changepoints, s.qstar
    );
    let files = write_outputs(&output, &out_dir, "elec")?;
    println!("table: {}", files.tables[0].display());
    Ok(())
}
