//! Pre-scored streams: write scores as NDJSON, read them back, track them.

use online_conformal::experiment::StreamSource;
use online_conformal::streams::{generate, write_ndjson, NdjsonSource, SimKind, SimSpec};
use online_conformal::{run, Method, RunConfig, ScheduleSpec, TrackerConfig};

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("oconf-ndjson-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("scores.ndjson");

    // stand-in for scores produced by some model, e.g. 1 - softmax of the label
    let spec = SimSpec::new(SimKind::IidNormalClipped { mean: 0.4, sigma: 0.2, bound: 1.0 }, 5_000, 9);
    write_ndjson(&generate(&spec)?, std::fs::File::create(&path)?)?;

    let config = RunConfig::new(
        TrackerConfig::new(0.1, None, Some(1.0))?,
        Method::online(ScheduleSpec::default_decaying()),
        StreamSource::Ndjson(NdjsonSource { path: path.clone(), score_field: "score".into() }),
    );
    let out = run(&config)?;
    let last = out.runs[0].rows.last().expect("nonempty stream");
    println!(
        "read {} scores from {}; final q {:.4}, holdout coverage {:.4}, long-run {:.4}",
        out.runs[0].rows.len(),
        path.display(),
        last.q,
        last.inst_cov.unwrap_or(f64::NAN),
        last.longrun_cov
    );
    Ok(())
}
