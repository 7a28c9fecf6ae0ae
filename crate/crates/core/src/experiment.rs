//! Run orchestration: schedule x stream x tracker, per-step tables and summaries.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    long_run_series, oracle_qstar, rolling_coverage, run_summary, set_classes, coverage_bounds,
    BoundReport, CoverageLedger, RunSummary,
};
use crate::error::{Error, Result};
use crate::schedule::{Schedule, ScheduleSpec};
use crate::streams::{
    generate, ingest, ingest_ndjson, Holdout, NdjsonSource, ScoreStream, SeriesSource, SimSpec,
    StreamMeta,
};
use crate::tracker::{SetClass, StreamEvent, TrackerConfig, TrackerState};

pub const DEFAULT_ROLLING_WINDOW: usize = 1000;

/// Column order of the per-step table.
pub const STEP_COLUMNS: [&str; 8] = [
    "t",
    "eta",
    "q",
    "covered",
    "longrun_cov",
    "rolling_cov",
    "inst_cov",
    "set_class",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum StreamSource {
    /// The spec's own `seed` is replaced by each entry of `RunConfig::seeds`.
    Simulated(SimSpec),
    Csv(SeriesSource),
    Ndjson(NdjsonSource),
}

impl StreamSource {
    pub fn is_seeded(&self) -> bool {
        matches!(self, StreamSource::Simulated(_))
    }

    pub fn load(&self, seed: Option<u64>) -> Result<ScoreStream> {
        match self {
            StreamSource::Simulated(spec) => {
                let mut spec = spec.clone();
                if let Some(seed) = seed {
                    spec.seed = seed;
                }
                generate(&spec)
            }
            StreamSource::Csv(src) => ingest(src),
            StreamSource::Ndjson(src) => ingest_ndjson(src),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Online { schedule: ScheduleSpec },
    /// Threshold held at the full-sequence oracle quantile.
    Oracle,
}

impl Method {
    pub fn online(schedule: ScheduleSpec) -> Self {
        Method::Online { schedule }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Method::Online { schedule } => schedule.label(),
            Method::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub tracker: TrackerConfig,
    pub method: Method,
    pub stream: StreamSource,
    pub rolling_window: usize,
    /// Seeds for simulated streams; ignored (and normally empty) for files.
    pub seeds: Vec<u64>,
}

impl RunConfig {
    pub fn new(tracker: TrackerConfig, method: Method, stream: StreamSource) -> Self {
        let seeds = match &stream {
            StreamSource::Simulated(spec) => vec![spec.seed],
            _ => Vec::new(),
        };
        Self {
            tracker,
            method,
            stream,
            rolling_window: DEFAULT_ROLLING_WINDOW,
            seeds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rolling_window == 0 {
            return Err(Error::config("rolling window must be at least 1"));
        }
        if let Method::Online { schedule } = self.method {
            schedule.validated()?;
        }
        if self.stream.is_seeded() && self.seeds.is_empty() {
            return Err(Error::config("simulated stream needs at least one seed"));
        }
        Ok(())
    }

    fn seed_list(&self) -> Vec<Option<u64>> {
        if self.stream.is_seeded() {
            self.seeds.iter().copied().map(Some).collect()
        } else {
            vec![None]
        }
    }

    /// The same configuration restricted to one seed.
    pub fn for_seed(&self, seed: Option<u64>) -> RunConfig {
        let mut cfg = self.clone();
        cfg.seeds = seed.into_iter().collect();
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub t: u64,
    pub eta: f64,
    pub q: f64,
    pub covered: bool,
    pub longrun_cov: f64,
    pub rolling_cov: f64,
    pub inst_cov: Option<f64>,
    pub set_class: SetClass,
}

/// One summary record per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub seed: Option<u64>,
    pub method: String,
    pub steps: usize,
    pub qstar: f64,
    pub summary: RunSummary,
    pub bounds: BoundReport,
    pub n_changepoints: u64,
    pub out_of_range_scores: u64,
    pub stream: StreamMeta,
    /// Replaying this configuration reproduces the run exactly.
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: Option<u64>,
    pub ledger: CoverageLedger,
    pub rows: Vec<StepRow>,
    pub summary: SummaryRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self::default();
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

/// Mean and sample standard deviation of the summary metrics across seeds.
/// Optional metrics average over the seeds where they are defined.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub longrun_coverage: MeanStd,
    pub normalized_q_variance: MeanStd,
    pub normalized_mse: MeanStd,
    pub infinite_set_fraction: MeanStd,
    pub realized_gap: MeanStd,
}

impl AggregateSummary {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a SummaryRecord>) -> Self {
        let records: Vec<&SummaryRecord> = records.into_iter().collect();
        let pick = |f: &dyn Fn(&SummaryRecord) -> Option<f64>| {
            MeanStd::of(&records.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
        };
        Self {
            longrun_coverage: pick(&|r| Some(r.summary.longrun_coverage)),
            normalized_q_variance: pick(&|r| r.summary.normalized_q_variance),
            normalized_mse: pick(&|r| r.summary.normalized_mse),
            infinite_set_fraction: pick(&|r| Some(r.summary.infinite_set_fraction)),
            realized_gap: pick(&|r| Some(r.bounds.realized_gap)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub runs: Vec<SeedRun>,
    pub aggregate: AggregateSummary,
}

/// Result of driving the tracker over a score sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedRun {
    pub ledger: CoverageLedger,
    pub state: TrackerState,
    pub n_changepoints: u64,
}

/// Runs the online update with `schedule` over `scores`.
///
/// When the spec leaves the reset scale open, a changepoint uses the declared
/// bound, else the running score maximum (or the decay scale if that maximum
/// is not positive).
pub fn track(tracker: &TrackerConfig, schedule: &ScheduleSpec, scores: &[f64]) -> Result<TrackedRun> {
    let mut sched = Schedule::new(*schedule)?;
    let mut state = tracker.initial_state();
    let mut ledger = CoverageLedger::with_capacity(state.q, scores.len());
    let fallback_scale = match *schedule {
        ScheduleSpec::DecayAdapt { scale, .. } | ScheduleSpec::PolyDecay { scale, .. } => scale,
        ScheduleSpec::Fixed { eta } => eta,
    };
    for (i, &score) in scores.iter().enumerate() {
        let q = state.q;
        let eta = sched.eta();
        let event = StreamEvent {
            score,
            timestamp: Some(i as u64 + 1),
        };
        let (covered, next) = state.step(tracker, eta, event)?;
        let hint = tracker
            .score_bound
            .or(next.max_score)
            .filter(|b| *b > 0.0)
            .unwrap_or(fallback_scale);
        sched.observe(covered, hint);
        ledger.push(score, covered, q, eta, next.q);
        state = next;
    }
    Ok(TrackedRun {
        ledger,
        state,
        n_changepoints: sched.state.n_changepoints,
    })
}

/// Threshold fixed at `qstar`; step sizes are recorded as 0.
pub fn track_oracle(qstar: f64, scores: &[f64]) -> CoverageLedger {
    let mut ledger = CoverageLedger::with_capacity(qstar, scores.len());
    for &s in scores {
        ledger.push(s, s <= qstar, qstar, 0.0, qstar);
    }
    ledger
}

fn execute(
    config: &RunConfig,
    seed: Option<u64>,
    stream: &ScoreStream,
    qstar: f64,
) -> Result<SeedRun> {
    let tracker = &config.tracker;
    let (mut ledger, n_changepoints, out_of_range, bounds) = match config.method {
        Method::Online { schedule } => {
            let run = track(tracker, &schedule, &stream.scores)?;
            let bounds = coverage_bounds(&run.ledger, tracker, &run.state.delta)?;
            (run.ledger, run.n_changepoints, run.state.out_of_range, bounds)
        }
        Method::Oracle => {
            let ledger = track_oracle(qstar, &stream.scores);
            let out_of_range = tracker.score_bound.map_or(0, |b| {
                stream.scores.iter().filter(|&&s| !(0.0..=b).contains(&s)).count() as u64
            });
            let bounds = coverage_bounds(&ledger, tracker, &ledger.delta_account())?;
            (ledger, 0, out_of_range, bounds)
        }
    };

    let inst = instantaneous_coverage(&ledger, &stream.holdout);
    ledger.inst_cov_series = inst.clone();
    let classes = set_classes(&ledger, tracker);
    let summary = run_summary(&ledger, &stream.scores, qstar, &classes)?;
    let longrun = long_run_series(&ledger);
    let rolling = rolling_coverage(&ledger, config.rolling_window);

    let rows = (0..ledger.len())
        .map(|i| StepRow {
            t: i as u64 + 1,
            eta: ledger.eta_series[i],
            q: ledger.q_series[i],
            covered: ledger.indicators[i],
            longrun_cov: longrun[i],
            rolling_cov: rolling[i],
            inst_cov: inst.as_ref().map(|v| v[i]),
            set_class: classes[i],
        })
        .collect();

    Ok(SeedRun {
        seed,
        rows,
        summary: SummaryRecord {
            seed,
            method: config.method.label().to_string(),
            steps: ledger.len(),
            qstar,
            summary,
            bounds,
            n_changepoints,
            out_of_range_scores: out_of_range,
            stream: stream.meta.clone(),
            config: config.for_seed(seed),
        },
        ledger,
    })
}

fn instantaneous_coverage(ledger: &CoverageLedger, holdout: &Holdout) -> Option<Vec<f64>> {
    if holdout.is_empty() {
        return None;
    }
    ledger
        .q_series
        .iter()
        .enumerate()
        .map(|(i, &q)| holdout.coverage_at(i as u64 + 1, q))
        .collect()
}

/// Executes the configuration once per seed.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let mut runs = Vec::new();
    for seed in config.seed_list() {
        let stream = config.stream.load(seed)?;
        let qstar = oracle_qstar(&stream.scores, config.tracker.alpha)?;
        runs.push(execute(config, seed, &stream, qstar)?);
    }
    let aggregate = AggregateSummary::from_records(runs.iter().map(|r| &r.summary));
    Ok(RunOutput { runs, aggregate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub config_method: Method,
    pub aggregate: AggregateSummary,
    pub per_seed: Vec<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub seeds: Vec<Option<u64>>,
    /// Oracle threshold of each seed's stream, shared by every row.
    pub qstar: Vec<f64>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, method: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "method",
            "seeds",
            "coverage",
            "variance",
            "mse",
            "infinite_sets",
        ])?;
        let opt = |m: &MeanStd| if m.n == 0 { String::new() } else { m.mean.to_string() };
        for row in &self.rows {
            let a = &row.aggregate;
            w.write_record([
                row.method.clone(),
                row.per_seed.len().to_string(),
                a.longrun_coverage.mean.to_string(),
                opt(&a.normalized_q_variance),
                opt(&a.normalized_mse),
                a.infinite_set_fraction.mean.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<comparison>", e))?;
        Ok(())
    }
}

/// Runs several methods over one shared stream per seed.
pub fn compare(configs: &[RunConfig]) -> Result<ComparisonTable> {
    let Some(first) = configs.first() else {
        return Err(Error::config("compare needs at least two configurations"));
    };
    if configs.len() < 2 {
        return Err(Error::config("compare needs at least two configurations"));
    }
    for c in configs {
        c.validate()?;
        if c.stream != first.stream || c.seeds != first.seeds {
            return Err(Error::StreamMismatch(
                "every compared configuration must share one stream and seed list".into(),
            ));
        }
        if c.tracker.alpha != first.tracker.alpha {
            return Err(Error::StreamMismatch("compared runs must share alpha".into()));
        }
    }
    let seeds = first.seed_list();
    let mut qstars = Vec::with_capacity(seeds.len());
    let mut records: Vec<Vec<SummaryRecord>> = vec![Vec::new(); configs.len()];
    for &seed in &seeds {
        let stream = first.stream.load(seed)?;
        let qstar = oracle_qstar(&stream.scores, first.tracker.alpha)?;
        qstars.push(qstar);
        for (k, c) in configs.iter().enumerate() {
            records[k].push(execute(c, seed, &stream, qstar)?.summary);
        }
    }
    let rows = configs
        .iter()
        .zip(records)
        .map(|(c, recs)| ComparisonRow {
            method: c.method.label().to_string(),
            config_method: c.method,
            aggregate: AggregateSummary::from_records(&recs),
            per_seed: recs.iter().map(|r| r.summary).collect(),
        })
        .collect();
    Ok(ComparisonTable {
        seeds,
        qstar: qstars,
        rows,
    })
}

/// Writes the per-step table as CSV with the fixed column order.
pub fn write_step_table<W: Write>(rows: &[StepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STEP_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.eta.to_string(),
            r.q.to_string(),
            u8::from(r.covered).to_string(),
            r.longrun_cov.to_string(),
            r.rolling_cov.to_string(),
            r.inst_cov.map(|v| v.to_string()).unwrap_or_default(),
            r.set_class.as_str().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<step table>", e))?;
    Ok(())
}

pub fn step_table_bytes(rows: &[StepRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_step_table(rows, &mut buf)?;
    Ok(buf)
}

/// Files written for one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrittenFiles {
    pub tables: Vec<PathBuf>,
    pub summaries: Vec<PathBuf>,
    pub aggregate: Option<PathBuf>,
}

/// Writes `<prefix>[_seed<k>].csv` and `.summary.json` per seed, plus
/// `<prefix>_aggregate.json` for multi-seed runs.
pub fn write_outputs(output: &RunOutput, dir: &Path, prefix: &str) -> Result<WrittenFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = WrittenFiles {
        tables: Vec::new(),
        summaries: Vec::new(),
        aggregate: None,
    };
    for run in &output.runs {
        let stem = match run.seed {
            Some(seed) => format!("{prefix}_seed{seed}"),
            None => prefix.to_string(),
        };
        let table = dir.join(format!("{stem}.csv"));
        std::fs::write(&table, step_table_bytes(&run.rows)?).map_err(|e| Error::io(&table, e))?;
        let summary = dir.join(format!("{stem}.summary.json"));
        let mut json = serde_json::to_string(&run.summary)?;
        json.push('\n');
        std::fs::write(&summary, json).map_err(|e| Error::io(&summary, e))?;
        files.tables.push(table);
        files.summaries.push(summary);
    }
    if output.runs.len() > 1 {
        let path = dir.join(format!("{prefix}_aggregate.json"));
        let mut json = serde_json::to_string(&output.aggregate)?;
        json.push('\n');
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        files.aggregate = Some(path);
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::{SimKind, SimSpec};

    fn uniform_config(method: Method, length: usize, seed: u64) -> RunConfig {
        let tracker = TrackerConfig::new(0.1, None, Some(1.0)).unwrap();
        RunConfig::new(
            tracker,
            method,
            StreamSource::Simulated(SimSpec::new(SimKind::IidUniform, length, seed)),
        )
    }

    #[test]
    fn fixed_step_long_run_within_bound() {
        let cfg = uniform_config(Method::online(ScheduleSpec::default_fixed()), 10_000, 4);
        let out = run(&cfg).unwrap();
        let rec = &out.runs[0].summary;
        let b = rec.bounds.bounds().unwrap();
        // 1.05 / (0.05 * 1e4)
        approx::assert_relative_eq!(b.bound_nonincreasing.unwrap(), 0.0021, max_relative = 1e-12);
        assert!((rec.summary.longrun_coverage - 0.9).abs() <= 0.0021);
        assert!(rec.bounds.all_satisfied());
    }

    #[test]
    fn oracle_threshold_is_constant() {
        let cfg = uniform_config(Method::Oracle, 2000, 8);
        let out = run(&cfg).unwrap();
        let rows = &out.runs[0].rows;
        assert!(rows.iter().all(|r| r.q == rows[0].q));
        assert_eq!(rows[0].q, out.runs[0].summary.qstar);
        assert!(out.runs[0].summary.bounds.bounds().is_none());
    }

    #[test]
    fn table_shape_and_columns() {
        let cfg = uniform_config(Method::online(ScheduleSpec::default_decaying()), 300, 1);
        let out = run(&cfg).unwrap();
        let bytes = step_table_bytes(&out.runs[0].rows).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), STEP_COLUMNS.join(","));
        assert_eq!(lines.count(), 300);
    }

    #[test]
    fn echoed_config_replays_identically() {
        let mut cfg = uniform_config(Method::online(ScheduleSpec::default_decay_adapt()), 3000, 21);
        cfg.seeds = vec![21, 22];
        let out = run(&cfg).unwrap();
        for r in &out.runs {
            let json = serde_json::to_string(&r.summary).unwrap();
            let back: SummaryRecord = serde_json::from_str(&json).unwrap();
            let replay = run(&back.config).unwrap();
            assert_eq!(
                step_table_bytes(&replay.runs[0].rows).unwrap(),
                step_table_bytes(&r.rows).unwrap()
            );
        }
    }

    #[test]
    fn compare_rejects_mismatched_streams() {
        let a = uniform_config(Method::online(ScheduleSpec::default_fixed()), 100, 1);
        let b = uniform_config(Method::online(ScheduleSpec::default_decaying()), 100, 2);
        assert!(matches!(compare(&[a.clone(), b]), Err(Error::StreamMismatch(_))));
        assert!(compare(&[a]).is_err());
    }

    #[test]
    fn compare_shares_the_oracle() {
        let tracker = TrackerConfig::new(0.1, None, None).unwrap();
        let stream = StreamSource::Simulated(SimSpec::piecewise_default(3));
        let configs: Vec<RunConfig> = [
            Method::online(ScheduleSpec::default_fixed()),
            Method::online(ScheduleSpec::default_decaying()),
            Method::online(ScheduleSpec::default_decay_adapt()),
            Method::Oracle,
        ]
        .into_iter()
        .map(|m| RunConfig::new(tracker, m, stream.clone()))
        .collect();
        let table = compare(&configs).unwrap();
        assert_eq!(table.rows.len(), 4);
        for row in &table.rows {
            let a = &row.aggregate;
            assert_eq!(a.normalized_q_variance.n, 1);
            assert_eq!(a.normalized_mse.n, 1);
        }
        // oracle q is q*, so its normalized MSE is exactly zero
        assert_eq!(table.row("oracle").unwrap().per_seed[0].normalized_mse, Some(0.0));
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }

    #[test]
    fn unbounded_run_marks_bounds_not_applicable() {
        let tracker = TrackerConfig::new(0.1, None, None).unwrap();
        let cfg = RunConfig::new(
            tracker,
            Method::online(ScheduleSpec::default_decaying()),
            StreamSource::Simulated(SimSpec::piecewise_default(0)),
        );
        let out = run(&cfg).unwrap();
        assert!(out.runs[0].summary.bounds.bounds().is_none());
    }

    #[test]
    fn writes_files() {
        let mut cfg = uniform_config(Method::online(ScheduleSpec::default_fixed()), 50, 1);
        cfg.seeds = vec![1, 2];
        let out = run(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_outputs(&out, dir.path(), "fx").unwrap();
        assert_eq!(files.tables.len(), 2);
        assert!(files.aggregate.is_some());
        assert!(dir.path().join("fx_seed2.summary.json").exists());
    }
}
