//! Command-line front end. Every option may also come from a flat TOML file
//! passed with `--config`; command-line values win.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::experiment::{compare, run, write_outputs, Method, RunConfig, StreamSource, SummaryRecord};
use crate::schedule::{
    ScheduleSpec, DEFAULT_EPSILON, DEFAULT_FIXED_ETA, DEFAULT_N_COVERAGE, DEFAULT_N_MISCOVERAGE,
};
use crate::streams::{
    generate, write_ndjson, Adversary, Forecaster, NdjsonSource, Normalization, SeriesSource,
    SimKind, SimSpec, Split, DEFAULT_HOLDOUT_SIZE, DEFAULT_SEGMENT_LENGTH, DEFAULT_SEGMENT_MEANS,
};
use crate::tracker::TrackerConfig;
use crate::verify::{verify_all, Settings};

#[derive(Debug, Parser)]
#[command(name = "oconf", version, about = "Online conformal threshold tracking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track one method over a stream and write per-step tables and summaries.
    Run {
        #[command(flatten)]
        options: Options,
        /// Re-run the configuration echoed in a summary file.
        #[arg(long, value_name = "SUMMARY_JSON")]
        replay: Option<PathBuf>,
    },
    /// Run several methods on one shared stream and print a comparison table.
    Compare {
        #[command(flatten)]
        options: Options,
        /// Methods to compare (default: fixed, decaying, decay-adapt).
        #[arg(long, value_enum, value_delimiter = ',')]
        methods: Vec<MethodKind>,
    },
    /// Emit a stream as NDJSON without tracking it.
    Simulate {
        #[command(flatten)]
        options: Options,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance checks and print one line per check.
    Verify {
        /// Print the results as JSON lines instead.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Fixed,
    Decaying,
    DecayAdapt,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamKind {
    IidUniform,
    IidNormal,
    Piecewise,
    Adversarial,
    Csv,
    Ndjson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryKind {
    AllMax,
    AllMin,
    Alternating,
    RandomBlocks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    EvenOdd,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForecasterKind {
    MovingAverage,
    None,
}

/// Run options. All optional so a config file can fill the gaps.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    /// Flat TOML file of option values (keys as the long flags).
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Target miscoverage rate.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Initial threshold (default B/2, or 0 without a bound).
    #[arg(long)]
    pub q_init: Option<f64>,
    /// Declared score bound B (simulated bounded streams default to theirs).
    #[arg(long)]
    pub score_bound: Option<f64>,
    /// Leave B undeclared even when the generator has one.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_bound: Option<bool>,

    #[arg(long, value_enum)]
    pub method: Option<MethodKind>,
    /// Fixed step size.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Decay scale c in c t^(-1/2 - eps).
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Consecutive misses that declare a changepoint.
    #[arg(long)]
    pub n_miscoverage: Option<u32>,
    /// Consecutive covers that declare a changepoint.
    #[arg(long)]
    pub n_coverage: Option<u32>,
    /// Step size right after a reset (default: B, else the running score max).
    #[arg(long)]
    pub reset_scale: Option<f64>,

    #[arg(long, value_enum)]
    pub stream: Option<StreamKind>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Shorthand for seeds 0..N.
    #[arg(long)]
    pub seed_count: Option<u64>,
    #[arg(long)]
    pub holdout_size: Option<usize>,
    #[arg(long)]
    pub mean: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub segment_means: Option<Vec<f64>>,
    #[arg(long)]
    pub segment_length: Option<usize>,
    #[arg(long, value_enum)]
    pub adversary: Option<AdversaryKind>,

    /// Input file for csv or ndjson streams.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub value_column: Option<String>,
    #[arg(long)]
    pub score_field: Option<String>,
    #[arg(long, value_enum)]
    pub split: Option<SplitKind>,
    #[arg(long, value_enum)]
    pub forecaster: Option<ForecasterKind>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub lag: Option<usize>,
    /// Min-max normalize the series to [0, 1] (default true).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub normalize: Option<bool>,

    #[arg(long)]
    pub rolling_window: Option<usize>,
    /// Directory for tables and summaries.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// File name prefix for outputs.
    #[arg(long)]
    pub prefix: Option<String>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($field:ident),* $(,)?) => {
        $( if $dst.$field.is_none() { $dst.$field = $src.$field; } )*
    };
}

impl Options {
    /// Fields set here win; the rest come from `file`.
    pub fn overlay(mut self, file: Options) -> Options {
        overlay!(self, file;
            alpha, q_init, score_bound, no_bound, method, eta, scale, epsilon,
            n_miscoverage, n_coverage, reset_scale, stream, length, seeds, seed_count,
            holdout_size, mean, sigma, segment_means, segment_length, adversary, input,
            value_column, score_field, split, forecaster, window, lag, normalize,
            rolling_window, out_dir, prefix,
        );
        self
    }

    /// Reads a flat TOML file; keys may use `-` or `_`.
    pub fn from_file(path: &Path) -> Result<Options> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Malformed {
            path: path.to_path_buf(),
            row: 0,
            message: e.to_string(),
        })?;
        let normalized: toml::Table = table
            .into_iter()
            .map(|(k, v)| (k.replace('-', "_"), v))
            .collect();
        let mut opts = Options::deserialize(normalized).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            row: 0,
            message: e.to_string(),
        })?;
        opts.config = Some(path.to_path_buf());
        Ok(opts)
    }

    /// Merges in the `--config` file, if any.
    pub fn resolve(self) -> Result<Options> {
        match self.config.clone() {
            Some(path) => Ok(self.overlay(Options::from_file(&path)?)),
            None => Ok(self),
        }
    }

    pub fn stream_source(&self) -> Result<StreamSource> {
        let kind = self.stream.unwrap_or(StreamKind::IidUniform);
        let sim = |k: SimKind, default_len: usize| {
            let mut spec = SimSpec::new(k, self.length.unwrap_or(default_len), 0);
            spec.holdout_size = self.holdout_size.unwrap_or(DEFAULT_HOLDOUT_SIZE);
            StreamSource::Simulated(spec)
        };
        let source = match kind {
            StreamKind::IidUniform => sim(SimKind::IidUniform, 10_000),
            StreamKind::IidNormal => sim(
                SimKind::IidNormalClipped {
                    mean: self.mean.unwrap_or(0.5),
                    sigma: self.sigma.unwrap_or(0.15),
                    bound: self.score_bound.unwrap_or(1.0),
                },
                10_000,
            ),
            StreamKind::Piecewise => {
                let segment_means = self
                    .segment_means
                    .clone()
                    .unwrap_or_else(|| DEFAULT_SEGMENT_MEANS.to_vec());
                let segment_length = self.segment_length.unwrap_or(DEFAULT_SEGMENT_LENGTH);
                let n = segment_means.len() * segment_length;
                sim(
                    SimKind::PiecewiseNormal {
                        segment_means,
                        segment_length,
                        sigma: self.sigma.unwrap_or(1.0),
                    },
                    n,
                )
            }
            StreamKind::Adversarial => {
                let adversary = match self.adversary.unwrap_or(AdversaryKind::RandomBlocks) {
                    AdversaryKind::AllMax => Adversary::AllMax,
                    AdversaryKind::AllMin => Adversary::AllMin,
                    AdversaryKind::Alternating => Adversary::Alternating,
                    AdversaryKind::RandomBlocks => Adversary::RandomBlocks,
                };
                sim(
                    SimKind::Adversarial {
                        adversary,
                        bound: self.score_bound.unwrap_or(1.0),
                    },
                    10_000,
                )
            }
            StreamKind::Csv => {
                let path = self.require_input()?;
                let forecaster = match self.forecaster.unwrap_or(ForecasterKind::MovingAverage) {
                    ForecasterKind::MovingAverage => Forecaster::MovingAverageLagged {
                        window: self.window.unwrap_or(24),
                        lag: self.lag.unwrap_or(24),
                    },
                    ForecasterKind::None => Forecaster::None,
                };
                StreamSource::Csv(SeriesSource {
                    path,
                    value_column: self.value_column.clone().unwrap_or_else(|| "value".into()),
                    split: match self.split.unwrap_or(SplitKind::EvenOdd) {
                        SplitKind::EvenOdd => Split::EvenStreamOddHoldout,
                        SplitKind::None => Split::None,
                    },
                    forecaster,
                    normalization: if self.normalize.unwrap_or(true) {
                        Normalization::UnitInterval
                    } else {
                        Normalization::None
                    },
                })
            }
            StreamKind::Ndjson => StreamSource::Ndjson(NdjsonSource {
                path: self.require_input()?,
                score_field: self.score_field.clone().unwrap_or_else(|| "score".into()),
            }),
        };
        if let StreamSource::Simulated(spec) = &source {
            spec.validate()?;
        }
        Ok(source)
    }

    fn require_input(&self) -> Result<PathBuf> {
        self.input
            .clone()
            .ok_or_else(|| Error::config("csv and ndjson streams need --input"))
    }

    fn seeds(&self) -> Result<Vec<u64>> {
        match (&self.seeds, self.seed_count) {
            (Some(_), Some(_)) => Err(Error::config("give either seeds or seed-count, not both")),
            (Some(s), None) => Ok(s.clone()),
            (None, Some(n)) => Ok((0..n).collect()),
            (None, None) => Ok(vec![0]),
        }
    }

    pub fn tracker(&self, stream: &StreamSource) -> Result<TrackerConfig> {
        if self.no_bound == Some(true) && self.score_bound.is_some() {
            return Err(Error::config("score-bound conflicts with no-bound"));
        }
        let natural = match stream {
            StreamSource::Simulated(spec) => spec.score_bound(),
            _ => None,
        };
        let bound = if self.no_bound == Some(true) {
            None
        } else {
            self.score_bound.or(natural)
        };
        TrackerConfig::new(self.alpha.unwrap_or(0.1), self.q_init, bound)
    }

    pub fn method_for(&self, kind: MethodKind) -> Result<Method> {
        let scale = self.scale.unwrap_or(1.0);
        let epsilon = self.epsilon.unwrap_or(DEFAULT_EPSILON);
        let spec = match kind {
            MethodKind::Oracle => return Ok(Method::Oracle),
            MethodKind::Fixed => ScheduleSpec::Fixed {
                eta: self.eta.unwrap_or(DEFAULT_FIXED_ETA),
            },
            MethodKind::Decaying => ScheduleSpec::PolyDecay { scale, epsilon },
            MethodKind::DecayAdapt => ScheduleSpec::DecayAdapt {
                scale,
                epsilon,
                n_miscoverage: self.n_miscoverage.unwrap_or(DEFAULT_N_MISCOVERAGE),
                n_coverage: self.n_coverage.unwrap_or(DEFAULT_N_COVERAGE),
                reset_scale: self.reset_scale,
            },
        };
        Ok(Method::online(spec.validated()?))
    }

    /// Full run configuration for `kind`.
    pub fn run_config(&self, kind: MethodKind) -> Result<RunConfig> {
        let stream = self.stream_source()?;
        let tracker = self.tracker(&stream)?;
        let mut cfg = RunConfig::new(tracker, self.method_for(kind)?, stream);
        if let Some(w) = self.rolling_window {
            cfg.rolling_window = w;
        }
        cfg.seeds = if cfg.stream.is_seeded() { self.seeds()? } else { Vec::new() };
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    fn prefix(&self) -> String {
        self.prefix.clone().unwrap_or_else(|| "run".into())
    }
}

/// Loads the configuration echoed in a summary record.
pub fn replay_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let record: SummaryRecord = serde_json::from_str(&text)?;
    Ok(record.config)
}

/// Executes a parsed command, writing reports to `out`. Returns false when
/// `verify` ran and some check failed.
pub fn execute<W: Write>(command: Command, out: &mut W) -> Result<bool> {
    let io = |e| Error::io("<stdout>", e);
    match command {
        Command::Run { options, replay } => {
            let options = options.resolve()?;
            let cfg = match replay {
                Some(path) => replay_config(&path)?,
                None => options.run_config(options.method.unwrap_or(MethodKind::DecayAdapt))?,
            };
            let output = run(&cfg)?;
            let files = write_outputs(&output, &options.out_dir(), &options.prefix())?;
            for run in &output.runs {
                writeln!(out, "{}", serde_json::to_string(&run.summary)?).map_err(io)?;
            }
            for path in files.tables.iter().chain(&files.summaries).chain(&files.aggregate) {
                eprintln!("wrote {}", path.display());
            }
        }
        Command::Compare { options, methods } => {
            let options = options.resolve()?;
            let methods = if methods.is_empty() {
                vec![MethodKind::Fixed, MethodKind::Decaying, MethodKind::DecayAdapt]
            } else {
                methods
            };
            let configs = methods
                .iter()
                .map(|&m| options.run_config(m))
                .collect::<Result<Vec<_>>>()?;
            let table = compare(&configs)?;
            table.write_csv(&mut *out)?;
            if let Some(dir) = &options.out_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(format!("{}_compare.json", options.prefix()));
                let json = serde_json::to_string(&table)? + "\n";
                std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
                eprintln!("wrote {}", path.display());
            }
        }
        Command::Simulate { options, out: target } => {
            let options = options.resolve()?;
            let StreamSource::Simulated(mut spec) = options.stream_source()? else {
                return Err(Error::config("simulate needs a generated stream kind"));
            };
            spec.seed = *options.seeds()?.first().unwrap_or(&0);
            let stream = generate(&spec)?;
            match target {
                Some(path) => {
                    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                    write_ndjson(&stream, std::io::BufWriter::new(file)).map_err(|e| Error::io(&path, e))?;
                }
                None => write_ndjson(&stream, &mut *out).map_err(io)?,
            }
        }
        Command::Verify { json } => {
            let results = verify_all(&Settings::default())?;
            for result in &results {
                if json {
                    writeln!(out, "{}", serde_json::to_string(&result)?).map_err(io)?;
                } else {
                    writeln!(out, "{result}").map_err(io)?;
                }
            }
            return Ok(results.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("oconf").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "alpha = 0.2\nn-coverage = 12\nlength = 500\nmethod = \"fixed\"\n").unwrap();
        let cli = parse(&["run", "--config", path.to_str().unwrap(), "--alpha", "0.05"]);
        let Command::Run { options, .. } = cli.command else { panic!() };
        let opts = options.resolve().unwrap();
        assert_eq!(opts.alpha, Some(0.05));
        assert_eq!(opts.n_coverage, Some(12));
        assert_eq!(opts.length, Some(500));
        assert_eq!(opts.method, Some(MethodKind::Fixed));
    }

    #[test]
    fn unknown_file_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "alpah = 0.2\n").unwrap();
        assert!(matches!(Options::from_file(&path), Err(Error::Malformed { .. })));
    }

    #[test]
    fn uniform_stream_declares_unit_bound() {
        let opts = Options::default();
        let cfg = opts.run_config(MethodKind::Decaying).unwrap();
        assert_eq!(cfg.tracker.score_bound, Some(1.0));
        assert_eq!(cfg.tracker.q_init, 0.5);
        let cli = parse(&["run", "--no-bound"]);
        let Command::Run { options: opts, .. } = cli.command else { panic!() };
        assert_eq!(opts.run_config(MethodKind::Decaying).unwrap().tracker.score_bound, None);
    }

    #[test]
    fn conflicting_options_are_errors() {
        let opts = Options { seeds: Some(vec![1]), seed_count: Some(3), ..Options::default() };
        assert!(opts.run_config(MethodKind::Fixed).is_err());
        let opts = Options { stream: Some(StreamKind::Csv), ..Options::default() };
        assert!(opts.run_config(MethodKind::Fixed).is_err());
        let opts = Options { eta: Some(-1.0), ..Options::default() };
        assert!(opts.run_config(MethodKind::Fixed).is_err());
    }

    #[test]
    fn negative_segment_means_parse() {
        let cli = parse(&["compare", "--stream", "piecewise", "--segment-means", "-1,0,2.5"]);
        let Command::Compare { options, .. } = cli.command else { panic!() };
        assert_eq!(options.segment_means, Some(vec![-1.0, 0.0, 2.5]));
    }
}
