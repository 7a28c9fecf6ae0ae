//! Score streams: seeded simulators, file ingestion and adaptive adversaries.
//!
//! Every stream comes with a holdout used to estimate instantaneous coverage
//! `P(s <= q_t)` at each step. I.I.D. simulators draw the holdout from the same
//! distribution; the piecewise-Normal simulator draws one holdout block per
//! segment; ingested series use the odd-indexed points when split.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analysis::SortedScores;
use crate::error::{Error, Result};
use crate::schedule::{Schedule, ScheduleSpec};
use crate::tracker::{StreamEvent, TrackerConfig};

/// Generator identifier recorded in run metadata.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9); stream 0 = scores, stream 1 = holdout";

const SCORE_STREAM: u64 = 0;
const HOLDOUT_STREAM: u64 = 1;

/// Default holdout draws per distribution segment.
pub const DEFAULT_HOLDOUT_SIZE: usize = 1000;
pub const DEFAULT_SEGMENT_MEANS: [f64; 4] = [0.0, 2.0, 4.0, 6.0];
pub const DEFAULT_SEGMENT_LENGTH: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adversary {
    AllMax,
    AllMin,
    Alternating,
    RandomBlocks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimKind {
    IidUniform,
    IidNormalClipped {
        mean: f64,
        sigma: f64,
        bound: f64,
    },
    PiecewiseNormal {
        segment_means: Vec<f64>,
        segment_length: usize,
        sigma: f64,
    },
    Adversarial {
        adversary: Adversary,
        bound: f64,
    },
}

impl SimKind {
    pub fn piecewise_default() -> Self {
        SimKind::PiecewiseNormal {
            segment_means: DEFAULT_SEGMENT_MEANS.to_vec(),
            segment_length: DEFAULT_SEGMENT_LENGTH,
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub kind: SimKind,
    pub length: usize,
    pub seed: u64,
    pub holdout_size: usize,
}

impl SimSpec {
    pub fn new(kind: SimKind, length: usize, seed: u64) -> Self {
        Self {
            kind,
            length,
            seed,
            holdout_size: DEFAULT_HOLDOUT_SIZE,
        }
    }

    /// Four segments of 1000 steps with means 0, 2, 4, 6 and unit variance.
    pub fn piecewise_default(seed: u64) -> Self {
        Self::new(
            SimKind::piecewise_default(),
            DEFAULT_SEGMENT_MEANS.len() * DEFAULT_SEGMENT_LENGTH,
            seed,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::config("stream length must be at least 1"));
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive, got {v}")))
            }
        };
        match &self.kind {
            SimKind::IidUniform => {}
            SimKind::IidNormalClipped { mean, sigma, bound } => {
                positive("sigma", *sigma)?;
                positive("bound", *bound)?;
                if !mean.is_finite() {
                    return Err(Error::config("mean must be finite"));
                }
            }
            SimKind::PiecewiseNormal {
                segment_means,
                segment_length,
                sigma,
            } => {
                positive("sigma", *sigma)?;
                if segment_means.is_empty() || *segment_length == 0 {
                    return Err(Error::config("piecewise stream needs at least one nonempty segment"));
                }
                if segment_means.iter().any(|m| !m.is_finite()) {
                    return Err(Error::config("segment means must be finite"));
                }
                if segment_means.len() * segment_length != self.length {
                    return Err(Error::config(format!(
                        "segment lengths sum to {} but stream length is {}",
                        segment_means.len() * segment_length,
                        self.length
                    )));
                }
            }
            SimKind::Adversarial { bound, .. } => positive("bound", *bound)?,
        }
        Ok(())
    }

    /// Declared score bound implied by the generator, if any.
    pub fn score_bound(&self) -> Option<f64> {
        match &self.kind {
            SimKind::IidUniform => Some(1.0),
            SimKind::IidNormalClipped { bound, .. } | SimKind::Adversarial { bound, .. } => Some(*bound),
            SimKind::PiecewiseNormal { .. } => None,
        }
    }
}

/// Holdout block valid from step `start` (1-based) until the next block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutSegment {
    pub start: u64,
    pub scores: SortedScores,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Holdout {
    pub segments: Vec<HoldoutSegment>,
}

impl Holdout {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn single(scores: Vec<f64>) -> Self {
        if scores.is_empty() {
            return Self::none();
        }
        Self {
            segments: vec![HoldoutSegment {
                start: 1,
                scores: SortedScores::new(scores),
            }],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.segments.iter().all(|s| s.scores.is_empty())
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.scores.len()).sum()
    }

    /// Estimated `P(s <= q)` under the distribution in force at step `t`.
    pub fn coverage_at(&self, t: u64, q: f64) -> Option<f64> {
        let idx = self.segments.partition_point(|s| s.start <= t);
        let seg = self.segments.get(idx.checked_sub(1)?)?;
        seg.scores.coverage(q)
    }

    /// All holdout scores, segment by segment.
    pub fn all_scores(&self) -> Vec<f64> {
        self.segments
            .iter()
            .flat_map(|s| s.scores.as_slice().iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StreamMeta {
    pub source: String,
    pub rng: Option<String>,
    /// `(min, max)` of the raw series when unit-interval normalization was applied.
    pub normalization: Option<(f64, f64)>,
    /// Leading steps without a full forecast window.
    pub skipped_leading: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreStream {
    pub scores: Vec<f64>,
    pub holdout: Holdout,
    pub meta: StreamMeta,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(mean: f64, sigma: f64) -> Result<Normal<f64>> {
    Normal::new(mean, sigma).map_err(|e| Error::config(format!("normal({mean}, {sigma}): {e}")))
}

/// Draws a simulated stream and its holdout. Deterministic in `spec.seed`.
pub fn generate(spec: &SimSpec) -> Result<ScoreStream> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, SCORE_STREAM);
    let mut hold_rng = rng_for(spec.seed, HOLDOUT_STREAM);
    let n = spec.length;
    let m = spec.holdout_size;

    let (scores, holdout) = match &spec.kind {
        SimKind::IidUniform => {
            let draw = |r: &mut ChaCha8Rng| r.random::<f64>();
            let scores = (0..n).map(|_| draw(&mut rng)).collect();
            let hold = (0..m).map(|_| draw(&mut hold_rng)).collect();
            (scores, Holdout::single(hold))
        }
        SimKind::IidNormalClipped { mean, sigma, bound } => {
            let dist = normal(*mean, *sigma)?;
            let draw = |r: &mut ChaCha8Rng| dist.sample(r).clamp(0.0, *bound);
            let scores = (0..n).map(|_| draw(&mut rng)).collect();
            let hold = (0..m).map(|_| draw(&mut hold_rng)).collect();
            (scores, Holdout::single(hold))
        }
        SimKind::PiecewiseNormal {
            segment_means,
            segment_length,
            sigma,
        } => {
            let mut scores = Vec::with_capacity(n);
            let mut segments = Vec::with_capacity(segment_means.len());
            for (k, &mu) in segment_means.iter().enumerate() {
                let dist = normal(mu, *sigma)?;
                scores.extend((0..*segment_length).map(|_| dist.sample(&mut rng)));
                let hold: Vec<f64> = (0..m).map(|_| dist.sample(&mut hold_rng)).collect();
                if !hold.is_empty() {
                    segments.push(HoldoutSegment {
                        start: (k * segment_length) as u64 + 1,
                        scores: SortedScores::new(hold),
                    });
                }
            }
            (scores, Holdout { segments })
        }
        SimKind::Adversarial { adversary, bound } => {
            let b = *bound;
            let scores = match adversary {
                Adversary::AllMax => vec![b; n],
                Adversary::AllMin => vec![0.0; n],
                Adversary::Alternating => (0..n).map(|i| if i % 2 == 0 { b } else { 0.0 }).collect(),
                Adversary::RandomBlocks => {
                    let mut out = Vec::with_capacity(n);
                    while out.len() < n {
                        let len = rng.random_range(1..=100usize).min(n - out.len());
                        let value = match rng.random_range(0..3u8) {
                            0 => 0.0,
                            1 => b,
                            _ => rng.random::<f64>() * b,
                        };
                        out.extend(std::iter::repeat_n(value, len));
                    }
                    out
                }
            };
            (scores, Holdout::none())
        }
    };

    Ok(ScoreStream {
        scores,
        holdout,
        meta: StreamMeta {
            source: format!("simulated:{}", sim_kind_name(&spec.kind)),
            rng: Some(RNG_ALGORITHM.to_string()),
            normalization: None,
            skipped_leading: 0,
        },
    })
}

fn sim_kind_name(kind: &SimKind) -> &'static str {
    match kind {
        SimKind::IidUniform => "iid_uniform",
        SimKind::IidNormalClipped { .. } => "iid_normal_clipped",
        SimKind::PiecewiseNormal { .. } => "piecewise_normal",
        SimKind::Adversarial { .. } => "adversarial",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Even row indices (0-based) form the stream, odd ones the holdout.
    EvenStreamOddHoldout,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Forecaster {
    /// Forecast at `t` is the mean of `y[t-lag-window .. t-lag]`.
    MovingAverageLagged { window: usize, lag: usize },
    /// Values are already scores.
    None,
}

impl Forecaster {
    /// One-day-delayed moving average on hourly data.
    pub fn elec2() -> Self {
        Forecaster::MovingAverageLagged { window: 24, lag: 24 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    UnitInterval,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesSource {
    pub path: PathBuf,
    pub value_column: String,
    pub split: Split,
    pub forecaster: Forecaster,
    pub normalization: Normalization,
}

impl SeriesSource {
    pub fn validate(&self) -> Result<()> {
        if let Forecaster::MovingAverageLagged { window, .. } = self.forecaster {
            if window == 0 {
                return Err(Error::config("forecast window must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Reads a CSV series and turns it into residual scores.
pub fn ingest(source: &SeriesSource) -> Result<ScoreStream> {
    source.validate()?;
    let values = read_csv_column(&source.path, &source.value_column)?;
    let mut stream = scores_from_series(&values, source.forecaster, source.normalization, source.split)?;
    stream.meta.source = format!("csv:{}", source.path.display());
    Ok(stream)
}

pub fn read_csv_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let idx = headers
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| Error::Malformed {
            path: path.to_path_buf(),
            row: 1,
            message: format!("no column named {column:?}"),
        })?;
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line());
        let malformed = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            row,
            message,
        };
        let field = record
            .get(idx)
            .ok_or_else(|| malformed(format!("missing column {column:?}")))?;
        let v: f64 = field
            .trim()
            .parse()
            .map_err(|_| malformed(format!("{field:?} is not a number")))?;
        if !v.is_finite() {
            return Err(malformed(format!("{field:?} is not finite")));
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            row: 1,
            message: "no data rows".into(),
        });
    }
    Ok(values)
}

/// Normalization, forecasting, residual scoring and split over raw values.
pub fn scores_from_series(
    values: &[f64],
    forecaster: Forecaster,
    normalization: Normalization,
    split: Split,
) -> Result<ScoreStream> {
    let mut meta = StreamMeta::default();
    let y: Vec<f64> = match normalization {
        Normalization::None => values.to_vec(),
        Normalization::UnitInterval => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            meta.normalization = Some((lo, hi));
            let span = hi - lo;
            // a constant series maps to 0
            values
                .iter()
                .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
                .collect()
        }
    };

    let (first, residuals): (usize, Vec<f64>) = match forecaster {
        Forecaster::None => (0, y.clone()),
        Forecaster::MovingAverageLagged { window, lag } => {
            let first = window + lag;
            let mut out = Vec::with_capacity(y.len().saturating_sub(first));
            for t in first..y.len() {
                let past = &y[t - lag - window..t - lag];
                let forecast = past.iter().sum::<f64>() / window as f64;
                out.push((y[t] - forecast).abs());
            }
            (first.min(y.len()), out)
        }
    };
    meta.skipped_leading = first;
    if residuals.is_empty() {
        return Err(Error::config(format!(
            "series of length {} is too short for the forecast window",
            y.len()
        )));
    }

    let (scores, holdout) = match split {
        Split::None => (residuals, Vec::new()),
        Split::EvenStreamOddHoldout => {
            let mut stream = Vec::with_capacity(residuals.len() / 2 + 1);
            let mut hold = Vec::with_capacity(residuals.len() / 2 + 1);
            for (i, r) in residuals.into_iter().enumerate() {
                if (first + i) % 2 == 0 {
                    stream.push(r);
                } else {
                    hold.push(r);
                }
            }
            (stream, hold)
        }
    };
    if scores.is_empty() {
        return Err(Error::config("no stream points left after the split"));
    }
    Ok(ScoreStream {
        scores,
        holdout: Holdout::single(holdout),
        meta,
    })
}

/// Pre-scored NDJSON: one object per line with a numeric score field, and
/// optionally `"holdout": true` plus `"segment_start": t` for holdout rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NdjsonSource {
    pub path: PathBuf,
    pub score_field: String,
}

pub fn ingest_ndjson(source: &NdjsonSource) -> Result<ScoreStream> {
    let path = &source.path;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut scores = Vec::new();
    let mut held: Vec<(u64, f64)> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let row = i as u64 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            path: path.clone(),
            row,
            message,
        };
        let obj: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let score = obj
            .get(&source.score_field)
            .and_then(serde_json::Value::as_f64)
            .filter(|s| s.is_finite())
            .ok_or_else(|| malformed(format!("missing or non-numeric {:?}", source.score_field)))?;
        if obj.get("holdout").and_then(serde_json::Value::as_bool).unwrap_or(false) {
            let start = obj.get("segment_start").and_then(serde_json::Value::as_u64).unwrap_or(1);
            held.push((start.max(1), score));
        } else {
            scores.push(score);
        }
    }
    if scores.is_empty() {
        return Err(Error::Malformed {
            path: path.clone(),
            row: 0,
            message: "no stream scores".into(),
        });
    }
    held.sort_by_key(|&(start, _)| start);
    let mut segments: Vec<HoldoutSegment> = Vec::new();
    for chunk in held.chunk_by(|a, b| a.0 == b.0) {
        segments.push(HoldoutSegment {
            start: chunk[0].0,
            scores: SortedScores::new(chunk.iter().map(|&(_, s)| s).collect()),
        });
    }
    Ok(ScoreStream {
        scores,
        holdout: Holdout { segments },
        meta: StreamMeta {
            source: format!("ndjson:{}", path.display()),
            ..StreamMeta::default()
        },
    })
}

/// Writes a stream in the NDJSON layout read by [`ingest_ndjson`].
pub fn write_ndjson<W: Write>(stream: &ScoreStream, mut out: W) -> std::io::Result<()> {
    for (i, s) in stream.scores.iter().enumerate() {
        writeln!(out, "{}", serde_json::json!({ "t": i + 1, "score": s }))?;
    }
    for seg in &stream.holdout.segments {
        for s in seg.scores.as_slice() {
            writeln!(
                out,
                "{}",
                serde_json::json!({ "score": s, "holdout": true, "segment_start": seg.start })
            )?;
        }
    }
    Ok(())
}

/// How the adaptive adversary picks each score against the current threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum AdversaryPolicy {
    /// `s_t = B`: a miss whenever `q_t < B`.
    AlwaysMiss,
    /// `s_t = 0`: a cover whenever `q_t >= 0`.
    AlwaysCover,
    /// Miss on odd steps, cover on even ones.
    Alternating,
    /// Each step aims for a miss with probability `miss_prob`, scoring just
    /// above or exactly at `q_t` (clamped to `[0, B]`).
    RandomFlip { miss_prob: f64, seed: u64 },
}

/// Scores chosen step by step against the tracker's own trajectory.
pub fn adversarial_worstcase(
    schedule: &ScheduleSpec,
    config: &TrackerConfig,
    horizon: usize,
    policy: AdversaryPolicy,
) -> Result<Vec<f64>> {
    let b = config
        .score_bound
        .ok_or_else(|| Error::config("adversarial scores need a declared score bound"))?;
    let mut sched = Schedule::new(*schedule)?;
    let mut state = config.initial_state();
    let mut rng = match policy {
        AdversaryPolicy::RandomFlip { seed, .. } => Some(rng_for(seed, SCORE_STREAM)),
        _ => None,
    };
    let mut out = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let q = state.q;
        let score = match policy {
            AdversaryPolicy::AlwaysMiss => b,
            AdversaryPolicy::AlwaysCover => 0.0,
            AdversaryPolicy::Alternating => {
                if t % 2 == 1 {
                    b
                } else {
                    0.0
                }
            }
            AdversaryPolicy::RandomFlip { miss_prob, .. } => {
                let rng = rng.as_mut().expect("rng seeded for random policy");
                if rng.random::<f64>() < miss_prob {
                    next_up(q).clamp(0.0, b)
                } else {
                    q.clamp(0.0, b)
                }
            }
        };
        let eta = sched.eta();
        let (covered, next) = state.step(config, eta, StreamEvent::new(score))?;
        sched.observe(covered, b);
        state = next;
        out.push(score);
    }
    Ok(out)
}

/// Smallest float strictly greater than `x` (finite `x`).
fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    if x > 0.0 {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}
