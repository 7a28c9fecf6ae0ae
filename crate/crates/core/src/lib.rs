//! Online conformal threshold tracking with fixed, decaying and
//! decay-with-reset step sizes.
//!
//! The tracker keeps one scalar threshold `q_t` and updates it with
//! `q_{t+1} = q_t + eta_t * (1{s_t > q_t} - alpha)`. Everything else in the
//! crate (schedules, analysis, stream generators and file ingestion, the run
//! engine) is built around that single step.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod schedule;
pub mod streams;
pub mod tracker;
pub mod verify;

pub use error::{Error, Result};
pub use experiment::{compare, run, track, Method, RunConfig, StreamSource};
pub use schedule::{DeltaAccount, Schedule, ScheduleSpec, ScheduleState};
pub use tracker::{SetClass, StreamEvent, TrackerConfig, TrackerState};
