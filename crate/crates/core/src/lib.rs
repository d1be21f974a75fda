//! Patch-level anchor scheduling for reuse-based super-resolution streaming.
//!
//! The pipeline: [`codec`] produces a coded-stream [`trace::Trace`],
//! [`complexity`] and [`dag`] turn it into an SR-error DAG, [`estimator`]
//! evaluates anchor sets on it, [`scheduler`] picks anchors under a budget and
//! [`sim`] measures the real reconstruction error of a cache profile.

pub mod cli;
pub mod codec;
pub mod complexity;
pub mod dag;
pub mod error;
pub mod estimator;
pub mod pixels;
pub mod scheduler;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};
