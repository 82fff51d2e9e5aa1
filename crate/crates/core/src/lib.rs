//! Skewless clock synchronization: per-node update rules, stability analysis
//! of the networked iteration, a deterministic network simulator and the
//! metrics used to judge synchronization quality.
//!
//! The crate is organised bottom-up:
//!
//! - [`clock`]: single-clock recursion, the skewless rule and baseline schemes.
//! - [`topology`]: measurement graphs, Laplacians and their influence vectors.
//! - [`stability`]: system matrix, per-mode cubic, closed-form conditions.
//! - [`sim`]: seeded simulation producing [`sim::Trace`]s.
//! - [`metrics`]: deviation, percentiles, line fits, convergence.
//! - [`config`] and [`experiment`]: JSON configs, canned experiments, reports.

pub mod clock;
pub mod config;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod sim;
pub mod stability;
pub mod topology;

pub use error::{Error, Result};
