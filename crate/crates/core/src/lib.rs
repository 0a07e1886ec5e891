//! Two independent tabular reinforcement learners playing a discretized
//! cheap-talk game, together with the tools to audit what they learn: exact
//! enumeration of monotone partitional equilibria, best-response deviation
//! metrics, informativeness, and a deterministic parallel experiment harness.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod equilibria;
pub mod error;
mod exec;
pub mod figures;
pub mod game;
pub mod io;
pub mod learner;
pub mod matrix;
pub mod simulation;
pub mod stats;
pub mod sweep;

pub use error::{Error, Result};
pub use exec::{resolve_workers, WORKERS_ENV};
pub use game::{build_game, GameConfig, GameSpec, LossKind, PriorKind, Role};
pub use learner::{LearnerConfig, LearnerParams, Policy, QTable};
pub use simulation::{run_simulation, DeviationReference, SimConfig, SimResult};
