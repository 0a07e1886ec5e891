//! Experiment config files (TOML).
//!
//! ```toml
//! [game]
//! n_types = 6          # n_messages defaults to n_types, n_actions to 2n-1
//! bias = 0.2
//! prior = "uniform"    # uniform | increasing | decreasing
//! loss = "quadratic"   # quadratic | quartic | absolute
//!
//! [learner]
//! alpha = 0.1
//! lambda = 5e-6
//! tau1 = 0.1
//!
//! [sim]
//! max_periods = 10000000
//! window = 10000
//! rel_tol = 1e-3
//! check_stride = 1
//! reference = "anchored"  # anchored | consecutive
//! seed = 0
//!
//! [sweep]
//! bias_grid = [0.0, 0.2, 0.45]   # default: 0 to 0.5 in steps of 0.005
//! n_replications = 1000
//! alpha_grid = [0.1]             # default: [learner.alpha]
//! lambda_grid = [5e-6]           # default: [learner.lambda]
//! base_seed = 0
//! workers = 4                    # default: all cores
//! store_policies = false
//! ```
//!
//! Every block and key is optional; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameConfig, GameSpec, Role};
use crate::learner::LearnerParams;
use crate::simulation::SimConfig;
use crate::sweep::{default_bias_grid, SweepConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepBlock {
    pub bias_grid: Option<Vec<f64>>,
    pub n_replications: usize,
    pub alpha_grid: Option<Vec<f64>>,
    pub lambda_grid: Option<Vec<f64>>,
    pub base_seed: u64,
    pub workers: Option<usize>,
    pub store_policies: bool,
}

impl Default for SweepBlock {
    fn default() -> Self {
        SweepBlock {
            bias_grid: None,
            n_replications: 1000,
            alpha_grid: None,
            lambda_grid: None,
            base_seed: 0,
            workers: None,
            store_policies: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub game: GameConfig,
    pub learner: LearnerParams,
    pub sim: SimConfig,
    pub sweep: SweepBlock,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let spec = GameSpec::new(&self.game)?;
        self.learner.for_role(&spec, Role::Sender).validate()?;
        self.sim.validate()?;
        self.sweep_config().validate()
    }

    pub fn game_spec(&self) -> Result<GameSpec> {
        GameSpec::new(&self.game)
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            game: self.game.clone(),
            learner: self.learner,
            sim: self.sim,
            bias_grid: self
                .sweep
                .bias_grid
                .clone()
                .unwrap_or_else(default_bias_grid),
            n_replications: self.sweep.n_replications,
            alpha_grid: self
                .sweep
                .alpha_grid
                .clone()
                .unwrap_or_else(|| vec![self.learner.alpha]),
            lambda_grid: self
                .sweep
                .lambda_grid
                .clone()
                .unwrap_or_else(|| vec![self.learner.lambda]),
            base_seed: self.sweep.base_seed,
            workers: self.sweep.workers,
            store_policies: self.sweep.store_policies,
        }
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config { message, .. } => Error::Config {
            path: path.to_path_buf(),
            message,
        },
        other => Error::Config {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
        path: "<inline>".into(),
        message: describe_toml_error(text, &e),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn describe_toml_error(text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}: {}", e.message())
        }
        None => e.message().to_string(),
    }
}
