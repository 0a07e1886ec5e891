//! Replicated simulations over bias and hyperparameter grids.
//!
//! Every run gets a seed derived from the base seed, the game fingerprint and
//! its grid indices, so results do not depend on scheduling. Runs are executed
//! cell by cell (a cell is one (bias, α, λ) triple); within a cell the
//! replications run in parallel and come back in replication order.

use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    canonicalize_messages, modal_policy, nash_deviation_metrics, Metrics, ModalPolicy,
};
use crate::equilibria::{
    babbling_equilibrium, enumerate_equilibria, select_optimal, PartitionalEquilibrium,
};
use crate::error::{Error, Result};
use crate::exec::{par_map, resolve_workers};
use crate::game::{babbling_benchmark, GameConfig, GameSpec, Role};
use crate::learner::{LearnerParams, Policy};
use crate::simulation::{run_simulation, DeviationReference, SimConfig, SimResult};
use crate::stats::Summary;

/// Upper end of the histogram range for ex-ante gains.
pub const GAIN_HISTOGRAM_MAX: f64 = 0.05;
/// Payoff histograms start this far below the babbling payoff.
pub const PAYOFF_HISTOGRAM_MARGIN: f64 = 0.05;

/// `[0, 0.5]` in steps of 0.005.
pub fn default_bias_grid() -> Vec<f64> {
    (0..=100).map(|k| k as f64 / 200.0).collect()
}

/// α ∈ {0.025, 0.05, 0.1, 0.2, 0.4}.
pub fn hyperparameter_alpha_grid() -> Vec<f64> {
    vec![0.025, 0.05, 0.1, 0.2, 0.4]
}

/// λ ∈ {2, 1, 0.5, 0.25, 0.125} × 10⁻⁵.
pub fn hyperparameter_lambda_grid() -> Vec<f64> {
    vec![2e-5, 1e-5, 5e-6, 2.5e-6, 1.25e-6]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub game: GameConfig,
    /// `tau1` is shared by every cell; `alpha` and `lambda` come from the grids.
    pub learner: LearnerParams,
    /// `seed` is ignored; every run's seed is derived.
    pub sim: SimConfig,
    pub bias_grid: Vec<f64>,
    pub n_replications: usize,
    pub alpha_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub base_seed: u64,
    pub workers: Option<usize>,
    pub store_policies: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let learner = LearnerParams::default();
        SweepConfig {
            game: GameConfig::default(),
            learner,
            sim: SimConfig::default(),
            bias_grid: default_bias_grid(),
            n_replications: 1000,
            alpha_grid: vec![learner.alpha],
            lambda_grid: vec![learner.lambda],
            base_seed: 0,
            workers: None,
            store_policies: false,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bias_grid.is_empty() || self.alpha_grid.is_empty() || self.lambda_grid.is_empty() {
            return Err(Error::InvalidSweep("grids must be non-empty".into()));
        }
        if self.n_replications == 0 {
            return Err(Error::InvalidSweep(
                "n_replications must be at least 1".into(),
            ));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidSweep("workers must be at least 1".into()));
        }
        for &b in &self.bias_grid {
            GameSpec::new(&self.game.with_bias(b))?;
        }
        let spec = GameSpec::new(&self.game.with_bias(self.bias_grid[0]))?;
        for &alpha in &self.alpha_grid {
            for &lambda in &self.lambda_grid {
                LearnerParams {
                    alpha,
                    lambda,
                    ..self.learner
                }
                .for_role(&spec, Role::Sender)
                .validate()?;
            }
        }
        self.sim.validate()
    }

    pub fn n_cells(&self) -> usize {
        self.bias_grid.len() * self.alpha_grid.len() * self.lambda_grid.len()
    }

    pub fn n_runs(&self) -> usize {
        self.n_cells() * self.n_replications
    }

    /// Cells in (bias, α, λ) index order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::with_capacity(self.n_cells());
        for bias_index in 0..self.bias_grid.len() {
            for alpha_index in 0..self.alpha_grid.len() {
                for lambda_index in 0..self.lambda_grid.len() {
                    out.push(CellKey {
                        bias_index,
                        alpha_index,
                        lambda_index,
                    });
                }
            }
        }
        out
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct CellKey {
    pub bias_index: usize,
    pub alpha_index: usize,
    pub lambda_index: usize,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct RunKey {
    #[serde(flatten)]
    pub cell: CellKey,
    pub replication: usize,
}

const SEED_INCREMENT: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: a bijection on `u64` with full avalanche.
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one run. Each input is absorbed by adding it (offset by the
/// SplitMix64 increment) to the running state and re-mixing.
pub fn derive_seed(
    base_seed: u64,
    game_hash: u64,
    bias_index: usize,
    alpha_index: usize,
    lambda_index: usize,
    replication_index: usize,
) -> u64 {
    [
        game_hash,
        bias_index as u64,
        alpha_index as u64,
        lambda_index as u64,
        replication_index as u64,
    ]
    .into_iter()
    .fold(splitmix64(base_seed), |h, x| {
        splitmix64(h.wrapping_add(SEED_INCREMENT).wrapping_add(x))
    })
}

/// Everything stored about one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(flatten)]
    pub key: RunKey,
    pub seed: u64,
    pub game_fingerprint: u64,
    pub bias: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub converged: bool,
    pub periods_elapsed: u64,
    pub final_temperature: f64,
    pub convergence_reference: DeviationReference,
    #[serde(flatten)]
    pub metrics: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_sender: Option<Policy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_receiver: Option<Policy>,
}

/// A run record plus the canonically relabeled greedy choices used for modal
/// policies (kept in memory only).
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub modal_sender: Vec<usize>,
    pub modal_receiver: Vec<usize>,
}

impl RunOutcome {
    /// Scores a finished simulation.
    pub fn evaluate(
        spec: &GameSpec,
        key: RunKey,
        alpha: f64,
        lambda: f64,
        result: &SimResult,
        store_policies: bool,
    ) -> Result<Self> {
        let metrics = nash_deviation_metrics(&result.policy_sender, &result.policy_receiver, spec)?;
        let (modal_sender, modal_receiver) =
            canonical_choices(&result.greedy_sender, &result.greedy_receiver, spec)?;
        Ok(RunOutcome {
            record: RunRecord {
                key,
                seed: result.seed,
                game_fingerprint: spec.config().fingerprint(),
                bias: spec.bias(),
                alpha,
                lambda,
                converged: result.converged,
                periods_elapsed: result.periods_elapsed,
                final_temperature: result.final_temperature,
                convergence_reference: result.reference,
                metrics,
                policy_sender: store_policies.then(|| result.policy_sender.clone()),
                policy_receiver: store_policies.then(|| result.policy_receiver.clone()),
            },
            modal_sender,
            modal_receiver,
        })
    }

    /// Rebuilds the in-memory outcome of a stored record from its policies.
    pub fn from_record(record: RunRecord, spec: &GameSpec) -> Result<Self> {
        let (s, r) = match (&record.policy_sender, &record.policy_receiver) {
            (Some(s), Some(r)) => (s.greedy(), r.greedy()),
            _ => return Err(Error::Empty("record has no stored policies")),
        };
        let (modal_sender, modal_receiver) = canonical_choices(&s, &r, spec)?;
        Ok(RunOutcome {
            record,
            modal_sender,
            modal_receiver,
        })
    }
}

fn canonical_choices(
    greedy_s: &Policy,
    greedy_r: &Policy,
    spec: &GameSpec,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let c = canonicalize_messages(greedy_s, greedy_r, spec)?;
    Ok((c.sender.modal_actions(), c.receiver.modal_actions()))
}

/// Exact theoretical reference values for one bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmarks {
    pub babbling_u_sender: f64,
    pub babbling_u_receiver: f64,
    pub optimal_u_sender: f64,
    pub optimal_u_receiver: f64,
    pub optimal_mi: f64,
    /// Distinct mutual-information levels of all partitional equilibria,
    /// descending.
    pub equilibrium_mi_levels: Vec<f64>,
}

impl Benchmarks {
    pub fn compute(spec: &GameSpec) -> Self {
        Self::from_equilibria(spec, &enumerate_equilibria(spec))
    }

    pub fn from_equilibria(spec: &GameSpec, equilibria: &[PartitionalEquilibrium]) -> Self {
        let bab = babbling_benchmark(spec);
        let opt = select_optimal(equilibria).unwrap_or_else(|| babbling_equilibrium(spec));
        let mut levels: Vec<f64> = Vec::new();
        for e in equilibria {
            if !levels.iter().any(|&l| (l - e.mutual_info).abs() < 1e-12) {
                levels.push(e.mutual_info);
            }
        }
        levels.sort_by(|a, b| b.total_cmp(a));
        Benchmarks {
            babbling_u_sender: bab.sender_payoff,
            babbling_u_receiver: bab.receiver_payoff,
            optimal_u_sender: opt.u_sender,
            optimal_u_receiver: opt.u_receiver,
            optimal_mi: opt.mutual_info,
            equilibrium_mi_levels: levels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    #[serde(flatten)]
    pub cell: CellKey,
    pub bias: f64,
    pub alpha: f64,
    pub lambda: f64,
    /// Completed runs.
    pub n_runs: usize,
    /// Runs that failed and are listed in the sweep's missing-run manifest.
    pub n_missing: usize,
    pub n_converged: usize,
    pub n_eps_nash: usize,
    pub convergence_freq: f64,
    /// Over all completed runs, converged or not.
    pub eps_nash_freq: f64,
    // distributions over converged runs
    pub u_sender: Summary,
    pub u_receiver: Summary,
    pub mutual_info: Summary,
    pub max_subopt_sender: Summary,
    pub max_subopt_receiver: Summary,
    pub gain_sender: Summary,
    pub gain_receiver: Summary,
    /// Modal canonical policies over ε-Nash runs; `None` when there are none.
    pub modal_sender: Option<ModalPolicy>,
    pub modal_receiver: Option<ModalPolicy>,
    /// Normalized mutual information of the modal sender policy.
    pub modal_mi: f64,
    pub benchmarks: Benchmarks,
}

impl AggregateRecord {
    pub fn is_complete(&self) -> bool {
        self.n_missing == 0
    }
}

/// Summarizes the runs of one cell. `spec` must carry the cell's bias. The
/// result does not depend on the order of `runs`.
pub fn aggregate(
    runs: &[RunOutcome],
    spec: &GameSpec,
    benchmarks: &Benchmarks,
) -> Result<AggregateRecord> {
    let mut runs: Vec<&RunOutcome> = runs.iter().collect();
    runs.sort_by_key(|r| r.record.key);
    let first = *runs
        .first()
        .ok_or(Error::Empty("aggregate needs at least one run"))?;
    let converged: Vec<&RunOutcome> = runs
        .iter()
        .copied()
        .filter(|r| r.record.converged)
        .collect();
    let col = |f: fn(&Metrics) -> f64| -> Vec<f64> {
        converged.iter().map(|r| f(&r.record.metrics)).collect()
    };

    let payoff_range = |bab: f64| (bab - PAYOFF_HISTOGRAM_MARGIN, 0.0);
    let eps: Vec<&RunOutcome> = runs
        .iter()
        .copied()
        .filter(|r| r.record.metrics.is_eps_nash)
        .collect();
    let (modal_sender, modal_receiver, modal_mi) = if eps.is_empty() {
        (None, None, f64::NAN)
    } else {
        let choices_s: Vec<Vec<usize>> = eps.iter().map(|r| r.modal_sender.clone()).collect();
        let choices_r: Vec<Vec<usize>> = eps.iter().map(|r| r.modal_receiver.clone()).collect();
        let ms = modal_from_choices(&choices_s, spec.n_messages())?;
        let mr = modal_from_choices(&choices_r, spec.n_actions())?;
        let mi =
            crate::analysis::normalized_mutual_information(&ms.to_policy(spec.n_messages())?, spec)
                .unwrap_or(f64::NAN);
        (Some(ms), Some(mr), mi)
    };

    let n = runs.len();
    let n_converged = converged.len();
    Ok(AggregateRecord {
        cell: first.record.key.cell,
        bias: first.record.bias,
        alpha: first.record.alpha,
        lambda: first.record.lambda,
        n_runs: n,
        n_missing: 0,
        n_converged,
        n_eps_nash: eps.len(),
        convergence_freq: n_converged as f64 / n as f64,
        eps_nash_freq: eps.len() as f64 / n as f64,
        u_sender: Summary::new(
            &col(|m| m.u_sender),
            payoff_range(benchmarks.babbling_u_sender),
        ),
        u_receiver: Summary::new(
            &col(|m| m.u_receiver),
            payoff_range(benchmarks.babbling_u_receiver),
        ),
        mutual_info: Summary::new(&col(|m| m.mutual_info), (0.0, 1.0)),
        max_subopt_sender: Summary::new(&col(|m| m.max_subopt_sender), (0.0, 1.0)),
        max_subopt_receiver: Summary::new(&col(|m| m.max_subopt_receiver), (0.0, 1.0)),
        gain_sender: Summary::new(&col(|m| m.gain_sender), (0.0, GAIN_HISTOGRAM_MAX)),
        gain_receiver: Summary::new(&col(|m| m.gain_receiver), (0.0, GAIN_HISTOGRAM_MAX)),
        modal_sender,
        modal_receiver,
        modal_mi,
        benchmarks: benchmarks.clone(),
    })
}

fn modal_from_choices(choices: &[Vec<usize>], n_actions: usize) -> Result<ModalPolicy> {
    let policies = choices
        .iter()
        .map(|c| Policy::deterministic(c, n_actions))
        .collect::<Result<Vec<_>>>()?;
    modal_policy(&policies)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingRun {
    #[serde(flatten)]
    pub key: RunKey,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    /// Sorted by run key.
    pub runs: Vec<RunOutcome>,
    /// One per cell with at least one completed run, in cell order.
    pub aggregates: Vec<AggregateRecord>,
    pub missing: Vec<MissingRun>,
}

impl SweepOutput {
    pub fn records(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().map(|r| &r.record)
    }
}

/// Completed runs and aggregate of one cell, handed to a sink as soon as the
/// cell finishes.
pub struct CellOutput<'a> {
    pub runs: &'a [RunOutcome],
    pub aggregate: Option<&'a AggregateRecord>,
    pub missing: &'a [MissingRun],
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    run_sweep_with_sink(cfg, |_| Ok(()))
}

/// Runs every cell, calling `sink` after each one (in cell order) so records
/// can be streamed to disk during long sweeps.
pub fn run_sweep_with_sink<F>(cfg: &SweepConfig, mut sink: F) -> Result<SweepOutput>
where
    F: FnMut(&CellOutput<'_>) -> Result<()>,
{
    cfg.validate()?;
    let workers = resolve_workers(cfg.workers);
    let fingerprint = cfg.game.fingerprint();
    let specs: Vec<GameSpec> = cfg
        .bias_grid
        .iter()
        .map(|&b| GameSpec::new(&cfg.game.with_bias(b)))
        .collect::<Result<_>>()?;
    let mut benchmarks: Vec<Option<Benchmarks>> = vec![None; specs.len()];

    let mut out = SweepOutput {
        runs: Vec::with_capacity(cfg.n_runs()),
        aggregates: Vec::with_capacity(cfg.n_cells()),
        missing: Vec::new(),
    };

    for cell in cfg.cells() {
        let spec = &specs[cell.bias_index];
        let alpha = cfg.alpha_grid[cell.alpha_index];
        let lambda = cfg.lambda_grid[cell.lambda_index];
        let params = LearnerParams {
            alpha,
            lambda,
            ..cfg.learner
        };
        let sender_cfg = params.for_role(spec, Role::Sender);
        let receiver_cfg = params.for_role(spec, Role::Receiver);
        let keys: Vec<RunKey> = (0..cfg.n_replications)
            .map(|replication| RunKey { cell, replication })
            .collect();

        let results = par_map(&keys, workers, |&key| {
            let seed = derive_seed(
                cfg.base_seed,
                fingerprint,
                cell.bias_index,
                cell.alpha_index,
                cell.lambda_index,
                key.replication,
            );
            let sim = SimConfig { seed, ..cfg.sim };
            let attempt = catch_unwind(AssertUnwindSafe(|| {
                run_simulation(spec, &sender_cfg, &receiver_cfg, &sim).and_then(|res| {
                    RunOutcome::evaluate(spec, key, alpha, lambda, &res, cfg.store_policies)
                })
            }));
            match attempt {
                Ok(Ok(outcome)) => Ok(outcome),
                Ok(Err(e)) => Err(MissingRun {
                    key,
                    seed,
                    error: e.to_string(),
                }),
                Err(panic) => Err(MissingRun {
                    key,
                    seed,
                    error: panic_message(panic),
                }),
            }
        });

        let mut runs = Vec::with_capacity(results.len());
        let mut missing = Vec::new();
        for r in results {
            match r {
                Ok(o) => runs.push(o),
                Err(m) => missing.push(m),
            }
        }

        let aggregate = if runs.is_empty() {
            None
        } else {
            let bench =
                benchmarks[cell.bias_index].get_or_insert_with(|| Benchmarks::compute(spec));
            let mut agg = aggregate(&runs, spec, bench)?;
            agg.n_missing = missing.len();
            Some(agg)
        };
        sink(&CellOutput {
            runs: &runs,
            aggregate: aggregate.as_ref(),
            missing: &missing,
        })?;
        out.runs.extend(runs);
        out.aggregates.extend(aggregate);
        out.missing.extend(missing);
    }
    Ok(out)
}

fn panic_message(panic: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        format!("worker panicked: {s}")
    } else if let Some(s) = panic.downcast_ref::<String>() {
        format!("worker panicked: {s}")
    } else {
        "worker panicked".to_string()
    }
}
