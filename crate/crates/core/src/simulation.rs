//! Repeated one-shot play between two independent learners.
//!
//! A run owns a single ChaCha8 stream seeded from `SimConfig::seed`. Draws are
//! consumed in a fixed order: the sender Q-table (row-major), the receiver
//! Q-table, then per period the type, the message and the action.
//!
//! Convergence: after period `t` both agents' full softmax policies are
//! recomputed at the temperature of period `t + 1` every `check_stride`
//! periods and compared with a reference snapshot. The run stops once both
//! relative deviations stay below `rel_tol` for `window` consecutive checks.
//! With [`DeviationReference::Anchored`] the reference is the snapshot taken
//! when the current streak began (it moves only when a check fails); with
//! [`DeviationReference::Consecutive`] it is the previous check's snapshot.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameSpec, Role};
use crate::learner::{
    init_q_table, q_update_unchecked, sample_unchecked, softmax_into, temperature, LearnerConfig,
    Policy, QTable,
};
use crate::matrix::Matrix;

pub type SimRng = ChaCha8Rng;

/// What each convergence check compares the current policies against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviationReference {
    /// The snapshot at the start of the current streak: policies must stay
    /// within `rel_tol` of one fixed point for the whole window.
    #[default]
    Anchored,
    /// The previous check's snapshot.
    Consecutive,
}

impl DeviationReference {
    pub fn name(self) -> &'static str {
        match self {
            DeviationReference::Anchored => "anchored",
            DeviationReference::Consecutive => "consecutive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub max_periods: u64,
    pub window: u64,
    pub rel_tol: f64,
    pub check_stride: u64,
    pub reference: DeviationReference,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            max_periods: 10_000_000,
            window: 10_000,
            rel_tol: 1e-3,
            check_stride: 1,
            reference: DeviationReference::Anchored,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidSim("window must be at least 1".into()));
        }
        if self.check_stride == 0 {
            return Err(Error::InvalidSim("check_stride must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidSim(format!(
                "rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        if self.max_periods < self.window {
            return Err(Error::InvalidSim(format!(
                "max_periods {} is smaller than window {}",
                self.max_periods, self.window
            )));
        }
        Ok(())
    }
}

/// One agent during a run: its Q-table, hyperparameters and the index of the
/// period it is about to play.
#[derive(Debug, Clone)]
pub struct Learner {
    pub q: QTable,
    pub config: LearnerConfig,
    pub period: u64,
}

impl Learner {
    pub fn new(q: QTable, config: LearnerConfig) -> Self {
        Learner {
            q,
            config,
            period: 1,
        }
    }

    #[inline]
    pub fn temperature(&self) -> f64 {
        temperature(self.period, self.config.tau1, self.config.lambda)
    }

    pub fn policy(&self) -> Policy {
        self.q.policy(self.temperature())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub theta: usize,
    pub message: usize,
    pub action: usize,
    pub sender_reward: f64,
    pub receiver_reward: f64,
}

/// One period: draw a type, the sender's message, the receiver's action,
/// update both Q-tables and advance both temperatures.
pub fn step(
    game: &GameSpec,
    sender: &mut Learner,
    receiver: &mut Learner,
    rng: &mut SimRng,
) -> StepOutcome {
    let mut buf = vec![0.0; game.n_messages().max(game.n_actions())];
    step_with(game, sender, receiver, rng, &mut buf, None)
}

/// `cached` holds both agents' policies if they are known to equal the
/// softmax at the current period (saves recomputing the two rows).
#[inline]
fn step_with(
    game: &GameSpec,
    sender: &mut Learner,
    receiver: &mut Learner,
    rng: &mut SimRng,
    buf: &mut [f64],
    cached: Option<(&Matrix, &Matrix)>,
) -> StepOutcome {
    let theta = sample_unchecked(game.prior(), rng);
    let message = match cached {
        Some((ps, _)) => sample_unchecked(ps.row(theta), rng),
        None => {
            let row = &mut buf[..game.n_messages()];
            softmax_into(sender.q.row(theta), sender.temperature(), row);
            sample_unchecked(row, rng)
        }
    };
    let action = match cached {
        Some((_, pr)) => sample_unchecked(pr.row(message), rng),
        None => {
            let row = &mut buf[..game.n_actions()];
            softmax_into(receiver.q.row(message), receiver.temperature(), row);
            sample_unchecked(row, rng)
        }
    };
    let sender_reward = game.payoff(Role::Sender, theta, action);
    let receiver_reward = game.payoff(Role::Receiver, theta, action);
    q_update_unchecked(
        &mut sender.q,
        theta,
        message,
        sender_reward,
        sender.config.alpha,
    );
    q_update_unchecked(
        &mut receiver.q,
        message,
        action,
        receiver_reward,
        receiver.config.alpha,
    );
    sender.period += 1;
    receiver.period += 1;
    StepOutcome {
        theta,
        message,
        action,
        sender_reward,
        receiver_reward,
    }
}

/// `‖new − old‖ / ‖old‖` in the entrywise Euclidean norm.
pub fn policy_deviation(new: &Policy, old: &Policy) -> Result<f64> {
    if !new.matrix().same_shape(old.matrix()) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            new.n_states(),
            new.n_actions(),
            old.n_states(),
            old.n_actions()
        )));
    }
    Ok(relative_deviation(new.matrix(), old.matrix()))
}

#[inline]
fn relative_deviation(new: &Matrix, old: &Matrix) -> f64 {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (&n, &o) in new.as_slice().iter().zip(old.as_slice()) {
        let d = n - o;
        diff += d * d;
        norm += o * o;
    }
    (diff / norm).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub q_sender: QTable,
    pub q_receiver: QTable,
    /// Softmax policies at the temperature reached when the run stopped.
    pub policy_sender: Policy,
    pub policy_receiver: Policy,
    /// Argmax projections (uniform over ties) of the final Q-tables.
    pub greedy_sender: Policy,
    pub greedy_receiver: Policy,
    pub converged: bool,
    pub periods_elapsed: u64,
    pub final_temperature: f64,
    pub reference: DeviationReference,
    pub seed: u64,
}

pub fn run_simulation(
    spec: &GameSpec,
    sender_cfg: &LearnerConfig,
    receiver_cfg: &LearnerConfig,
    sim_cfg: &SimConfig,
) -> Result<SimResult> {
    sender_cfg.validate()?;
    receiver_cfg.validate()?;
    sim_cfg.validate()?;

    let mut rng = SimRng::seed_from_u64(sim_cfg.seed);
    let q_s = init_q_table(
        spec.n_types(),
        spec.n_messages(),
        sender_cfg.init_low,
        sender_cfg.init_high,
        &mut rng,
    )?;
    let q_r = init_q_table(
        spec.n_messages(),
        spec.n_actions(),
        receiver_cfg.init_low,
        receiver_cfg.init_high,
        &mut rng,
    )?;
    let sender = Learner::new(q_s, *sender_cfg);
    let receiver = Learner::new(q_r, *receiver_cfg);
    run_from(spec, sender, receiver, sim_cfg, rng)
}

#[derive(Clone, Copy)]
enum Snapshot {
    Reference,
    Current,
}

/// Runs the play loop from already-initialized learners.
pub fn run_from(
    spec: &GameSpec,
    mut sender: Learner,
    mut receiver: Learner,
    sim_cfg: &SimConfig,
    mut rng: SimRng,
) -> Result<SimResult> {
    sim_cfg.validate()?;
    if sender.q.n_states() != spec.n_types() || sender.q.n_actions() != spec.n_messages() {
        return Err(Error::Shape(format!(
            "sender Q-table is {}x{}, game needs {}x{}",
            sender.q.n_states(),
            sender.q.n_actions(),
            spec.n_types(),
            spec.n_messages()
        )));
    }
    if receiver.q.n_states() != spec.n_messages() || receiver.q.n_actions() != spec.n_actions() {
        return Err(Error::Shape(format!(
            "receiver Q-table is {}x{}, game needs {}x{}",
            receiver.q.n_states(),
            receiver.q.n_actions(),
            spec.n_messages(),
            spec.n_actions()
        )));
    }

    let mut ref_s = Matrix::zeros(spec.n_types(), spec.n_messages());
    let mut ref_r = Matrix::zeros(spec.n_messages(), spec.n_actions());
    sender.q.policy_into(sender.temperature(), &mut ref_s);
    receiver.q.policy_into(receiver.temperature(), &mut ref_r);
    let mut cur_s = ref_s.clone();
    let mut cur_r = ref_r.clone();
    let mut buf = vec![0.0; spec.n_messages().max(spec.n_actions())];

    let stride = sim_cfg.check_stride;
    // which buffer holds the policies of the coming period, if any
    let mut latest = Some(Snapshot::Reference);
    let mut streak = 0u64;
    let mut converged = false;
    let mut t = 0u64;

    while t < sim_cfg.max_periods {
        t += 1;
        let cached = match latest {
            Some(Snapshot::Reference) => Some((&ref_s, &ref_r)),
            Some(Snapshot::Current) => Some((&cur_s, &cur_r)),
            None => None,
        };
        step_with(spec, &mut sender, &mut receiver, &mut rng, &mut buf, cached);
        latest = None;

        if t.is_multiple_of(stride) {
            sender.q.policy_into(sender.temperature(), &mut cur_s);
            receiver.q.policy_into(receiver.temperature(), &mut cur_r);
            let within = relative_deviation(&cur_s, &ref_s) < sim_cfg.rel_tol
                && relative_deviation(&cur_r, &ref_r) < sim_cfg.rel_tol;
            if within && sim_cfg.reference == DeviationReference::Anchored {
                latest = Some(Snapshot::Current);
            } else {
                std::mem::swap(&mut ref_s, &mut cur_s);
                std::mem::swap(&mut ref_r, &mut cur_r);
                latest = Some(Snapshot::Reference);
            }

            if within {
                streak += 1;
                if streak >= sim_cfg.window {
                    converged = true;
                    break;
                }
            } else {
                streak = 0;
            }
        }
    }

    let policy_sender = sender.policy();
    let policy_receiver = receiver.policy();
    Ok(SimResult {
        greedy_sender: sender.q.greedy_policy(),
        greedy_receiver: receiver.q.greedy_policy(),
        final_temperature: sender.temperature(),
        q_sender: sender.q,
        q_receiver: receiver.q,
        policy_sender,
        policy_receiver,
        converged,
        periods_elapsed: t,
        reference: sim_cfg.reference,
        seed: sim_cfg.seed,
    })
}
