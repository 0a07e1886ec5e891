//! Tabular memoryless learner: Q-table, Boltzmann action selection with an
//! exponentially decaying temperature, and the constant step-size update
//! (no discounting, no bootstrapping).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{babbling_benchmark, GameSpec, Role};
use crate::matrix::Matrix;

/// Below this temperature the softmax is evaluated as its zero-temperature
/// limit: uniform over the argmax set.
pub const SATURATION_TAU: f64 = 1e-12;

/// Row sums of a policy must be within this distance of 1.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Value estimates indexed by (state, action).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QTable(Matrix);

impl QTable {
    pub fn from_matrix(m: Matrix) -> Result<Self> {
        if m.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidLearner(
                "Q-table entries must be finite".into(),
            ));
        }
        Ok(QTable(m))
    }

    pub fn n_states(&self) -> usize {
        self.0.rows()
    }

    pub fn n_actions(&self) -> usize {
        self.0.cols()
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.0.get(s, a)
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        self.0.row(s)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    /// Softmax policy at temperature `tau`.
    pub fn policy(&self, tau: f64) -> Policy {
        let mut out = Matrix::zeros(self.n_states(), self.n_actions());
        self.policy_into(tau, &mut out);
        Policy(out)
    }

    pub(crate) fn policy_into(&self, tau: f64, out: &mut Matrix) {
        for s in 0..self.n_states() {
            softmax_into(self.row(s), tau, out.row_mut(s));
        }
    }

    /// Zero-temperature projection: uniform mass over each row's argmax set.
    pub fn greedy_policy(&self) -> Policy {
        let mut out = Matrix::zeros(self.n_states(), self.n_actions());
        for s in 0..self.n_states() {
            argmax_uniform(self.row(s), out.row_mut(s));
        }
        Policy(out)
    }
}

/// A row-stochastic matrix of action probabilities indexed by (state, action).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Policy(Matrix);

impl Policy {
    pub fn from_matrix(m: Matrix) -> Result<Self> {
        for r in 0..m.rows() {
            let row = m.row(r);
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::Probability(format!(
                    "row {r} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Probability(format!("row {r} sums to {sum}")));
            }
        }
        Ok(Policy(m))
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_matrix(Matrix::from_rows(rows)?)
    }

    /// Deterministic policy playing `choice[s]` in state `s`.
    pub fn deterministic(choice: &[usize], n_actions: usize) -> Result<Self> {
        let mut m = Matrix::zeros(choice.len(), n_actions);
        for (s, &a) in choice.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::OutOfRange(format!("action {a} >= {n_actions}")));
            }
            m.set(s, a, 1.0);
        }
        Ok(Policy(m))
    }

    pub fn n_states(&self) -> usize {
        self.0.rows()
    }

    pub fn n_actions(&self) -> usize {
        self.0.cols()
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.0.get(s, a)
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        self.0.row(s)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Argmax of every row with ties toward the smaller index.
    pub fn modal_actions(&self) -> Vec<usize> {
        (0..self.n_states())
            .map(|s| {
                let row = self.row(s);
                let mut best = 0;
                for (a, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    /// Uniform mass over each row's argmax set.
    pub fn greedy(&self) -> Policy {
        let mut out = Matrix::zeros(self.n_states(), self.n_actions());
        for s in 0..self.n_states() {
            argmax_uniform(self.row(s), out.row_mut(s));
        }
        Policy(out)
    }
}

impl<'de> Deserialize<'de> for Policy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let m = Matrix::deserialize(deserializer)?;
        Policy::from_matrix(m).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub tau1: f64,
    pub init_low: f64,
    pub init_high: f64,
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        // alpha = 0 is accepted: it freezes the Q-table, which the convergence
        // detector is tested against.
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidLearner(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::InvalidLearner(format!(
                "lambda must lie in [0, 1), got {}",
                self.lambda
            )));
        }
        if !(self.tau1 > 0.0) || !self.tau1.is_finite() {
            return Err(Error::InvalidLearner(format!(
                "tau1 must be positive, got {}",
                self.tau1
            )));
        }
        if !(self.init_low <= self.init_high) {
            return Err(Error::InvalidLearner(format!(
                "init_low {} exceeds init_high {}",
                self.init_low, self.init_high
            )));
        }
        Ok(())
    }
}

/// The `[learner]` block of an experiment config: hyperparameters shared by
/// both agents. Initialization bounds come from the game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerParams {
    pub alpha: f64,
    pub lambda: f64,
    pub tau1: f64,
}

impl Default for LearnerParams {
    fn default() -> Self {
        LearnerParams {
            alpha: 0.1,
            lambda: 5e-6,
            tau1: 0.1,
        }
    }
}

impl LearnerParams {
    /// Learner config for `role`, with Q-values initialized uniformly between
    /// the role's babbling payoff and zero.
    pub fn for_role(&self, spec: &GameSpec, role: Role) -> LearnerConfig {
        let bab = babbling_benchmark(spec);
        let low = match role {
            Role::Sender => bab.sender_payoff,
            Role::Receiver => bab.receiver_payoff,
        };
        LearnerConfig {
            alpha: self.alpha,
            lambda: self.lambda,
            tau1: self.tau1,
            init_low: low,
            init_high: 0.0,
        }
    }
}

/// Q-table with i.i.d. uniform entries on `[low, high]`, drawn row-major.
pub fn init_q_table<R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    low: f64,
    high: f64,
    rng: &mut R,
) -> Result<QTable> {
    if !(low <= high) || !low.is_finite() || !high.is_finite() {
        return Err(Error::InvalidLearner(format!(
            "invalid init interval [{low}, {high}]"
        )));
    }
    let mut m = Matrix::zeros(n_states, n_actions);
    let width = high - low;
    for s in 0..n_states {
        for a in 0..n_actions {
            let u: f64 = rng.gen();
            m.set(s, a, low + width * u);
        }
    }
    Ok(QTable(m))
}

/// `τ_t = τ₁·exp(−λ(t−1))` for periods `t ≥ 1`.
#[inline]
pub fn temperature(t: u64, tau1: f64, lambda: f64) -> f64 {
    debug_assert!(t >= 1);
    tau1 * (-lambda * (t - 1) as f64).exp()
}

pub fn softmax_row(q_row: &[f64], tau: f64) -> Vec<f64> {
    let mut out = vec![0.0; q_row.len()];
    softmax_into(q_row, tau, &mut out);
    out
}

/// Max-subtracted softmax. When every non-maximal exponent underflows the
/// result is already uniform over the argmax set; below [`SATURATION_TAU`]
/// that limit is taken explicitly.
#[inline]
pub fn softmax_into(q_row: &[f64], tau: f64, out: &mut [f64]) {
    if tau < SATURATION_TAU {
        argmax_uniform(q_row, out);
        return;
    }
    let max = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inv_tau = 1.0 / tau;
    let mut sum = 0.0;
    for (o, &q) in out.iter_mut().zip(q_row) {
        let e = ((q - max) * inv_tau).exp();
        *o = e;
        sum += e;
    }
    let inv_sum = 1.0 / sum;
    for o in out.iter_mut() {
        *o *= inv_sum;
    }
}

fn argmax_uniform(q_row: &[f64], out: &mut [f64]) {
    let max = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties = q_row.iter().filter(|&&q| q == max).count() as f64;
    for (o, &q) in out.iter_mut().zip(q_row) {
        *o = if q == max { 1.0 / ties } else { 0.0 };
    }
}

/// Inverse-CDF draw over `probabilities` in ascending index order.
pub fn sample<R: Rng + ?Sized>(probabilities: &[f64], rng: &mut R) -> Result<usize> {
    if probabilities.is_empty() {
        return Err(Error::Probability("empty probability vector".into()));
    }
    if probabilities.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::Probability("negative entry".into()));
    }
    Ok(sample_unchecked(probabilities, rng))
}

#[inline]
pub(crate) fn sample_unchecked<R: Rng + ?Sized>(probabilities: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last_positive = i;
            if u < cum {
                return i;
            }
        }
    }
    // u landed in the rounding gap above the final cumulative sum
    last_positive
}

/// `Q(s,a) ← Q(s,a) + α(r − Q(s,a))`; every other entry is untouched.
pub fn q_update(q: &mut QTable, s: usize, a: usize, reward: f64, alpha: f64) -> Result<()> {
    if s >= q.n_states() || a >= q.n_actions() {
        return Err(Error::OutOfRange(format!(
            "({s}, {a}) outside a {}x{} Q-table",
            q.n_states(),
            q.n_actions()
        )));
    }
    q_update_unchecked(q, s, a, reward, alpha);
    Ok(())
}

#[inline]
pub(crate) fn q_update_unchecked(q: &mut QTable, s: usize, a: usize, reward: f64, alpha: f64) {
    let old = q.0.get(s, a);
    q.0.set(s, a, old + alpha * (reward - old));
}
