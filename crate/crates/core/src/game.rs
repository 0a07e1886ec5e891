//! The discretized sender–receiver game.
//!
//! Types, messages and actions are index sets. Type and action values live in
//! lookup tables built once as uniform grids over `[0, 1]`; everything else in
//! the crate compares indices, never floating-point grid values.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used for every "is this a tie?" comparison on expected
/// utilities. Grid payoffs are sums of products of small rationals, so exact
/// ties differ only by rounding.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    #[default]
    Uniform,
    /// `p(θ_k) ∝ k` for `k = 1..=n`.
    Increasing,
    /// `p(θ_k) ∝ n + 1 − k`.
    Decreasing,
}

impl PriorKind {
    pub fn masses(self, n: usize) -> Vec<f64> {
        let weights: Vec<f64> = match self {
            PriorKind::Uniform => vec![1.0; n],
            PriorKind::Increasing => (1..=n).map(|k| k as f64).collect(),
            PriorKind::Decreasing => (1..=n).map(|k| (n + 1 - k) as f64).collect(),
        };
        let total: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / total).collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            PriorKind::Uniform => "uniform",
            PriorKind::Increasing => "increasing",
            PriorKind::Decreasing => "decreasing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Quadratic,
    Quartic,
    Absolute,
}

impl LossKind {
    /// Loss of a distance `d`; zero at the ideal point, increasing in `|d|`.
    #[inline]
    pub fn loss(self, d: f64) -> f64 {
        match self {
            LossKind::Quadratic => d * d,
            LossKind::Quartic => {
                let d2 = d * d;
                d2 * d2
            }
            LossKind::Absolute => d.abs(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Quadratic => "quadratic",
            LossKind::Quartic => "quartic",
            LossKind::Absolute => "absolute",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Sender,
    Receiver,
}

/// The `[game]` block of an experiment config.
///
/// `n_messages` defaults to `n_types` and `n_actions` to `2·n_types − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameConfig {
    pub n_types: usize,
    pub n_messages: Option<usize>,
    pub n_actions: Option<usize>,
    pub bias: f64,
    pub prior: PriorKind,
    pub loss: LossKind,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            n_types: 6,
            n_messages: None,
            n_actions: None,
            bias: 0.0,
            prior: PriorKind::Uniform,
            loss: LossKind::Quadratic,
        }
    }
}

impl GameConfig {
    pub fn baseline(n_types: usize, bias: f64) -> Self {
        GameConfig {
            n_types,
            bias,
            ..GameConfig::default()
        }
    }

    pub fn with_bias(&self, bias: f64) -> Self {
        GameConfig {
            bias,
            ..self.clone()
        }
    }

    pub fn resolved_messages(&self) -> usize {
        self.n_messages.unwrap_or(self.n_types)
    }

    pub fn resolved_actions(&self) -> usize {
        self.n_actions
            .unwrap_or_else(|| (2 * self.n_types).saturating_sub(1))
    }

    /// Stable 64-bit fingerprint of the game structure (everything except the
    /// bias, which sweeps index separately). FNV-1a over a canonical string.
    pub fn fingerprint(&self) -> u64 {
        let canonical = format!(
            "types={};messages={};actions={};prior={};loss={}",
            self.n_types,
            self.resolved_messages(),
            self.resolved_actions(),
            self.prior.name(),
            self.loss.name()
        );
        fnv1a(canonical.as_bytes())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Uniform grid of `n` points over `[0, 1]`; a single point sits at 0.
fn linspace(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    let denom = (n - 1) as f64;
    (0..n).map(|k| k as f64 / denom).collect()
}

/// An immutable, validated game. Cheap to share across threads.
#[derive(Debug, Clone)]
pub struct GameSpec {
    config: GameConfig,
    types: Vec<f64>,
    actions: Vec<f64>,
    n_messages: usize,
    prior: Vec<f64>,
    // utility tables indexed [type][action]
    sender_utility: Vec<f64>,
    receiver_utility: Vec<f64>,
}

pub fn build_game(config: &GameConfig) -> Result<GameSpec> {
    GameSpec::new(config)
}

impl GameSpec {
    pub fn new(config: &GameConfig) -> Result<Self> {
        let n_types = config.n_types;
        let n_messages = config.resolved_messages();
        let n_actions = config.resolved_actions();
        if n_types == 0 || n_messages == 0 || n_actions == 0 {
            return Err(Error::InvalidGame(format!(
                "counts must be positive (n_types={n_types}, n_messages={n_messages}, n_actions={n_actions})"
            )));
        }
        if !config.bias.is_finite() || config.bias < 0.0 {
            return Err(Error::InvalidGame(format!(
                "bias must be a finite non-negative number, got {}",
                config.bias
            )));
        }
        let types = linspace(n_types);
        let actions = linspace(n_actions);
        let prior = config.prior.masses(n_types);

        let mut sender_utility = Vec::with_capacity(n_types * n_actions);
        let mut receiver_utility = Vec::with_capacity(n_types * n_actions);
        for &theta in &types {
            for &a in &actions {
                sender_utility.push(-config.loss.loss(a - theta - config.bias));
                receiver_utility.push(-config.loss.loss(a - theta));
            }
        }

        Ok(GameSpec {
            config: config.clone(),
            types,
            actions,
            n_messages,
            prior,
            sender_utility,
            receiver_utility,
        })
    }

    pub fn baseline(n_types: usize, bias: f64) -> Result<Self> {
        Self::new(&GameConfig::baseline(n_types, bias))
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }

    pub fn n_types(&self) -> usize {
        self.types.len()
    }

    pub fn n_messages(&self) -> usize {
        self.n_messages
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn types(&self) -> &[f64] {
        &self.types
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn bias(&self) -> f64 {
        self.config.bias
    }

    pub fn loss(&self) -> LossKind {
        self.config.loss
    }

    /// Payoff of `role` when the type is `theta` and the receiver plays `action`.
    /// Total on any real inputs; grid lookups go through [`GameSpec::payoff`].
    pub fn utility(&self, role: Role, theta: f64, action: f64) -> f64 {
        match role {
            Role::Sender => -self.config.loss.loss(action - theta - self.config.bias),
            Role::Receiver => -self.config.loss.loss(action - theta),
        }
    }

    /// Table lookup of the payoff at type index `t` and action index `a`.
    #[inline]
    pub fn payoff(&self, role: Role, t: usize, a: usize) -> f64 {
        let idx = t * self.actions.len() + a;
        match role {
            Role::Sender => self.sender_utility[idx],
            Role::Receiver => self.receiver_utility[idx],
        }
    }

    /// Prior entropy in nats.
    pub fn prior_entropy(&self) -> f64 {
        self.prior
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }
}

impl fmt::Display for GameSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} types, {} messages, {} actions, b={}, {} prior, {} loss",
            self.n_types(),
            self.n_messages,
            self.n_actions(),
            self.config.bias,
            self.config.prior.name(),
            self.config.loss.name()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Babbling {
    pub action: usize,
    pub receiver_payoff: f64,
    pub sender_payoff: f64,
}

/// The receiver's ex-ante optimal action and both agents' payoffs when it is
/// played regardless of the message. Ties go to the smaller action.
pub fn babbling_benchmark(spec: &GameSpec) -> Babbling {
    let ex_ante = |role: Role, a: usize| -> f64 {
        spec.prior
            .iter()
            .enumerate()
            .map(|(t, p)| p * spec.payoff(role, t, a))
            .sum()
    };
    let mut best = 0;
    let mut best_value = ex_ante(Role::Receiver, 0);
    for a in 1..spec.n_actions() {
        let v = ex_ante(Role::Receiver, a);
        if v > best_value + TIE_TOL {
            best = a;
            best_value = v;
        }
    }
    Babbling {
        action: best,
        receiver_payoff: best_value,
        sender_payoff: ex_ante(Role::Sender, best),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn baseline_six_type_grids() {
        let g = GameSpec::baseline(6, 0.0).unwrap();
        let expected_types = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        for (t, e) in g.types().iter().zip(expected_types) {
            assert!(close(*t, e, 1e-15));
        }
        assert_eq!(g.n_messages(), 6);
        assert_eq!(g.n_actions(), 11);
        for (k, a) in g.actions().iter().enumerate() {
            assert!(close(*a, k as f64 / 10.0, 1e-15));
        }
    }

    #[test]
    fn baseline_three_type_grids() {
        let g = GameSpec::baseline(3, 0.0).unwrap();
        assert_eq!(g.types(), &[0.0, 0.5, 1.0]);
        assert_eq!(g.actions(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn increasing_prior_is_k_over_21() {
        let cfg = GameConfig {
            prior: PriorKind::Increasing,
            ..GameConfig::default()
        };
        let g = build_game(&cfg).unwrap();
        let total: f64 = (1..=6).map(|k| k as f64).sum();
        for (k, p) in g.prior().iter().enumerate() {
            assert!(close(*p, (k + 1) as f64 / total, 1e-15));
        }
        let dec = build_game(&GameConfig {
            prior: PriorKind::Decreasing,
            ..GameConfig::default()
        })
        .unwrap();
        assert!(close(dec.prior()[0], 6.0 / 21.0, 1e-15));
        assert!(close(dec.prior()[5], 1.0 / 21.0, 1e-15));
    }

    #[test]
    fn rejects_bad_counts_and_bias() {
        let zero = GameConfig {
            n_types: 0,
            ..GameConfig::default()
        };
        assert!(build_game(&zero).is_err());
        let no_actions = GameConfig {
            n_actions: Some(0),
            ..GameConfig::default()
        };
        assert!(build_game(&no_actions).is_err());
        assert!(build_game(&GameConfig::baseline(6, -0.1)).is_err());
        assert!(build_game(&GameConfig::baseline(6, f64::NAN)).is_err());
    }

    #[test]
    fn utility_examples() {
        let g = GameSpec::baseline(6, 0.1).unwrap();
        assert!(close(g.utility(Role::Receiver, 0.4, 0.5), -0.01, 1e-15));
        assert!(close(g.utility(Role::Sender, 0.4, 0.5), 0.0, 1e-15));
        let quartic = build_game(&GameConfig {
            loss: LossKind::Quartic,
            ..GameConfig::default()
        })
        .unwrap();
        assert!(close(
            quartic.utility(Role::Receiver, 0.4, 0.6),
            -0.0016,
            1e-15
        ));
        let abs = build_game(&GameConfig {
            loss: LossKind::Absolute,
            ..GameConfig::default()
        })
        .unwrap();
        assert!(close(abs.utility(Role::Receiver, 0.4, 0.1), -0.3, 1e-15));
    }

    #[test]
    fn payoff_table_matches_value_utility() {
        let g = GameSpec::baseline(6, 0.17).unwrap();
        for (t, &theta) in g.types().iter().enumerate() {
            for (a, &act) in g.actions().iter().enumerate() {
                assert_eq!(
                    g.payoff(Role::Sender, t, a),
                    g.utility(Role::Sender, theta, act)
                );
                assert_eq!(
                    g.payoff(Role::Receiver, t, a),
                    g.utility(Role::Receiver, theta, act)
                );
            }
        }
    }

    #[test]
    fn babbling_baseline_is_seven_sixtieths() {
        for b in [0.0, 0.1, 0.25, 0.45] {
            let g = GameSpec::baseline(6, b).unwrap();
            let bab = babbling_benchmark(&g);
            assert_eq!(bab.action, 5);
            assert!(close(bab.receiver_payoff, -7.0 / 60.0, 1e-12));
            assert!(close(bab.sender_payoff, -7.0 / 60.0 - b * b, 1e-12));
        }
    }

    #[test]
    fn babbling_three_types_is_one_sixth() {
        let g = GameSpec::baseline(3, 0.0).unwrap();
        let bab = babbling_benchmark(&g);
        assert_eq!(bab.action, 2);
        assert!(close(bab.receiver_payoff, -1.0 / 6.0, 1e-12));
    }

    #[test]
    fn babbling_ties_go_to_smaller_action() {
        // Absolute loss with an even number of uniform types is flat between
        // the two middle types.
        let g = build_game(&GameConfig {
            n_types: 2,
            n_actions: Some(5),
            loss: LossKind::Absolute,
            ..GameConfig::default()
        })
        .unwrap();
        assert_eq!(babbling_benchmark(&g).action, 0);
    }

    #[test]
    fn single_point_grids() {
        let g = build_game(&GameConfig {
            n_types: 1,
            n_messages: Some(1),
            n_actions: Some(1),
            ..GameConfig::default()
        })
        .unwrap();
        assert_eq!(g.types(), &[0.0]);
        assert_eq!(g.prior(), &[1.0]);
        assert_eq!(g.prior_entropy(), 0.0);
    }

    #[test]
    fn fingerprint_ignores_bias_but_not_structure() {
        let a = GameConfig::baseline(6, 0.1);
        let b = GameConfig::baseline(6, 0.3);
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = GameConfig {
            loss: LossKind::Quartic,
            ..a.clone()
        };
        assert_ne!(a.fingerprint(), c.fingerprint());
        let explicit = GameConfig {
            n_messages: Some(6),
            n_actions: Some(11),
            ..a.clone()
        };
        assert_eq!(a.fingerprint(), explicit.fingerprint());
    }
}
