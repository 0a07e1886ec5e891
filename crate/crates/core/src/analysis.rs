//! Metrics of a (sender, receiver) policy pair: ex-ante payoffs, normalized
//! mutual information between type and message, best-response sets and the
//! resulting ε-Nash deviation measures, plus the message relabeling and modal
//! policies used to summarize many runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameSpec, Role, TIE_TOL};
use crate::learner::Policy;
use crate::matrix::Matrix;

/// A run is ε-Nash when neither agent puts more than this much mass on
/// non-best responses in any state.
pub const EPS_NASH: f64 = 0.01;

/// Messages whose marginal probability is at or below this mass are treated
/// as off-path. Learned softmax policies never put exactly zero mass on a
/// message, but abandoned messages decay to masses many orders of magnitude
/// below anything the receiver still learns from.
pub const ON_PATH_MIN_MASS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub u_sender: f64,
    pub u_receiver: f64,
    /// NaN (serialized as null) when the prior has zero entropy.
    #[serde(with = "nan_as_null")]
    pub mutual_info: f64,
    pub max_subopt_sender: f64,
    pub max_subopt_receiver: f64,
    pub gain_sender: f64,
    pub gain_receiver: f64,
    pub is_eps_nash: bool,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

fn check_shapes(pi_s: &Policy, pi_r: Option<&Policy>, spec: &GameSpec) -> Result<()> {
    if pi_s.n_states() != spec.n_types() || pi_s.n_actions() != spec.n_messages() {
        return Err(Error::Shape(format!(
            "sender policy is {}x{}, game needs {}x{}",
            pi_s.n_states(),
            pi_s.n_actions(),
            spec.n_types(),
            spec.n_messages()
        )));
    }
    if let Some(pi_r) = pi_r {
        check_receiver_shape(pi_r, spec)?;
    }
    Ok(())
}

fn check_receiver_shape(pi_r: &Policy, spec: &GameSpec) -> Result<()> {
    if pi_r.n_states() != spec.n_messages() || pi_r.n_actions() != spec.n_actions() {
        return Err(Error::Shape(format!(
            "receiver policy is {}x{}, game needs {}x{}",
            pi_r.n_states(),
            pi_r.n_actions(),
            spec.n_messages(),
            spec.n_actions()
        )));
    }
    Ok(())
}

/// `(U_S, U_R)`: both agents' ex-ante expected payoffs.
pub fn expected_payoffs(pi_s: &Policy, pi_r: &Policy, spec: &GameSpec) -> Result<(f64, f64)> {
    check_shapes(pi_s, Some(pi_r), spec)?;
    let mut u_s = 0.0;
    let mut u_r = 0.0;
    for t in 0..spec.n_types() {
        let p = spec.prior()[t];
        let mut inner_s = 0.0;
        let mut inner_r = 0.0;
        for m in 0..spec.n_messages() {
            let pm = pi_s.prob(t, m);
            if pm == 0.0 {
                continue;
            }
            let mut es = 0.0;
            let mut er = 0.0;
            for (a, &pa) in pi_r.row(m).iter().enumerate() {
                es += pa * spec.payoff(Role::Sender, t, a);
                er += pa * spec.payoff(Role::Receiver, t, a);
            }
            inner_s += pm * es;
            inner_r += pm * er;
        }
        u_s += p * inner_s;
        u_r += p * inner_r;
    }
    Ok((u_s, u_r))
}

/// Marginal probability of each message under the prior.
pub fn message_marginals(pi_s: &Policy, spec: &GameSpec) -> Vec<f64> {
    (0..spec.n_messages())
        .map(|m| {
            (0..spec.n_types())
                .map(|t| spec.prior()[t] * pi_s.prob(t, m))
                .sum()
        })
        .collect()
}

/// Mutual information between type and message divided by the prior entropy:
/// 1 when the message reveals the type, 0 when they are independent.
pub fn normalized_mutual_information(pi_s: &Policy, spec: &GameSpec) -> Result<f64> {
    check_shapes(pi_s, None, spec)?;
    let h = spec.prior_entropy();
    if !(h > 0.0) {
        return Err(Error::DegeneratePrior);
    }
    let marginals = message_marginals(pi_s, spec);
    let mut info = 0.0;
    for t in 0..spec.n_types() {
        let p = spec.prior()[t];
        for (m, &mu) in marginals.iter().enumerate() {
            let pm = pi_s.prob(t, m);
            if pm > 0.0 {
                info += pm * p * (pm / mu).ln();
            }
        }
    }
    Ok(info / h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverBestResponses {
    /// Posterior over types, indexed (message, type). Rows of off-path
    /// messages are zero.
    pub posterior: Matrix,
    pub marginals: Vec<f64>,
    pub on_path: Vec<bool>,
    /// Optimal actions per message; the full action set when off-path.
    pub optimal: Vec<Vec<usize>>,
}

/// Indices within `TIE_TOL` of the maximum of `values`.
fn argmax_set(values: &[f64]) -> Vec<usize> {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= best - TIE_TOL)
        .map(|(i, _)| i)
        .collect()
}

pub fn receiver_best_responses(pi_s: &Policy, spec: &GameSpec) -> Result<ReceiverBestResponses> {
    check_shapes(pi_s, None, spec)?;
    let n_t = spec.n_types();
    let n_a = spec.n_actions();
    let marginals = message_marginals(pi_s, spec);
    let mut posterior = Matrix::zeros(spec.n_messages(), n_t);
    let mut on_path = Vec::with_capacity(spec.n_messages());
    let mut optimal = Vec::with_capacity(spec.n_messages());
    let mut values = vec![0.0; n_a];
    for (m, &mu) in marginals.iter().enumerate() {
        if mu <= ON_PATH_MIN_MASS {
            on_path.push(false);
            optimal.push((0..n_a).collect());
            continue;
        }
        for t in 0..n_t {
            posterior.set(m, t, spec.prior()[t] * pi_s.prob(t, m) / mu);
        }
        for (a, v) in values.iter_mut().enumerate() {
            *v = (0..n_t)
                .map(|t| posterior.get(m, t) * spec.payoff(Role::Receiver, t, a))
                .sum();
        }
        on_path.push(true);
        optimal.push(argmax_set(&values));
    }
    Ok(ReceiverBestResponses {
        posterior,
        marginals,
        on_path,
        optimal,
    })
}

/// Sender's expected payoff of each (type, message) against `pi_r`.
fn sender_message_values(pi_r: &Policy, spec: &GameSpec) -> Matrix {
    let mut v = Matrix::zeros(spec.n_types(), spec.n_messages());
    for t in 0..spec.n_types() {
        for m in 0..spec.n_messages() {
            let e = pi_r
                .row(m)
                .iter()
                .enumerate()
                .map(|(a, &pa)| pa * spec.payoff(Role::Sender, t, a))
                .sum();
            v.set(t, m, e);
        }
    }
    v
}

/// Per type, the messages that maximize the sender's expected payoff.
pub fn sender_best_responses(pi_r: &Policy, spec: &GameSpec) -> Result<Vec<Vec<usize>>> {
    check_receiver_shape(pi_r, spec)?;
    let v = sender_message_values(pi_r, spec);
    Ok((0..spec.n_types()).map(|t| argmax_set(v.row(t))).collect())
}

fn mass_on(row: &[f64], set: &[usize]) -> f64 {
    set.iter().map(|&i| row[i]).sum()
}

pub fn nash_deviation_metrics(pi_s: &Policy, pi_r: &Policy, spec: &GameSpec) -> Result<Metrics> {
    check_shapes(pi_s, Some(pi_r), spec)?;
    let (u_sender, u_receiver) = expected_payoffs(pi_s, pi_r, spec)?;
    let mutual_info = match normalized_mutual_information(pi_s, spec) {
        Ok(mi) => mi,
        Err(Error::DegeneratePrior) => f64::NAN,
        Err(e) => return Err(e),
    };

    // sender: every type is a state
    let values = sender_message_values(pi_r, spec);
    let mut max_subopt_sender: f64 = 0.0;
    let mut gain_sender = 0.0;
    for t in 0..spec.n_types() {
        let row = values.row(t);
        let best_set = argmax_set(row);
        max_subopt_sender = max_subopt_sender.max(1.0 - mass_on(pi_s.row(t), &best_set));
        let best = row[best_set[0]];
        let current: f64 = pi_s.row(t).iter().zip(row).map(|(p, v)| p * v).sum();
        // a mixture never beats its best component; clamp rounding noise
        gain_sender += spec.prior()[t] * (best - current).max(0.0);
    }

    // receiver: on-path messages only
    let br = receiver_best_responses(pi_s, spec)?;
    let mut max_subopt_receiver: f64 = 0.0;
    let mut gain_receiver = 0.0;
    let mut weighted = vec![0.0; spec.n_actions()];
    for m in 0..spec.n_messages() {
        if br.on_path[m] {
            max_subopt_receiver =
                max_subopt_receiver.max(1.0 - mass_on(pi_r.row(m), &br.optimal[m]));
        }
        // gains weight every message by its joint mass, so off-path ones
        // contribute (almost) nothing either way
        for (a, w) in weighted.iter_mut().enumerate() {
            *w = (0..spec.n_types())
                .map(|t| spec.prior()[t] * pi_s.prob(t, m) * spec.payoff(Role::Receiver, t, a))
                .sum();
        }
        let best = weighted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let current: f64 = pi_r.row(m).iter().zip(&weighted).map(|(p, w)| p * w).sum();
        gain_receiver += (best - current).max(0.0);
    }

    let max_subopt_sender = max_subopt_sender.max(0.0);
    let max_subopt_receiver = max_subopt_receiver.max(0.0);
    Ok(Metrics {
        u_sender,
        u_receiver,
        mutual_info,
        max_subopt_sender,
        max_subopt_receiver,
        gain_sender,
        gain_receiver,
        is_eps_nash: max_subopt_sender <= EPS_NASH && max_subopt_receiver <= EPS_NASH,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Canonical {
    pub sender: Policy,
    pub receiver: Policy,
    /// `order[k]` is the original index of the message relabeled `k`.
    pub order: Vec<usize>,
}

/// Relabels messages so that smaller labels carry smaller posterior mean
/// types. Off-path messages go last, in their original order; equal means
/// keep the original order too.
pub fn canonicalize_messages(pi_s: &Policy, pi_r: &Policy, spec: &GameSpec) -> Result<Canonical> {
    check_shapes(pi_s, Some(pi_r), spec)?;
    let br = receiver_best_responses(pi_s, spec)?;
    let mean = |m: usize| -> f64 {
        (0..spec.n_types())
            .map(|t| br.posterior.get(m, t) * spec.types()[t])
            .sum()
    };
    let mut on: Vec<(f64, usize)> = (0..spec.n_messages())
        .filter(|&m| br.on_path[m])
        .map(|m| (mean(m), m))
        .collect();
    on.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = on
        .into_iter()
        .map(|(_, m)| m)
        .chain((0..spec.n_messages()).filter(|&m| !br.on_path[m]))
        .collect();

    let mut s = Matrix::zeros(spec.n_types(), spec.n_messages());
    for t in 0..spec.n_types() {
        for (k, &m) in order.iter().enumerate() {
            s.set(t, k, pi_s.prob(t, m));
        }
    }
    let mut r = Matrix::zeros(spec.n_messages(), spec.n_actions());
    for (k, &m) in order.iter().enumerate() {
        r.row_mut(k).copy_from_slice(pi_r.row(m));
    }
    Ok(Canonical {
        sender: Policy::from_matrix(s)?,
        receiver: Policy::from_matrix(r)?,
        order,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalPolicy {
    /// Most frequent greedy action per state.
    pub actions: Vec<usize>,
    /// Share of policies that agree with `actions` in each state.
    pub frequencies: Vec<f64>,
    /// Number of policies agreeing with `actions` in each state.
    pub support: Vec<usize>,
    pub n_policies: usize,
}

impl ModalPolicy {
    pub fn to_policy(&self, n_actions: usize) -> Result<Policy> {
        Policy::deterministic(&self.actions, n_actions)
    }
}

/// Per state, the most common greedy choice across `policies`; greedy ties
/// and ties between modes both go to the smaller index.
pub fn modal_policy(policies: &[Policy]) -> Result<ModalPolicy> {
    let first = policies
        .first()
        .ok_or(Error::Empty("modal_policy needs at least one policy"))?;
    let (n_s, n_a) = (first.n_states(), first.n_actions());
    if policies
        .iter()
        .any(|p| p.n_states() != n_s || p.n_actions() != n_a)
    {
        return Err(Error::Shape("policies have different shapes".into()));
    }
    let mut counts = vec![vec![0usize; n_a]; n_s];
    for p in policies {
        for (s, a) in p.modal_actions().into_iter().enumerate() {
            counts[s][a] += 1;
        }
    }
    let mut actions = Vec::with_capacity(n_s);
    let mut support = Vec::with_capacity(n_s);
    for row in &counts {
        let mut best = 0;
        for (a, &c) in row.iter().enumerate() {
            if c > row[best] {
                best = a;
            }
        }
        actions.push(best);
        support.push(row[best]);
    }
    let n = policies.len();
    Ok(ModalPolicy {
        frequencies: support.iter().map(|&c| c as f64 / n as f64).collect(),
        actions,
        support,
        n_policies: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{babbling_benchmark, GameConfig, LossKind, PriorKind};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity(n: usize) -> Policy {
        Policy::deterministic(&(0..n).collect::<Vec<_>>(), n).unwrap()
    }

    fn babbling_pair(spec: &GameSpec, message: usize) -> (Policy, Policy) {
        let a = babbling_benchmark(spec).action;
        (
            Policy::deterministic(&vec![message; spec.n_types()], spec.n_messages()).unwrap(),
            Policy::deterministic(&vec![a; spec.n_messages()], spec.n_actions()).unwrap(),
        )
    }

    /// Two blocks {0, .2, .4} -> m0, {.6, .8, 1} -> m1; receiver plays 0.2 / 0.8.
    /// Off-path messages answer with the first block's action.
    fn two_block() -> (Policy, Policy) {
        let s = Policy::deterministic(&[0, 0, 0, 1, 1, 1], 6).unwrap();
        let mut r = vec![2; 6];
        r[1] = 8;
        (s, Policy::deterministic(&r, 11).unwrap())
    }

    fn revealing_receiver(spec: &GameSpec) -> Policy {
        // message k -> action equal to type k
        let acts: Vec<usize> = (0..spec.n_types()).map(|k| 2 * k).collect();
        Policy::deterministic(&acts, spec.n_actions()).unwrap()
    }

    #[test]
    fn payoffs_examples() {
        let spec = GameSpec::baseline(6, 0.0).unwrap();
        let (u_s, u_r) = expected_payoffs(&identity(6), &revealing_receiver(&spec), &spec).unwrap();
        assert_eq!((u_s, u_r), (0.0, 0.0));

        for b in [0.0, 0.1, 0.33] {
            let spec = GameSpec::baseline(6, b).unwrap();
            let (s, r) = babbling_pair(&spec, 2);
            let (u_s, u_r) = expected_payoffs(&s, &r, &spec).unwrap();
            assert!((u_r + 7.0 / 60.0).abs() < 1e-12);
            assert!((u_s + 7.0 / 60.0 + b * b).abs() < 1e-12);
        }

        let (s, r) = two_block();
        let (_, u_r) = expected_payoffs(&s, &r, &spec).unwrap();
        // brute-force triple sum
        let mut oracle = 0.0;
        for t in 0..6 {
            let a = if t < 3 { 0.2 } else { 0.8 };
            oracle -= (a - t as f64 / 5.0f64).powi(2) / 6.0;
        }
        assert!((u_r - oracle).abs() < 1e-15);
        assert!((u_r + 2.0 / 75.0).abs() < 1e-12);
    }

    #[test]
    fn mutual_information_examples() {
        let spec = GameSpec::baseline(6, 0.0).unwrap();
        assert!((normalized_mutual_information(&identity(6), &spec).unwrap() - 1.0).abs() < 1e-12);
        let (s, _) = babbling_pair(&spec, 4);
        assert!(normalized_mutual_information(&s, &spec).unwrap().abs() < 1e-12);
        let pairs = Policy::deterministic(&[0, 0, 1, 1, 2, 2], 6).unwrap();
        let expected = 3f64.ln() / 6f64.ln();
        assert!((normalized_mutual_information(&pairs, &spec).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.6131).abs() < 1e-4);
    }

    #[test]
    fn mutual_information_undefined_for_degenerate_prior() {
        let spec = GameSpec::new(&GameConfig {
            n_types: 1,
            n_messages: Some(2),
            n_actions: Some(3),
            ..GameConfig::default()
        })
        .unwrap();
        let s = Policy::deterministic(&[0], 2).unwrap();
        assert!(matches!(
            normalized_mutual_information(&s, &spec),
            Err(Error::DegeneratePrior)
        ));
        let r = Policy::deterministic(&[0, 0], 3).unwrap();
        assert!(nash_deviation_metrics(&s, &r, &spec)
            .unwrap()
            .mutual_info
            .is_nan());
    }

    #[test]
    fn receiver_best_response_examples() {
        let spec = GameSpec::baseline(6, 0.0).unwrap();
        let br = receiver_best_responses(&identity(6), &spec).unwrap();
        for m in 0..6 {
            assert_eq!(br.optimal[m], vec![2 * m]);
        }
        let (s, _) = babbling_pair(&spec, 3);
        let br = receiver_best_responses(&s, &spec).unwrap();
        assert_eq!(br.optimal[3], vec![5]);
        assert!(!br.on_path[0]);
        assert_eq!(br.optimal[0].len(), 11);

        let (s, _) = two_block();
        let br = receiver_best_responses(&s, &spec).unwrap();
        // brute force over the 11 actions
        for (m, block) in [(0usize, 0..3usize), (1, 3..6)] {
            let values: Vec<f64> = (0..11)
                .map(|a| {
                    block
                        .clone()
                        .map(|t| -(a as f64 / 10.0 - t as f64 / 5.0).powi(2))
                        .sum::<f64>()
                })
                .collect();
            let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let set: Vec<usize> = (0..11).filter(|&a| values[a] > best - 1e-12).collect();
            assert_eq!(br.optimal[m], set);
        }
        assert_eq!(br.optimal[0], vec![2]);
        assert_eq!(br.optimal[1], vec![8]);
    }

    #[test]
    fn sender_best_response_examples() {
        let spec = GameSpec::baseline(6, 0.0).unwrap();
        let r = Policy::deterministic(&[5; 6], 11).unwrap();
        for set in sender_best_responses(&r, &spec).unwrap() {
            assert_eq!(set, (0..6).collect::<Vec<_>>());
        }
        // message 0 induces 0.2, every other message 0.8; type 0.4 is indifferent at b = 0.1
        let r = Policy::deterministic(&[2, 8, 8, 8, 8, 8], 11).unwrap();
        let spec = GameSpec::baseline(6, 0.05).unwrap();
        assert_eq!(sender_best_responses(&r, &spec).unwrap()[2], vec![0]);
        let spec = GameSpec::baseline(6, 0.1).unwrap();
        assert_eq!(
            sender_best_responses(&r, &spec).unwrap()[2],
            (0..6).collect::<Vec<_>>()
        );
        let spec = GameSpec::baseline(6, 0.15).unwrap();
        assert_eq!(
            sender_best_responses(&r, &spec).unwrap()[2],
            (1..6).collect::<Vec<_>>()
        );
    }

    #[test]
    fn deviation_metrics_examples() {
        let spec = GameSpec::baseline(6, 0.2).unwrap();
        let (s, r) = babbling_pair(&spec, 0);
        let m = nash_deviation_metrics(&s, &r, &spec).unwrap();
        assert_eq!(m.max_subopt_sender, 0.0);
        assert_eq!(m.max_subopt_receiver, 0.0);
        assert!(m.gain_sender.abs() < 1e-12 && m.gain_receiver.abs() < 1e-12);
        assert!(m.is_eps_nash);

        let spec = GameSpec::baseline(6, 0.05).unwrap();
        let (s, r) = two_block();
        let m = nash_deviation_metrics(&s, &r, &spec).unwrap();
        assert_eq!(m.max_subopt_sender, 0.0);
        assert_eq!(m.max_subopt_receiver, 0.0);
        assert!(m.gain_sender.abs() < 1e-12 && m.gain_receiver.abs() < 1e-12);

        // type 0 mixes 0.95 on its optimal message with 0.05 on the other block's
        let mut rows = s.matrix().to_rows();
        rows[0][0] = 0.95;
        rows[0][1] = 0.05;
        let mixed = Policy::from_rows(rows).unwrap();
        let m = nash_deviation_metrics(&mixed, &r, &spec).unwrap();
        assert!((m.max_subopt_sender - 0.05).abs() < 1e-12);
        assert!(!m.is_eps_nash);
    }

    #[test]
    fn canonicalization_examples() {
        let spec = GameSpec::baseline(6, 0.0).unwrap();
        let c = canonicalize_messages(&identity(6), &revealing_receiver(&spec), &spec).unwrap();
        assert_eq!(c.order, (0..6).collect::<Vec<_>>());

        let rev = Policy::deterministic(&[5, 4, 3, 2, 1, 0], 6).unwrap();
        let r = Policy::deterministic(&[10, 8, 6, 4, 2, 0], 11).unwrap();
        let c = canonicalize_messages(&rev, &r, &spec).unwrap();
        assert_eq!(c.order, vec![5, 4, 3, 2, 1, 0]);
        assert_eq!(c.sender, identity(6));
        assert_eq!(c.receiver, revealing_receiver(&spec));

        let (s, r) = babbling_pair(&spec, 3);
        let c = canonicalize_messages(&s, &r, &spec).unwrap();
        assert_eq!(c.order, vec![3, 0, 1, 2, 4, 5]);
    }

    #[test]
    fn modal_policy_examples() {
        let a = Policy::deterministic(&[0, 1, 2], 3).unwrap();
        let b = Policy::deterministic(&[1, 1, 0], 3).unwrap();
        let m = modal_policy(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(m.actions, vec![0, 1, 2]);
        assert_eq!(m.frequencies, vec![1.0; 3]);

        let m = modal_policy(&[a.clone(), a.clone(), a.clone(), b.clone()]).unwrap();
        assert_eq!(m.actions, vec![0, 1, 2]);
        assert_eq!(m.frequencies, vec![0.75, 1.0, 0.75]);

        let m = modal_policy(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(m.actions, vec![0, 1, 0]);
        assert!(modal_policy(&[]).is_err());
    }

    /// Exhaustive pure-deviation Nash check for small games.
    fn brute_force_nash(s: &Policy, r: &Policy, spec: &GameSpec) -> bool {
        let (us, ur) = expected_payoffs(s, r, spec).unwrap();
        let ns = spec.n_types();
        let nm = spec.n_messages();
        let na = spec.n_actions();
        // sender: any pure type-contingent deviation
        for code in 0..nm.pow(ns as u32) {
            let mut c = code;
            let dev: Vec<usize> = (0..ns)
                .map(|_| {
                    let x = c % nm;
                    c /= nm;
                    x
                })
                .collect();
            let d = Policy::deterministic(&dev, nm).unwrap();
            if expected_payoffs(&d, r, spec).unwrap().0 > us + 1e-12 {
                return false;
            }
        }
        for code in 0..na.pow(nm as u32) {
            let mut c = code;
            let dev: Vec<usize> = (0..nm)
                .map(|_| {
                    let x = c % na;
                    c /= na;
                    x
                })
                .collect();
            let d = Policy::deterministic(&dev, na).unwrap();
            if expected_payoffs(s, &d, spec).unwrap().1 > ur + 1e-12 {
                return false;
            }
        }
        true
    }

    #[test]
    fn zero_subopt_iff_brute_force_nash() {
        // every pure profile of the 3-type game at a few biases
        for b in [0.0, 0.1, 0.25, 0.4] {
            let spec = GameSpec::baseline(3, b).unwrap();
            for sc in 0..27usize {
                let s: Vec<usize> = (0..3).map(|i| (sc / 3usize.pow(i)) % 3).collect();
                let s = Policy::deterministic(&s, 3).unwrap();
                for rc in 0..125usize {
                    let r: Vec<usize> = (0..3).map(|i| (rc / 5usize.pow(i)) % 5).collect();
                    let r = Policy::deterministic(&r, 5).unwrap();
                    let m = nash_deviation_metrics(&s, &r, &spec).unwrap();
                    let zero = m.max_subopt_sender == 0.0 && m.max_subopt_receiver == 0.0;
                    assert_eq!(zero, brute_force_nash(&s, &r, &spec), "b={b} s={sc} r={rc}");
                }
            }
        }
    }

    fn random_policy(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sparse: bool) -> Policy {
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut total = 0.0;
            for c in 0..cols {
                let v: f64 = if sparse && rng.gen_bool(0.5) {
                    0.0
                } else {
                    rng.gen()
                };
                m.set(r, c, v);
                total += v;
            }
            if total == 0.0 {
                m.set(r, 0, 1.0);
                total = 1.0;
            }
            for c in 0..cols {
                m.set(r, c, m.get(r, c) / total);
            }
        }
        Policy::from_matrix(m).unwrap()
    }

    fn permute(s: &Policy, r: &Policy, perm: &[usize]) -> (Policy, Policy) {
        let mut sm = Matrix::zeros(s.n_states(), s.n_actions());
        for t in 0..s.n_states() {
            for (k, &m) in perm.iter().enumerate() {
                sm.set(t, k, s.prob(t, m));
            }
        }
        let mut rm = Matrix::zeros(r.n_states(), r.n_actions());
        for (k, &m) in perm.iter().enumerate() {
            rm.row_mut(k).copy_from_slice(r.row(m));
        }
        (
            Policy::from_matrix(sm).unwrap(),
            Policy::from_matrix(rm).unwrap(),
        )
    }

    #[test]
    fn mutual_information_permutation_invariant() {
        let spec = GameSpec::baseline(6, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let s = random_policy(&mut rng, 6, 6, true);
        let r = random_policy(&mut rng, 6, 11, false);
        let base = normalized_mutual_information(&s, &spec).unwrap();
        let mut perm: Vec<usize> = (0..6).collect();
        for _ in 0..100 {
            perm.shuffle(&mut rng);
            let (ps, _) = permute(&s, &r, &perm);
            assert!((normalized_mutual_information(&ps, &spec).unwrap() - base).abs() < 1e-12);
        }
    }

    fn game_variants() -> impl Strategy<Value = GameSpec> {
        (
            2usize..5,
            0.0f64..0.5,
            prop_oneof![
                Just(PriorKind::Uniform),
                Just(PriorKind::Increasing),
                Just(PriorKind::Decreasing)
            ],
            prop_oneof![
                Just(LossKind::Quadratic),
                Just(LossKind::Quartic),
                Just(LossKind::Absolute)
            ],
        )
            .prop_map(|(n, bias, prior, loss)| {
                GameSpec::new(&GameConfig {
                    n_types: n,
                    bias,
                    prior,
                    loss,
                    ..GameConfig::default()
                })
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn gains_nonnegative_and_mi_bounded(spec in game_variants(), seed in any::<u64>(), sparse in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_policy(&mut rng, spec.n_types(), spec.n_messages(), sparse);
            let r = random_policy(&mut rng, spec.n_messages(), spec.n_actions(), sparse);
            let m = nash_deviation_metrics(&s, &r, &spec).unwrap();
            prop_assert!(m.gain_sender >= 0.0);
            prop_assert!(m.gain_receiver >= 0.0);
            prop_assert!(m.mutual_info >= -1e-12 && m.mutual_info <= 1.0 + 1e-12);
            prop_assert!((0.0..=1.0).contains(&m.max_subopt_sender));
            prop_assert!((0.0..=1.0).contains(&m.max_subopt_receiver));
        }

        #[test]
        fn payoffs_invariant_under_canonical_relabeling(spec in game_variants(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_policy(&mut rng, spec.n_types(), spec.n_messages(), true);
            let r = random_policy(&mut rng, spec.n_messages(), spec.n_actions(), false);
            let c = canonicalize_messages(&s, &r, &spec).unwrap();
            let (a_s, a_r) = expected_payoffs(&s, &r, &spec).unwrap();
            let (b_s, b_r) = expected_payoffs(&c.sender, &c.receiver, &spec).unwrap();
            prop_assert!((a_s - b_s).abs() < 1e-12 && (a_r - b_r).abs() < 1e-12);
            let mut sorted = c.order.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..spec.n_messages()).collect::<Vec<_>>());
        }
    }
}
