//! Exact enumeration of monotone partitional equilibria.
//!
//! A candidate is a partition of the type grid into contiguous blocks. The
//! sender sends one distinct message per block (block `i` uses message `i`)
//! and the receiver answers each message with an action that is optimal for
//! the block's posterior. The candidate is an equilibrium when some selection
//! of optimal block actions makes every type weakly prefer its own block's
//! action to every other block's. Unused messages are answered with the first
//! block's action, which can never create a profitable deviation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec::par_map;
use crate::game::{GameSpec, Role, TIE_TOL};
use crate::learner::Policy;

/// Contiguous blocks of type indices, stored by the first index of each block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Partition {
    n: usize,
    starts: Vec<usize>,
}

impl Partition {
    /// From the indices at which a new block begins after the first one.
    /// Cuts must be strictly increasing and lie in `1..n`.
    pub fn from_cuts(n: usize, cuts: &[usize]) -> Option<Self> {
        if n == 0 {
            return None;
        }
        let mut prev = 0;
        for &c in cuts {
            if c <= prev || c >= n {
                return None;
            }
            prev = c;
        }
        let mut starts = Vec::with_capacity(cuts.len() + 1);
        starts.push(0);
        starts.extend_from_slice(cuts);
        Some(Partition { n, starts })
    }

    pub fn pooling(n: usize) -> Self {
        Partition { n, starts: vec![0] }
    }

    pub fn separating(n: usize) -> Self {
        Partition {
            n,
            starts: (0..n).collect(),
        }
    }

    pub fn n_types(&self) -> usize {
        self.n
    }

    pub fn n_blocks(&self) -> usize {
        self.starts.len()
    }

    /// Interior cut positions; the lexicographic key of the partition.
    pub fn cuts(&self) -> &[usize] {
        &self.starts[1..]
    }

    /// Half-open index range of block `i`.
    pub fn block(&self, i: usize) -> std::ops::Range<usize> {
        let end = self.starts.get(i + 1).copied().unwrap_or(self.n);
        self.starts[i]..end
    }

    pub fn blocks(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        (0..self.n_blocks()).map(|i| self.block(i))
    }

    /// Block index of every type.
    pub fn assignment(&self) -> Vec<usize> {
        let mut out = vec![0; self.n];
        for (i, r) in self.blocks().enumerate() {
            for t in r {
                out[t] = i;
            }
        }
        out
    }

    /// Last type index of every block, e.g. `2|5` for {0,1,2},{3,4,5}.
    pub fn boundaries(&self) -> Vec<usize> {
        self.blocks().map(|r| r.end - 1).collect()
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .blocks()
            .map(|r| {
                let v: Vec<String> = r.map(|t| t.to_string()).collect();
                format!("{{{}}}", v.join(","))
            })
            .collect();
        write!(f, "{}", parts.join(""))
    }
}

/// All `2^(n−1)` partitions of `n` types into contiguous blocks, ordered
/// lexicographically by their cut positions.
pub fn enumerate_partitions(n: usize) -> Vec<Partition> {
    if n == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(1 << (n - 1));
    let mut cuts = Vec::with_capacity(n);
    fn recurse(n: usize, next: usize, cuts: &mut Vec<usize>, out: &mut Vec<Partition>) {
        out.push(Partition::from_cuts(n, cuts).expect("cuts are increasing and in range"));
        for c in next..n {
            cuts.push(c);
            recurse(n, c + 1, cuts, out);
            cuts.pop();
        }
    }
    recurse(n, 1, &mut cuts, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionalEquilibrium {
    pub partition: Partition,
    /// Receiver action index for each block.
    pub block_actions: Vec<usize>,
    pub u_sender: f64,
    pub u_receiver: f64,
    pub mutual_info: f64,
}

impl PartitionalEquilibrium {
    /// Policies implementing the equilibrium: block `i` sends message `i`;
    /// unused messages are answered with the first block's action.
    pub fn policies(&self, spec: &GameSpec) -> Result<(Policy, Policy)> {
        let sender = Policy::deterministic(&self.partition.assignment(), spec.n_messages())?;
        let mut responses = vec![self.block_actions[0]; spec.n_messages()];
        responses[..self.block_actions.len()].copy_from_slice(&self.block_actions);
        let receiver = Policy::deterministic(&responses, spec.n_actions())?;
        Ok((sender, receiver))
    }
}

/// Per block, the actions maximizing the receiver's expected utility under
/// the block posterior (ties within `TIE_TOL` kept).
pub fn block_optimal_actions(partition: &Partition, spec: &GameSpec) -> Vec<Vec<usize>> {
    partition
        .blocks()
        .map(|block| {
            let mass: f64 = block.clone().map(|t| spec.prior()[t]).sum();
            let values: Vec<f64> = (0..spec.n_actions())
                .map(|a| {
                    block
                        .clone()
                        .map(|t| spec.prior()[t] / mass * spec.payoff(Role::Receiver, t, a))
                        .sum()
                })
                .collect();
            let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (0..values.len())
                .filter(|&a| values[a] >= best - TIE_TOL)
                .collect()
        })
        .collect()
}

fn sender_ic(partition: &Partition, actions: &[usize], spec: &GameSpec) -> bool {
    partition.blocks().enumerate().all(|(i, block)| {
        block.into_iter().all(|t| {
            let own = spec.payoff(Role::Sender, t, actions[i]);
            actions
                .iter()
                .enumerate()
                .all(|(j, &a)| j == i || own >= spec.payoff(Role::Sender, t, a) - TIE_TOL)
        })
    })
}

/// Calls `visit` on every element of the product of `sets`, in lexicographic
/// order, until it returns `true`. Returns the accepted selection.
fn first_in_product(
    sets: &[Vec<usize>],
    mut visit: impl FnMut(&[usize]) -> bool,
) -> Option<Vec<usize>> {
    if sets.iter().any(Vec::is_empty) {
        return None;
    }
    let mut idx = vec![0usize; sets.len()];
    let mut sel: Vec<usize> = sets.iter().map(|s| s[0]).collect();
    loop {
        if visit(&sel) {
            return Some(sel);
        }
        // odometer, last position fastest
        let mut k = sets.len();
        loop {
            if k == 0 {
                return None;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < sets[k].len() {
                sel[k] = sets[k][idx[k]];
                break;
            }
            idx[k] = 0;
            sel[k] = sets[k][0];
        }
    }
}

/// The equilibrium supported by `partition`, if any: the lexicographically
/// first selection of block-optimal actions satisfying sender IC. `None` also
/// when the partition has more blocks than there are messages.
pub fn check_partition_equilibrium(
    partition: &Partition,
    spec: &GameSpec,
) -> Option<PartitionalEquilibrium> {
    if partition.n_types() != spec.n_types() || partition.n_blocks() > spec.n_messages() {
        return None;
    }
    let optimal = block_optimal_actions(partition, spec);
    let actions = first_in_product(&optimal, |sel| sender_ic(partition, sel, spec))?;

    let mut u_sender = 0.0;
    let mut u_receiver = 0.0;
    let mut block_entropy = 0.0;
    for (i, block) in partition.blocks().enumerate() {
        let mut mass = 0.0;
        for t in block {
            let p = spec.prior()[t];
            mass += p;
            u_sender += p * spec.payoff(Role::Sender, t, actions[i]);
            u_receiver += p * spec.payoff(Role::Receiver, t, actions[i]);
        }
        if mass > 0.0 {
            block_entropy -= mass * mass.ln();
        }
    }
    let h = spec.prior_entropy();
    let mutual_info = if !(h > 0.0) {
        f64::NAN
    } else if partition.n_blocks() == 1 {
        0.0
    } else {
        block_entropy / h
    };
    Some(PartitionalEquilibrium {
        partition: partition.clone(),
        block_actions: actions,
        u_sender,
        u_receiver,
        mutual_info,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationReport {
    /// Sorted by descending mutual information, then partition order.
    pub equilibria: Vec<PartitionalEquilibrium>,
    /// Partitions skipped because they need more messages than exist.
    pub infeasible: Vec<Partition>,
}

pub fn enumerate_with_report(spec: &GameSpec, workers: Option<usize>) -> EnumerationReport {
    let partitions = enumerate_partitions(spec.n_types());
    let results = par_map(&partitions, workers, |p| {
        check_partition_equilibrium(p, spec)
    });
    let infeasible = partitions
        .iter()
        .filter(|p| p.n_blocks() > spec.n_messages())
        .cloned()
        .collect();
    let mut equilibria: Vec<PartitionalEquilibrium> = results.into_iter().flatten().collect();
    // stable: equal MI keeps lexicographic partition order
    equilibria.sort_by(|a, b| b.mutual_info.total_cmp(&a.mutual_info));
    EnumerationReport {
        equilibria,
        infeasible,
    }
}

/// Every monotone partitional equilibrium, most informative first.
pub fn enumerate_equilibria(spec: &GameSpec) -> Vec<PartitionalEquilibrium> {
    enumerate_with_report(spec, None).equilibria
}

/// The receiver-preferred equilibrium; payoff ties go to the more informative
/// one, then to the earlier partition.
pub fn optimal_equilibrium(spec: &GameSpec) -> PartitionalEquilibrium {
    select_optimal(&enumerate_equilibria(spec))
        .expect("the pooling partition is always an equilibrium")
}

pub fn select_optimal(equilibria: &[PartitionalEquilibrium]) -> Option<PartitionalEquilibrium> {
    let mut best: Option<&PartitionalEquilibrium> = None;
    for e in equilibria {
        best = match best {
            None => Some(e),
            Some(b) => {
                let better = e.u_receiver > b.u_receiver + TIE_TOL
                    || ((e.u_receiver - b.u_receiver).abs() <= TIE_TOL
                        && (e.mutual_info > b.mutual_info
                            || (e.mutual_info == b.mutual_info
                                && e.partition.cuts() < b.partition.cuts())));
                if better {
                    Some(e)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.cloned()
}

/// The single-block equilibrium.
pub fn babbling_equilibrium(spec: &GameSpec) -> PartitionalEquilibrium {
    check_partition_equilibrium(&Partition::pooling(spec.n_types()), spec)
        .expect("pooling satisfies incentive compatibility trivially")
}
