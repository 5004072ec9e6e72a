//! Extended dynamic programming over confidence bands.
//!
//! Backward induction where every `(s, a)` also picks the transition row
//! inside its band that maximizes the expected value of the next layer. For a
//! box-constrained simplex that row is found greedily: start every successor
//! at its lower bound and pour the remaining mass into successors in order of
//! decreasing value, each up to its upper bound.

use std::sync::Arc;

use crate::confidence::ConfidenceBands;
use crate::error::{Error, Result};
use crate::mdp::{LayeredTopology, Policy, RewardFunction, TransitionKernel};

const FEASIBILITY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimisticPlan {
    pub policy: Policy,
    pub kernel: TransitionKernel,
    pub reward: RewardFunction,
    /// Optimistic value-to-go `w(s)` per state.
    pub values: Vec<f64>,
    /// Rows whose band was infeasible and got the normalized centers instead.
    pub infeasible_rows: usize,
    /// Elementary steps spent, for complexity checks.
    pub operations: usize,
}

impl OptimisticPlan {
    pub fn root_value(&self) -> f64 {
        self.values[0]
    }

    /// One line per state: `layer,state,action,value,row` with the row as
    /// `successor:probability` pairs separated by spaces.
    pub fn write_dump(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        let t = self.kernel.topology();
        writeln!(out, "layer,state,action,value,row")?;
        for s in 0..t.num_non_terminal() {
            let a = self.policy.action(s);
            let row: Vec<String> = t
                .successors(s, a)
                .iter()
                .zip(self.kernel.row(s, a))
                .map(|(&j, p)| format!("{}:{}", t.local_index(j), p))
                .collect();
            writeln!(
                out,
                "{},{},{},{},{}",
                t.layer_of(s),
                t.local_index(s),
                a,
                self.values[s],
                row.join(" ")
            )?;
        }
        Ok(())
    }
}

fn check_band(lo: &[f64], hi: &[f64]) -> Result<()> {
    let lower_sum: f64 = lo.iter().sum();
    let upper_sum: f64 = hi.iter().sum();
    if lower_sum > 1.0 + FEASIBILITY_SLACK || upper_sum < 1.0 - FEASIBILITY_SLACK {
        return Err(Error::InfeasibleBand { lower_sum, upper_sum });
    }
    Ok(())
}

/// Greedy fill of a feasible band in the given priority order.
fn fill_in_order(lo: &[f64], hi: &[f64], order: &[usize], row: &mut Vec<f64>) {
    row.clear();
    row.extend_from_slice(lo);
    let mut remaining = 1.0 - lo.iter().sum::<f64>();
    for &i in order {
        if remaining <= 0.0 {
            break;
        }
        let add = (hi[i] - lo[i]).min(remaining);
        row[i] += add;
        remaining -= add;
    }
    if remaining > 0.0 {
        // upper bounds fell short of 1 within the feasibility slack
        row[order[0]] += remaining;
    } else if remaining < 0.0 {
        // lower bounds exceeded 1 within the slack; trim the least valuable
        for &i in order.iter().rev() {
            let take = row[i].min(-remaining);
            row[i] -= take;
            remaining += take;
            if remaining >= 0.0 {
                break;
            }
        }
    }
}

/// The row maximizing `Σ P(s')·w(s')` subject to `lo ≤ P ≤ hi`, `Σ P = 1`.
/// Ties in `w` go to the lower successor position.
pub fn optimistic_transition_row(lo: &[f64], hi: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    if lo.len() != hi.len() || lo.len() != w.len() || lo.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: lo.len(),
            actual: if hi.len() != lo.len() { hi.len() } else { w.len() },
        });
    }
    for (i, (&l, &h)) in lo.iter().zip(hi).enumerate() {
        if !(0.0..=1.0).contains(&l) || !(0.0..=1.0).contains(&h) || l > h {
            return Err(Error::InvalidArgument(format!(
                "band entry {i} is [{l}, {h}]"
            )));
        }
    }
    check_band(lo, hi)?;
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]));
    let mut row = Vec::with_capacity(lo.len());
    fill_in_order(lo, hi, &order, &mut row);
    Ok(row)
}

/// Centers rescaled to sum to one; uniform when they are all zero.
fn substitute_row(centers: &[f64]) -> Vec<f64> {
    let total: f64 = centers.iter().sum();
    if total > 0.0 {
        centers.iter().map(|c| c / total).collect()
    } else {
        vec![1.0 / centers.len() as f64; centers.len()]
    }
}

fn check_topology(topology: &Arc<LayeredTopology>, bands: &ConfidenceBands) -> Result<()> {
    if Arc::ptr_eq(topology, &bands.topology) || **topology == *bands.topology {
        Ok(())
    } else {
        Err(Error::TopologyMismatch)
    }
}

/// Jointly optimistic policy, kernel and reward over the bands.
pub fn optimistic_plan(topology: &Arc<LayeredTopology>, bands: &ConfidenceBands) -> Result<OptimisticPlan> {
    check_topology(topology, bands)?;
    let t = topology;
    let num_states = t.num_states();
    let mut values = vec![0.0f64; num_states];
    let mut actions = vec![0; t.num_non_terminal()];
    let mut probs = vec![0.0; t.num_triples()];
    let reward: Vec<f64> = bands.reward_hi.iter().map(|&r| r.min(1.0)).collect();
    let mut infeasible_rows = 0;
    let mut operations = 0;

    // rank[j]: position of state j in the next layer sorted by decreasing w
    let mut rank = vec![0usize; num_states];
    let mut order = Vec::new();
    let mut row = Vec::new();
    for l in (0..t.horizon()).rev() {
        let next = t.layer(l + 1);
        let mut sorted: Vec<usize> = next.clone().collect();
        sorted.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        for (r, &j) in sorted.iter().enumerate() {
            rank[j] = r;
        }
        operations += sorted.len();

        for s in t.layer(l) {
            let mut best = f64::NEG_INFINITY;
            for a in 0..t.num_actions() {
                let pair = t.pair_index(s, a);
                let range = t.row(pair);
                let succ = t.pair_successors(pair);
                let lo = &bands.transition_lo[range.clone()];
                let hi = &bands.transition_hi[range.clone()];
                if check_band(lo, hi).is_ok() {
                    order.clear();
                    order.extend(0..succ.len());
                    order.sort_by_key(|&i| rank[succ[i]]);
                    fill_in_order(lo, hi, &order, &mut row);
                } else {
                    infeasible_rows += 1;
                    row = substitute_row(&bands.transition_center[range.clone()]);
                }
                operations += 2 * succ.len();
                let q = reward[pair]
                    + succ.iter().zip(&row).map(|(&j, &p)| p * values[j]).sum::<f64>();
                probs[range].copy_from_slice(&row);
                if q > best {
                    best = q;
                    actions[s] = a;
                }
            }
            values[s] = best;
        }
    }

    let policy = Policy::new(t, actions)?;
    let kernel = TransitionKernel::new(t.clone(), probs)?;
    let reward = RewardFunction::new(t.clone(), reward)?;
    Ok(OptimisticPlan {
        policy,
        kernel,
        reward,
        values,
        infeasible_rows,
        operations,
    })
}

/// Best `Σ P·w` over the vertices of `{lo ≤ P ≤ hi, Σ P = 1}`. A vertex has
/// at most one coordinate strictly inside its box.
fn best_vertex_value(lo: &[f64], hi: &[f64], w: &[f64]) -> Option<f64> {
    let k = lo.len();
    let mut best: Option<f64> = None;
    for free in 0..k {
        for mask in 0u32..(1 << (k - 1)) {
            let mut sum = 0.0;
            let mut value = 0.0;
            let mut bit = 0;
            for i in 0..k {
                if i == free {
                    continue;
                }
                let p = if mask >> bit & 1 == 1 { hi[i] } else { lo[i] };
                bit += 1;
                sum += p;
                value += p * w[i];
            }
            let p_free = 1.0 - sum;
            if p_free >= lo[free] - FEASIBILITY_SLACK && p_free <= hi[free] + FEASIBILITY_SLACK {
                let v = value + p_free * w[free];
                best = Some(best.map_or(v, |b: f64| b.max(v)));
            }
        }
    }
    best
}

/// Exact optimistic root value by enumerating every policy and every vertex
/// of each row's band polytope. Intended as a test oracle.
pub fn brute_force_optimistic(topology: &Arc<LayeredTopology>, bands: &ConfidenceBands) -> Result<f64> {
    check_topology(topology, bands)?;
    let t = topology;
    match t.policy_count() {
        Some(c) if c <= 256 => {}
        _ => return Err(Error::InstanceTooLarge("more than 256 policies".into())),
    }
    if t.max_successors() > 6 {
        return Err(Error::InstanceTooLarge("more than 6 successors in a row".into()));
    }
    let mut best = f64::NEG_INFINITY;
    for policy in t.policies() {
        let mut values = vec![0.0; t.num_states()];
        for s in (0..t.num_non_terminal()).rev() {
            let pair = t.pair_index(s, policy.action(s));
            let range = t.row(pair);
            let succ = t.pair_successors(pair);
            let w: Vec<f64> = succ.iter().map(|&j| values[j]).collect();
            let lo = &bands.transition_lo[range.clone()];
            let hi = &bands.transition_hi[range.clone()];
            let next = if check_band(lo, hi).is_ok() {
                best_vertex_value(lo, hi, &w).ok_or(Error::InfeasibleBand {
                    lower_sum: lo.iter().sum(),
                    upper_sum: hi.iter().sum(),
                })?
            } else {
                let row = substitute_row(&bands.transition_center[range]);
                row.iter().zip(&w).map(|(p, v)| p * v).sum()
            };
            values[s] = bands.reward_hi[pair].min(1.0) + next;
        }
        best = best.max(values[0]);
    }
    Ok(best)
}
