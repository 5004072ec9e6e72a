//! Loop-free layered episodic MDPs.
//!
//! States are numbered globally, layer by layer: layer `l` owns the ids
//! `layer_offset(l)..layer_offset(l + 1)`. Every state outside the last layer
//! is non-terminal and has, for each action, a non-empty successor list inside
//! the next layer. A `(state, action)` pair of a non-terminal state has the
//! dense index `state * num_actions + action`; each entry of its successor
//! list has a "triple" index so that kernels, bands and parameter tables can
//! be stored as flat vectors.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows must sum to one within this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Explicit successor list for one `(state, action)` pair, in layer-local ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub layer: usize,
    pub state: usize,
    pub action: usize,
    pub successors: Vec<usize>,
}

/// Serialized form of a topology. Pairs without an explicit edge entry are
/// connected to every state of the next layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub layer_sizes: Vec<usize>,
    pub num_actions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<EdgeSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologySpec", into = "TopologySpec")]
pub struct LayeredTopology {
    layer_sizes: Vec<usize>,
    num_actions: usize,
    layer_offsets: Vec<usize>,
    layer_of: Vec<usize>,
    successors: Vec<Vec<usize>>,
    row_offsets: Vec<usize>,
}

impl LayeredTopology {
    /// Fully connected consecutive layers.
    pub fn full(layer_sizes: &[usize], num_actions: usize) -> Result<Self> {
        Self::from_spec(TopologySpec {
            layer_sizes: layer_sizes.to_vec(),
            num_actions,
            edges: None,
        })
    }

    pub fn from_spec(spec: TopologySpec) -> Result<Self> {
        let TopologySpec {
            layer_sizes,
            num_actions,
            edges,
        } = spec;
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidTopology(
                "need at least two layers (one transition)".into(),
            ));
        }
        if layer_sizes[0] != 1 {
            return Err(Error::InvalidTopology(format!(
                "first layer must hold exactly the start state, got {} states",
                layer_sizes[0]
            )));
        }
        if let Some(l) = layer_sizes.iter().position(|&n| n == 0) {
            return Err(Error::InvalidTopology(format!("layer {l} is empty")));
        }
        if num_actions == 0 {
            return Err(Error::InvalidTopology("action set is empty".into()));
        }

        let mut layer_offsets = Vec::with_capacity(layer_sizes.len() + 1);
        let mut acc = 0;
        layer_offsets.push(0);
        for &n in &layer_sizes {
            acc += n;
            layer_offsets.push(acc);
        }
        let num_states = acc;
        let mut layer_of = Vec::with_capacity(num_states);
        for (l, &n) in layer_sizes.iter().enumerate() {
            layer_of.extend(std::iter::repeat_n(l, n));
        }

        let horizon = layer_sizes.len() - 1;
        let non_terminal = layer_offsets[horizon];
        let mut successors: Vec<Option<Vec<usize>>> = vec![None; non_terminal * num_actions];
        for edge in edges.into_iter().flatten() {
            if edge.layer >= horizon {
                return Err(Error::InvalidTopology(format!(
                    "edge list given for terminal layer {}",
                    edge.layer
                )));
            }
            if edge.state >= layer_sizes[edge.layer] || edge.action >= num_actions {
                return Err(Error::InvalidTopology(format!(
                    "edge ({}, {}, {}) out of range",
                    edge.layer, edge.state, edge.action
                )));
            }
            let next = edge.layer + 1;
            let mut succ = edge.successors.clone();
            succ.sort_unstable();
            succ.dedup();
            if succ.len() != edge.successors.len() {
                return Err(Error::InvalidTopology("duplicate successor in edge list".into()));
            }
            if succ.is_empty() {
                return Err(Error::InvalidTopology(format!(
                    "pair ({}, {}, {}) has no successor",
                    edge.layer, edge.state, edge.action
                )));
            }
            if let Some(&bad) = succ.iter().find(|&&j| j >= layer_sizes[next]) {
                return Err(Error::InvalidTopology(format!(
                    "successor {bad} does not exist in layer {next}"
                )));
            }
            let state = layer_offsets[edge.layer] + edge.state;
            let slot = &mut successors[state * num_actions + edge.action];
            if slot.is_some() {
                return Err(Error::InvalidTopology("pair listed twice in edge list".into()));
            }
            *slot = Some(succ.into_iter().map(|j| layer_offsets[next] + j).collect());
        }

        let successors: Vec<Vec<usize>> = successors
            .into_iter()
            .enumerate()
            .map(|(pair, succ)| {
                succ.unwrap_or_else(|| {
                    let next = layer_of[pair / num_actions] + 1;
                    (layer_offsets[next]..layer_offsets[next + 1]).collect()
                })
            })
            .collect();
        let mut row_offsets = Vec::with_capacity(successors.len() + 1);
        let mut acc = 0;
        row_offsets.push(0);
        for succ in &successors {
            acc += succ.len();
            row_offsets.push(acc);
        }

        Ok(Self {
            layer_sizes,
            num_actions,
            layer_offsets,
            layer_of,
            successors,
            row_offsets,
        })
    }

    pub fn to_spec(&self) -> TopologySpec {
        let mut edges = Vec::new();
        let mut all_full = true;
        for s in 0..self.num_non_terminal() {
            let l = self.layer_of(s);
            for a in 0..self.num_actions {
                let succ = self.successors(s, a);
                if succ.len() != self.layer_sizes[l + 1] {
                    all_full = false;
                }
                edges.push(EdgeSpec {
                    layer: l,
                    state: self.local_index(s),
                    action: a,
                    successors: succ.iter().map(|&j| self.local_index(j)).collect(),
                });
            }
        }
        TopologySpec {
            layer_sizes: self.layer_sizes.clone(),
            num_actions: self.num_actions,
            edges: if all_full { None } else { Some(edges) },
        }
    }

    /// Number of transitions per episode.
    pub fn horizon(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_states(&self) -> usize {
        self.layer_of.len()
    }

    pub fn num_non_terminal(&self) -> usize {
        self.layer_offsets[self.horizon()]
    }

    pub fn start_state(&self) -> usize {
        0
    }

    pub fn layer_of(&self, state: usize) -> usize {
        self.layer_of[state]
    }

    pub fn layer(&self, l: usize) -> std::ops::Range<usize> {
        self.layer_offsets[l]..self.layer_offsets[l + 1]
    }

    pub fn local_index(&self, state: usize) -> usize {
        state - self.layer_offsets[self.layer_of[state]]
    }

    pub fn num_pairs(&self) -> usize {
        self.successors.len()
    }

    pub fn num_triples(&self) -> usize {
        *self.row_offsets.last().unwrap()
    }

    pub fn pair_index(&self, state: usize, action: usize) -> usize {
        debug_assert!(state < self.num_non_terminal() && action < self.num_actions);
        state * self.num_actions + action
    }

    /// Inverse of [`pair_index`](Self::pair_index).
    pub fn pair(&self, pair: usize) -> (usize, usize) {
        (pair / self.num_actions, pair % self.num_actions)
    }

    pub fn successors(&self, state: usize, action: usize) -> &[usize] {
        &self.successors[self.pair_index(state, action)]
    }

    pub fn pair_successors(&self, pair: usize) -> &[usize] {
        &self.successors[pair]
    }

    /// Triple indices of a pair's row.
    pub fn row(&self, pair: usize) -> std::ops::Range<usize> {
        self.row_offsets[pair]..self.row_offsets[pair + 1]
    }

    pub fn max_successors(&self) -> usize {
        self.successors.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `C = Σ_l |S_l||S_{l+1}|`, the number of possible transitions per action.
    pub fn transition_capacity(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1]).sum()
    }

    /// States reachable from the start state under some policy.
    pub fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.num_states()];
        seen[0] = true;
        for s in 0..self.num_non_terminal() {
            if !seen[s] {
                continue;
            }
            for a in 0..self.num_actions {
                for &j in self.successors(s, a) {
                    seen[j] = true;
                }
            }
        }
        seen
    }

    /// `|A|^{|non-terminal states|}`, or `None` on overflow.
    pub fn policy_count(&self) -> Option<u128> {
        let mut count: u128 = 1;
        for _ in 0..self.num_non_terminal() {
            count = count.checked_mul(self.num_actions as u128)?;
        }
        Some(count)
    }

    /// Every deterministic policy, in lexicographic order.
    pub fn policies(&self) -> impl Iterator<Item = Policy> + '_ {
        let states = self.num_non_terminal();
        let base = self.num_actions;
        let total = self.policy_count().unwrap_or(u128::MAX);
        (0..total).map(move |mut code| {
            let mut actions = vec![0; states];
            for slot in actions.iter_mut() {
                *slot = (code % base as u128) as usize;
                code /= base as u128;
            }
            Policy { actions }
        })
    }
}

impl TryFrom<TopologySpec> for LayeredTopology {
    type Error = Error;

    fn try_from(spec: TopologySpec) -> Result<Self> {
        Self::from_spec(spec)
    }
}

impl From<LayeredTopology> for TopologySpec {
    fn from(t: LayeredTopology) -> Self {
        t.to_spec()
    }
}

fn same_topology(a: &Arc<LayeredTopology>, b: &Arc<LayeredTopology>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(Error::TopologyMismatch)
    }
}

/// Transition probabilities, one row per `(state, action)` pair, stored by
/// triple index.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    topology: Arc<LayeredTopology>,
    probs: Vec<f64>,
}

impl TransitionKernel {
    pub fn new(topology: Arc<LayeredTopology>, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != topology.num_triples() {
            return Err(Error::DimensionMismatch {
                expected: topology.num_triples(),
                actual: probs.len(),
            });
        }
        for pair in 0..topology.num_pairs() {
            let row = &probs[topology.row(pair)];
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::InvalidKernel(format!(
                    "entry {p} of row {pair} outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidKernel(format!("row {pair} sums to {sum}")));
            }
        }
        Ok(Self { topology, probs })
    }

    /// Builds a kernel row by row; `f(pair)` must return the row aligned with
    /// the pair's successor list.
    pub fn from_rows(
        topology: Arc<LayeredTopology>,
        mut f: impl FnMut(usize) -> Vec<f64>,
    ) -> Result<Self> {
        let mut probs = Vec::with_capacity(topology.num_triples());
        for pair in 0..topology.num_pairs() {
            let row = f(pair);
            if row.len() != topology.pair_successors(pair).len() {
                return Err(Error::DimensionMismatch {
                    expected: topology.pair_successors(pair).len(),
                    actual: row.len(),
                });
            }
            probs.extend(row);
        }
        Self::new(topology, probs)
    }

    /// Uniform over every successor list.
    pub fn uniform(topology: Arc<LayeredTopology>) -> Self {
        let probs = (0..topology.num_pairs())
            .flat_map(|pair| {
                let k = topology.pair_successors(pair).len();
                std::iter::repeat_n(1.0 / k as f64, k)
            })
            .collect();
        Self { topology, probs }
    }

    pub fn topology(&self) -> &Arc<LayeredTopology> {
        &self.topology
    }

    pub fn row(&self, state: usize, action: usize) -> &[f64] {
        let pair = self.topology.pair_index(state, action);
        &self.probs[self.topology.row(pair)]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `P(s'|s,a)`, zero when `s'` is not a listed successor.
    pub fn prob(&self, state: usize, action: usize, next: usize) -> f64 {
        self.topology
            .successors(state, action)
            .iter()
            .position(|&j| j == next)
            .map_or(0.0, |i| self.row(state, action)[i])
    }
}

/// Mean reward per `(state, action)` pair, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardFunction {
    topology: Arc<LayeredTopology>,
    means: Vec<f64>,
}

impl RewardFunction {
    pub fn new(topology: Arc<LayeredTopology>, means: Vec<f64>) -> Result<Self> {
        if means.len() != topology.num_pairs() {
            return Err(Error::DimensionMismatch {
                expected: topology.num_pairs(),
                actual: means.len(),
            });
        }
        if let Some(r) = means.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidReward(format!("mean {r} outside [0, 1]")));
        }
        Ok(Self { topology, means })
    }

    pub fn constant(topology: Arc<LayeredTopology>, value: f64) -> Result<Self> {
        let n = topology.num_pairs();
        Self::new(topology, vec![value; n])
    }

    pub fn topology(&self) -> &Arc<LayeredTopology> {
        &self.topology
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.means[self.topology.pair_index(state, action)]
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }
}

/// Deterministic policy: one action per non-terminal state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Policy {
    actions: Vec<usize>,
}

impl Policy {
    pub fn new(topology: &LayeredTopology, actions: Vec<usize>) -> Result<Self> {
        let policy = Self { actions };
        policy.check(topology)?;
        Ok(policy)
    }

    pub fn constant(topology: &LayeredTopology, action: usize) -> Result<Self> {
        Self::new(topology, vec![action; topology.num_non_terminal()])
    }

    pub fn action(&self, state: usize) -> usize {
        self.actions[state]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    fn check(&self, topology: &LayeredTopology) -> Result<()> {
        if self.actions.len() != topology.num_non_terminal() {
            return Err(Error::InvalidPolicy(format!(
                "policy covers {} states, topology has {} non-terminal states",
                self.actions.len(),
                topology.num_non_terminal()
            )));
        }
        if let Some(a) = self.actions.iter().find(|&&a| a >= topology.num_actions()) {
            return Err(Error::InvalidPolicy(format!("action {a} out of range")));
        }
        Ok(())
    }
}

/// One episode: `states` has `L + 1` entries, `actions` and `rewards` `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode: usize,
    pub side_info: Vec<f64>,
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn realized_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Checks layer membership, successor structure and lengths.
    pub fn validate(&self, topology: &LayeredTopology) -> Result<()> {
        let horizon = topology.horizon();
        if self.states.len() != horizon + 1
            || self.actions.len() != horizon
            || self.rewards.len() != horizon
        {
            return Err(Error::InvalidArgument(format!(
                "trajectory lengths ({}, {}, {}) do not match horizon {horizon}",
                self.states.len(),
                self.actions.len(),
                self.rewards.len()
            )));
        }
        for (l, &s) in self.states.iter().enumerate() {
            if s >= topology.num_states() || topology.layer_of(s) != l {
                return Err(Error::TopologyMismatch);
            }
        }
        for l in 0..horizon {
            let (s, a) = (self.states[l], self.actions[l]);
            if a >= topology.num_actions() || !topology.successors(s, a).contains(&self.states[l + 1]) {
                return Err(Error::TopologyMismatch);
            }
        }
        Ok(())
    }
}

/// Value `W(r, π, P)` by backward induction.
pub fn evaluate_policy(
    kernel: &TransitionKernel,
    reward: &RewardFunction,
    policy: &Policy,
) -> Result<f64> {
    Ok(policy_values(kernel, reward, policy)?[0])
}

/// Per-state value-to-go of `policy`; terminal states have value zero.
pub fn policy_values(
    kernel: &TransitionKernel,
    reward: &RewardFunction,
    policy: &Policy,
) -> Result<Vec<f64>> {
    same_topology(kernel.topology(), reward.topology())?;
    let topology = kernel.topology();
    policy.check(topology)?;
    let mut values = vec![0.0; topology.num_states()];
    for s in (0..topology.num_non_terminal()).rev() {
        let a = policy.action(s);
        values[s] = reward.get(s, a) + backup(kernel, &values, s, a);
    }
    Ok(values)
}

fn backup(kernel: &TransitionKernel, values: &[f64], state: usize, action: usize) -> f64 {
    kernel
        .topology()
        .successors(state, action)
        .iter()
        .zip(kernel.row(state, action))
        .map(|(&j, &p)| p * values[j])
        .sum()
}

/// State-visit probabilities `μ(s)` of `policy` under `kernel`.
pub fn occupancy(kernel: &TransitionKernel, policy: &Policy) -> Result<Vec<f64>> {
    let topology = kernel.topology();
    policy.check(topology)?;
    let mut mu = vec![0.0; topology.num_states()];
    mu[topology.start_state()] = 1.0;
    for s in 0..topology.num_non_terminal() {
        if mu[s] == 0.0 {
            continue;
        }
        let a = policy.action(s);
        for (&j, &p) in topology.successors(s, a).iter().zip(kernel.row(s, a)) {
            mu[j] += mu[s] * p;
        }
    }
    Ok(mu)
}

/// Optimal policy and its value; ties go to the lowest action index.
pub fn best_policy(kernel: &TransitionKernel, reward: &RewardFunction) -> Result<(Policy, f64)> {
    same_topology(kernel.topology(), reward.topology())?;
    let topology = kernel.topology();
    let mut values = vec![0.0; topology.num_states()];
    let mut actions = vec![0; topology.num_non_terminal()];
    for s in (0..topology.num_non_terminal()).rev() {
        let mut best = f64::NEG_INFINITY;
        for a in 0..topology.num_actions() {
            let q = reward.get(s, a) + backup(kernel, &values, s, a);
            if q > best {
                best = q;
                actions[s] = a;
            }
        }
        values[s] = best;
    }
    Ok((Policy { actions }, values[0]))
}

/// Samples a path `u ~ (π, P)`. Rewards are left at zero; the environment
/// fills them in.
pub fn sample_trajectory<R: Rng + ?Sized>(
    kernel: &TransitionKernel,
    policy: &Policy,
    rng: &mut R,
) -> Result<Trajectory> {
    let topology = kernel.topology();
    policy.check(topology)?;
    let horizon = topology.horizon();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut s = topology.start_state();
    states.push(s);
    for _ in 0..horizon {
        let a = policy.action(s);
        s = draw_successor(topology.successors(s, a), kernel.row(s, a), rng)?;
        actions.push(a);
        states.push(s);
    }
    Ok(Trajectory {
        episode: 0,
        side_info: Vec::new(),
        states,
        actions,
        rewards: vec![0.0; horizon],
    })
}

fn draw_successor<R: Rng + ?Sized>(succ: &[usize], row: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidKernel(format!("row sums to {total}")));
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (&j, &p) in succ.iter().zip(row) {
        acc += p;
        if u < acc {
            return Ok(j);
        }
    }
    // u landed in the rounding gap at the top of the row
    let last = row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1);
    Ok(succ[last])
}
