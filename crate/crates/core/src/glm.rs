//! Link functions, feature maps and parameter tables of the generalized
//! linear transition and reward models.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::LayeredTopology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkFunction {
    Logistic,
    /// `z` clamped to `[0, 1]` on output. Estimation treats it as unclamped,
    /// which turns the quasi-likelihood equations into least squares.
    Identity,
}

impl LinkFunction {
    pub fn value(self, z: f64) -> f64 {
        match self {
            LinkFunction::Logistic => logistic(z),
            LinkFunction::Identity => z.clamp(0.0, 1.0),
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            LinkFunction::Logistic => {
                let p = logistic(z);
                p * (1.0 - p)
            }
            LinkFunction::Identity => 1.0,
        }
    }

    /// Unclamped mean used by the estimating equations.
    pub(crate) fn mean(self, z: f64) -> f64 {
        match self {
            LinkFunction::Logistic => logistic(z),
            LinkFunction::Identity => z,
        }
    }

    /// Antiderivative of [`mean`](Self::mean); the quasi-likelihood is
    /// `y·z − cumulant(z)`.
    pub(crate) fn cumulant(self, z: f64) -> f64 {
        match self {
            LinkFunction::Logistic => {
                // log(1 + e^z) without overflow
                if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                }
            }
            LinkFunction::Identity => 0.5 * z * z,
        }
    }

    /// Lipschitz constant `k_σ`.
    pub fn lipschitz(self) -> f64 {
        match self {
            LinkFunction::Logistic => 0.25,
            LinkFunction::Identity => 1.0,
        }
    }

    /// `inf σ̇` over scores in `[-radius, radius]`.
    pub fn min_slope(self, radius: f64) -> f64 {
        match self {
            // σ̇ is even and decreasing in |z|
            LinkFunction::Logistic => self.derivative(radius.abs()),
            LinkFunction::Identity => 1.0,
        }
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Identity on the first `dim` side-information coordinates (zero-padded when
/// the side information is shorter), optionally followed by a constant 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMap {
    pub dim: usize,
    pub bias: bool,
}

impl FeatureMap {
    pub fn new(dim: usize, bias: bool) -> Self {
        Self { dim, bias }
    }

    /// The map `x ↦ (1)` that ignores side information.
    pub fn constant() -> Self {
        Self { dim: 0, bias: true }
    }

    pub fn output_dim(&self) -> usize {
        self.dim + usize::from(self.bias)
    }

    pub fn write(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.output_dim());
        for (i, o) in out.iter_mut().take(self.dim).enumerate() {
            *o = x.get(i).copied().unwrap_or(0.0);
        }
        if self.bias {
            out[self.dim] = 1.0;
        }
    }

    pub fn apply(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.output_dim());
        self.write(x, out.as_mut_slice());
        out
    }

    /// Bound on `‖map(x)‖` over `‖x‖ ≤ x_max`.
    pub fn max_norm(&self, x_max: f64) -> f64 {
        let identity = if self.dim > 0 { x_max * x_max } else { 0.0 };
        (identity + if self.bias { 1.0 } else { 0.0 }).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMaps {
    /// Side-information dimension `d`.
    pub side_dim: usize,
    /// `φ`, dimension `n`.
    pub transition: FeatureMap,
    /// `ψ`, dimension `m`.
    pub reward: FeatureMap,
    /// Norm bound on side information.
    pub x_max: f64,
}

impl FeatureMaps {
    pub fn n(&self) -> usize {
        self.transition.output_dim()
    }

    pub fn m(&self) -> usize {
        self.reward.output_dim()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.side_dim {
            return Err(Error::DimensionMismatch {
                expected: self.side_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn phi(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check(x)?;
        Ok(self.transition.apply(x))
    }

    pub fn psi(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check(x)?;
        Ok(self.reward.apply(x))
    }

    /// Same side-information dimension, features that ignore it.
    pub fn context_blind(&self) -> Self {
        Self {
            side_dim: self.side_dim,
            transition: FeatureMap::constant(),
            reward: FeatureMap::constant(),
            x_max: self.x_max,
        }
    }
}

/// Slope floors `(transition, reward)`: the minimum of `σ̇` over the scores
/// reachable with parameters of norm at most `bound`.
pub fn slope_floors(link: LinkFunction, maps: &FeatureMaps, bound: f64) -> (f64, f64) {
    let floor = |map: &FeatureMap| link.min_slope(bound * map.max_norm(maps.x_max));
    (floor(&maps.transition), floor(&maps.reward))
}

fn dot_checked(features: &DVector<f64>, params: &DVector<f64>) -> Result<f64> {
    if features.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            actual: params.len(),
        });
    }
    Ok(features.dot(params))
}

/// `σ(φ(x)ᵀθ)`.
pub fn predict_transition_score(
    x: &[f64],
    theta: &DVector<f64>,
    maps: &FeatureMaps,
    link: LinkFunction,
) -> Result<f64> {
    Ok(link.value(dot_checked(&maps.phi(x)?, theta)?))
}

/// `σ(ψ(x)ᵀλ)`.
pub fn predict_reward_mean(
    x: &[f64],
    lambda: &DVector<f64>,
    maps: &FeatureMaps,
    link: LinkFunction,
) -> Result<f64> {
    Ok(link.value(dot_checked(&maps.psi(x)?, lambda)?))
}

/// `θ(s',s,a)` per triple and `λ(s,a)` per pair, indexed like the topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterTables {
    pub theta: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    pub bound: f64,
}

impl ParameterTables {
    pub fn zeros(topology: &LayeredTopology, n: usize, m: usize, bound: f64) -> Self {
        Self {
            theta: vec![DVector::zeros(n); topology.num_triples()],
            lambda: vec![DVector::zeros(m); topology.num_pairs()],
            bound,
        }
    }

    /// Largest parameter norm; at most `bound` for valid tables.
    pub fn max_norm(&self) -> f64 {
        self.theta
            .iter()
            .chain(&self.lambda)
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    pub fn to_record(&self, topology: &LayeredTopology) -> ParameterRecord {
        let mut transitions = Vec::with_capacity(self.theta.len());
        let mut rewards = Vec::with_capacity(self.lambda.len());
        for pair in 0..topology.num_pairs() {
            let (s, a) = topology.pair(pair);
            let layer = topology.layer_of(s);
            let state = topology.local_index(s);
            rewards.push(RewardParameter {
                layer,
                state,
                action: a,
                values: self.lambda[pair].as_slice().to_vec(),
            });
            for (triple, &next) in topology.row(pair).zip(topology.pair_successors(pair)) {
                transitions.push(TransitionParameter {
                    layer,
                    state,
                    action: a,
                    successor: topology.local_index(next),
                    values: self.theta[triple].as_slice().to_vec(),
                });
            }
        }
        ParameterRecord {
            bound: self.bound,
            transitions,
            rewards,
        }
    }

    pub fn from_record(topology: &LayeredTopology, record: &ParameterRecord) -> Result<Self> {
        let mut theta: Vec<Option<DVector<f64>>> = vec![None; topology.num_triples()];
        let mut lambda: Vec<Option<DVector<f64>>> = vec![None; topology.num_pairs()];
        let locate = |layer: usize, state: usize, action: usize| -> Result<usize> {
            let sizes = topology.layer_sizes();
            if layer >= topology.horizon() || state >= sizes[layer] || action >= topology.num_actions() {
                return Err(Error::Config(format!(
                    "parameter key ({layer}, {state}, {action}) not in topology"
                )));
            }
            Ok(topology.pair_index(topology.layer(layer).start + state, action))
        };
        for p in &record.rewards {
            let pair = locate(p.layer, p.state, p.action)?;
            lambda[pair] = Some(DVector::from_vec(p.values.clone()));
        }
        for p in &record.transitions {
            let pair = locate(p.layer, p.state, p.action)?;
            let next = topology.layer(p.layer + 1).start + p.successor;
            let pos = topology
                .pair_successors(pair)
                .iter()
                .position(|&j| j == next)
                .ok_or_else(|| Error::Config(format!("successor {} not an edge", p.successor)))?;
            theta[topology.row(pair).start + pos] = Some(DVector::from_vec(p.values.clone()));
        }
        let theta = theta
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Config("missing transition parameters".into()))?;
        let lambda = lambda
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Config("missing reward parameters".into()))?;
        Ok(Self {
            theta,
            lambda,
            bound: record.bound,
        })
    }
}

/// Flat, topology-keyed serialized form of [`ParameterTables`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterRecord {
    pub bound: f64,
    pub transitions: Vec<TransitionParameter>,
    pub rewards: Vec<RewardParameter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionParameter {
    pub layer: usize,
    pub state: usize,
    pub action: usize,
    pub successor: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardParameter {
    pub layer: usize,
    pub state: usize,
    pub action: usize,
    pub values: Vec<f64>,
}
