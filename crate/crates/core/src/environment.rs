//! Ground-truth simulator.
//!
//! The learner only ever sees an environment through [`EpisodeSampler`];
//! the true models are reachable through [`GroundTruth`] itself, which the
//! harness keeps to compute regret.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{FeatureMap, FeatureMaps, LinkFunction, ParameterRecord, ParameterTables};
use crate::mdp::{sample_trajectory, EdgeSpec, LayeredTopology, Policy, RewardFunction, TopologySpec, TransitionKernel, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideInfoDistribution {
    /// Uniform on the ball of radius `x_max`.
    UniformBall,
    /// Uniform on the cube inscribed in that ball.
    UniformCube,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RewardNoise {
    Bernoulli,
    /// `mean + U(−h, h)` with `h` shrunk so the draw stays in `[0, 1]`.
    Uniform { half_width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Branching {
    /// At most two successors per pair with negated parameters, so logistic
    /// rows sum to one exactly.
    Binary,
    /// Up to `successors` successors per pair, rows renormalized. The
    /// learner's per-successor GLMs are misspecified in this mode.
    Misspecified { successors: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentShape {
    /// Every parameter vector uniform in the norm ball.
    Random,
    /// Rewards `σ(±B·x₁)` for actions 0 and 1, so the better action flips
    /// with the sign of the first side-information coordinate.
    ContextDependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub layer_sizes: Vec<usize>,
    pub num_actions: usize,
    pub side_dim: usize,
    pub x_max: f64,
    pub transition_features: FeatureMap,
    pub reward_features: FeatureMap,
    pub link: LinkFunction,
    /// Norm bound `B` of the true parameters.
    pub param_bound: f64,
    pub shape: EnvironmentShape,
    pub side_info: SideInfoDistribution,
    pub reward_noise: RewardNoise,
    pub branching: Branching,
}

impl EnvironmentSpec {
    /// Five layers of sizes 1-2-3-2-1 (four transitions), two actions.
    pub fn default_fixture() -> Self {
        let side_dim = 2;
        Self {
            layer_sizes: vec![1, 2, 3, 2, 1],
            num_actions: 2,
            side_dim,
            x_max: 1.0,
            transition_features: FeatureMap::new(side_dim, true),
            reward_features: FeatureMap::new(side_dim, true),
            link: LinkFunction::Logistic,
            param_bound: 1.0,
            shape: EnvironmentShape::Random,
            side_info: SideInfoDistribution::UniformBall,
            reward_noise: RewardNoise::Bernoulli,
            branching: Branching::Binary,
        }
    }

    /// The default fixture with rewards whose best action flips with `x₁`.
    pub fn context_dependent_fixture() -> Self {
        Self {
            shape: EnvironmentShape::ContextDependent,
            ..Self::default_fixture()
        }
    }

    /// One draw from the configured side-information distribution.
    pub fn sample_side_info<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.side_dim;
        let r = self.x_max;
        match self.side_info {
            SideInfoDistribution::UniformBall => uniform_in_ball(rng, d, r).as_slice().to_vec(),
            SideInfoDistribution::UniformCube => {
                let half = if d == 0 { 0.0 } else { r / (d as f64).sqrt() };
                (0..d).map(|_| if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 }).collect()
            }
        }
    }

    pub fn feature_maps(&self) -> FeatureMaps {
        FeatureMaps {
            side_dim: self.side_dim,
            transition: self.transition_features,
            reward: self.reward_features,
            x_max: self.x_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config("need at least one transition".into()));
        }
        if !(self.x_max >= 0.0) || !(self.param_bound >= 0.0) {
            return Err(Error::Config("x_max and param_bound must be non-negative".into()));
        }
        if self.transition_features.output_dim() == 0 || self.reward_features.output_dim() == 0 {
            return Err(Error::Config("feature maps must have positive dimension".into()));
        }
        if let Branching::Misspecified { successors } = self.branching {
            if successors < 2 {
                return Err(Error::Config("misspecified branching needs at least 2 successors".into()));
            }
        }
        if self.shape == EnvironmentShape::ContextDependent
            && (self.side_dim == 0 || self.reward_features.dim == 0 || self.num_actions < 2)
        {
            return Err(Error::Config(
                "context-dependent shape needs side information in the reward features and two actions".into(),
            ));
        }
        if let RewardNoise::Uniform { half_width } = self.reward_noise {
            if !(half_width >= 0.0) {
                return Err(Error::Config("noise half-width must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Sampling-only view of an environment, the learner's sole channel to it.
pub trait EpisodeSampler {
    fn topology(&self) -> &Arc<LayeredTopology>;

    /// Runs `policy` for one episode under side information `x`, including
    /// per-step reward draws.
    fn rollout(&self, x: &[f64], policy: &Policy, episode: usize, rng: &mut dyn RngCore) -> Result<Trajectory>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    spec: EnvironmentSpec,
    topology: Arc<LayeredTopology>,
    params: ParameterTables,
    maps: FeatureMaps,
}

fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> DVector<f64> {
    if dim == 0 || radius == 0.0 {
        return DVector::zeros(dim);
    }
    let mut v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = v.norm();
    if norm == 0.0 {
        return DVector::zeros(dim);
    }
    let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
    v *= r / norm;
    v
}

pub fn generate_environment<R: Rng + ?Sized>(spec: &EnvironmentSpec, rng: &mut R) -> Result<GroundTruth> {
    spec.validate()?;
    let max_succ = match spec.branching {
        Branching::Binary => 2,
        Branching::Misspecified { successors } => successors,
    };
    let horizon = spec.layer_sizes.len() - 1;
    let mut edges = Vec::new();
    for l in 0..horizon {
        let next = spec.layer_sizes[l + 1];
        for state in 0..spec.layer_sizes[l] {
            for action in 0..spec.num_actions {
                let k = next.min(max_succ);
                let mut successors = rand::seq::index::sample(rng, next, k).into_vec();
                successors.sort_unstable();
                edges.push(EdgeSpec { layer: l, state, action, successors });
            }
        }
    }
    let topology = Arc::new(LayeredTopology::from_spec(TopologySpec {
        layer_sizes: spec.layer_sizes.clone(),
        num_actions: spec.num_actions,
        edges: Some(edges),
    })?);

    let maps = spec.feature_maps();
    let bound = spec.param_bound;
    let mut params = ParameterTables::zeros(&topology, maps.n(), maps.m(), bound);
    for pair in 0..topology.num_pairs() {
        let row = topology.row(pair);
        match (spec.branching, row.len()) {
            (_, 1) => {}
            (Branching::Binary, _) => {
                let theta = uniform_in_ball(rng, maps.n(), bound);
                params.theta[row.start + 1] = -&theta;
                params.theta[row.start] = theta;
            }
            (Branching::Misspecified { .. }, _) => {
                for triple in row {
                    params.theta[triple] = uniform_in_ball(rng, maps.n(), bound);
                }
            }
        }
        let (_, action) = topology.pair(pair);
        params.lambda[pair] = match (spec.shape, action) {
            (EnvironmentShape::ContextDependent, 0 | 1) => {
                let mut v = DVector::zeros(maps.m());
                v[0] = if action == 0 { bound } else { -bound };
                v
            }
            _ => uniform_in_ball(rng, maps.m(), bound),
        };
    }
    Ok(GroundTruth {
        spec: spec.clone(),
        topology,
        params,
        maps,
    })
}

impl GroundTruth {
    pub fn from_parts(spec: EnvironmentSpec, topology: LayeredTopology, params: ParameterTables) -> Result<Self> {
        spec.validate()?;
        if topology.layer_sizes() != spec.layer_sizes.as_slice() || topology.num_actions() != spec.num_actions {
            return Err(Error::TopologyMismatch);
        }
        let maps = spec.feature_maps();
        if params.theta.len() != topology.num_triples()
            || params.lambda.len() != topology.num_pairs()
            || params.theta.iter().any(|v| v.len() != maps.n())
            || params.lambda.iter().any(|v| v.len() != maps.m())
        {
            return Err(Error::Config("parameter tables do not fit the topology".into()));
        }
        Ok(Self {
            spec,
            topology: Arc::new(topology),
            params,
            maps,
        })
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterTables {
        &self.params
    }

    pub fn maps(&self) -> &FeatureMaps {
        &self.maps
    }

    pub fn link(&self) -> LinkFunction {
        self.spec.link
    }

    pub fn sample_side_info<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.spec.sample_side_info(rng)
    }

    fn check_side_info(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.side_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.side_dim,
                actual: x.len(),
            });
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > self.spec.x_max * (1.0 + 1e-12) + 1e-15 {
            return Err(Error::InvalidArgument(format!(
                "side information norm {norm} exceeds {}",
                self.spec.x_max
            )));
        }
        Ok(())
    }

    /// `P_x` and `r_x`.
    pub fn true_models(&self, x: &[f64]) -> Result<(TransitionKernel, RewardFunction)> {
        self.check_side_info(x)?;
        let link = self.spec.link;
        let phi = self.maps.phi(x)?;
        let psi = self.maps.psi(x)?;
        let t = &self.topology;
        let mut probs = Vec::with_capacity(t.num_triples());
        for pair in 0..t.num_pairs() {
            let row = t.row(pair);
            if row.len() == 1 {
                probs.push(1.0);
                continue;
            }
            let start = probs.len();
            probs.extend(row.map(|triple| link.value(phi.dot(&self.params.theta[triple]))));
            if let Branching::Misspecified { .. } = self.spec.branching {
                let entries = &mut probs[start..];
                let total: f64 = entries.iter().sum();
                for p in entries.iter_mut() {
                    *p /= total;
                }
            }
        }
        let means = self
            .params
            .lambda
            .iter()
            .map(|lambda| link.value(psi.dot(lambda)))
            .collect();
        Ok((
            TransitionKernel::new(t.clone(), probs)?,
            RewardFunction::new(t.clone(), means)?,
        ))
    }

    pub fn to_dump(&self, seed: Option<u64>) -> FixtureDump {
        FixtureDump {
            seed,
            spec: self.spec.clone(),
            topology: self.topology.to_spec(),
            parameters: self.params.to_record(&self.topology),
        }
    }

    pub fn from_dump(dump: &FixtureDump) -> Result<Self> {
        let topology = LayeredTopology::from_spec(dump.topology.clone())?;
        let params = ParameterTables::from_record(&topology, &dump.parameters)?;
        Self::from_parts(dump.spec.clone(), topology, params)
    }
}

impl EpisodeSampler for GroundTruth {
    fn topology(&self) -> &Arc<LayeredTopology> {
        &self.topology
    }

    fn rollout(&self, x: &[f64], policy: &Policy, episode: usize, rng: &mut dyn RngCore) -> Result<Trajectory> {
        let (kernel, reward) = self.true_models(x)?;
        let mut traj = sample_trajectory(&kernel, policy, rng)?;
        for l in 0..traj.actions.len() {
            let mean = reward.get(traj.states[l], traj.actions[l]);
            traj.rewards[l] = sample_step_reward(mean, self.spec.reward_noise, rng)?;
        }
        traj.episode = episode;
        traj.side_info = x.to_vec();
        Ok(traj)
    }
}

/// Draws one realized reward with the given mean.
pub fn sample_step_reward<R: Rng + ?Sized>(mean: f64, noise: RewardNoise, rng: &mut R) -> Result<f64> {
    if !(0.0..=1.0).contains(&mean) {
        return Err(Error::InvalidArgument(format!("reward mean {mean} outside [0, 1]")));
    }
    Ok(match noise {
        RewardNoise::Bernoulli => {
            if rng.random::<f64>() < mean {
                1.0
            } else {
                0.0
            }
        }
        RewardNoise::Uniform { half_width } => {
            let h = half_width.min(mean).min(1.0 - mean);
            if h > 0.0 {
                (mean + rng.random_range(-h..h)).clamp(0.0, 1.0)
            } else {
                mean
            }
        }
    })
}

/// Everything needed to rebuild a [`GroundTruth`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureDump {
    pub seed: Option<u64>,
    pub spec: EnvironmentSpec,
    pub topology: TopologySpec,
    pub parameters: ParameterRecord,
}
