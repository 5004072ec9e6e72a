//! The optimistic learning loop and baseline learners.

use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::confidence::{build_bands, ConfidenceBands, WidthSchedule};
use crate::environment::EpisodeSampler;
use crate::error::{Error, Result};
use crate::estimation::{ModelEstimates, RefreshSchedule, SolverSettings, StatsCheckpoint, SufficientStats};
use crate::glm::{FeatureMaps, LinkFunction};
use crate::mdp::{LayeredTopology, Policy, Trajectory};
use crate::planner::{optimistic_plan, OptimisticPlan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfuConfig {
    pub delta: f64,
    pub rho_scale: f64,
    /// Radius of the parameter ball estimates are projected onto.
    pub param_bound: f64,
    pub solver: SolverSettings,
    pub refresh: RefreshSchedule,
}

impl Default for OfuConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            rho_scale: 1.0,
            param_bound: 10.0,
            solver: SolverSettings::default(),
            refresh: RefreshSchedule::EveryEpisode,
        }
    }
}

/// Result of planning one episode.
#[derive(Debug, Clone)]
pub struct EpisodePlan {
    pub policy: Policy,
    pub plan: OptimisticPlan,
    pub bands: ConfidenceBands,
}

/// What a learner reports after one episode.
#[derive(Debug, Clone)]
pub struct EpisodeReport {
    pub trajectory: Trajectory,
    pub policy: Policy,
    /// `v̂_t`, for learners that plan optimistically.
    pub optimistic_value: Option<f64>,
    pub infeasible_rows: usize,
    pub solver_iterations: usize,
    pub solver_failures: usize,
}

pub trait Learner: Send {
    fn name(&self) -> &str;

    /// Picks a policy for side information `x`, runs it in `env` and learns
    /// from the outcome.
    fn learn_episode(&mut self, x: &[f64], env: &dyn EpisodeSampler, rng: &mut dyn RngCore) -> Result<EpisodeReport>;
}

/// Optimism-in-the-face-of-uncertainty learner over GLM confidence bands.
#[derive(Debug, Clone)]
pub struct OfuLearner {
    name: String,
    link: LinkFunction,
    config: OfuConfig,
    widths: WidthSchedule,
    stats: SufficientStats,
    estimates: ModelEstimates,
    episode: usize,
}

impl OfuLearner {
    pub fn new(topology: Arc<LayeredTopology>, maps: FeatureMaps, link: LinkFunction, config: OfuConfig) -> Result<Self> {
        let widths = WidthSchedule::new(link, &maps, config.param_bound, config.delta, config.rho_scale)?;
        Ok(Self {
            name: "ofu".into(),
            link,
            config,
            widths,
            estimates: ModelEstimates::new(&topology, &maps, config.param_bound),
            stats: SufficientStats::new(topology, maps),
            episode: 1,
        })
    }

    /// The same loop with constant features `φ(x) = ψ(x) = (1)`.
    pub fn context_blind(
        topology: Arc<LayeredTopology>,
        maps: &FeatureMaps,
        link: LinkFunction,
        config: OfuConfig,
    ) -> Result<Self> {
        let mut learner = Self::new(topology, maps.context_blind(), link, config)?;
        learner.name = "context_blind".into();
        Ok(learner)
    }

    /// Index `t` of the next episode.
    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn stats(&self) -> &SufficientStats {
        &self.stats
    }

    pub fn estimates(&self) -> &ModelEstimates {
        &self.estimates
    }

    pub fn widths(&self) -> &WidthSchedule {
        &self.widths
    }

    pub fn config(&self) -> &OfuConfig {
        &self.config
    }

    pub fn plan_episode(&self, x: &[f64]) -> Result<EpisodePlan> {
        let bands = build_bands(x, &self.estimates, &self.stats, self.link, &self.widths, self.episode)?;
        let plan = optimistic_plan(self.stats.topology(), &bands)?;
        Ok(EpisodePlan {
            policy: plan.policy.clone(),
            plan,
            bands,
        })
    }

    /// Plans, runs the episode, records it and re-solves the estimates.
    pub fn run_episode(
        &mut self,
        x: &[f64],
        env: &dyn EpisodeSampler,
        rng: &mut dyn RngCore,
    ) -> Result<(EpisodePlan, EpisodeReport)> {
        let planned = self.plan_episode(x)?;
        let trajectory = env.rollout(x, &planned.policy, self.episode, rng)?;
        self.stats.record_episode(&trajectory)?;
        let refresh = self
            .estimates
            .refresh(&self.stats, self.link, &self.config.solver, self.config.refresh);
        self.episode += 1;
        let report = EpisodeReport {
            trajectory,
            policy: planned.policy.clone(),
            optimistic_value: Some(planned.plan.root_value()),
            infeasible_rows: planned.plan.infeasible_rows,
            solver_iterations: refresh.iterations,
            solver_failures: refresh.failures,
        };
        Ok((planned, report))
    }

    pub fn checkpoint(&self) -> LearnerCheckpoint {
        LearnerCheckpoint {
            name: self.name.clone(),
            link: self.link,
            config: self.config,
            episode: self.episode,
            stats: self.stats.to_checkpoint(),
            estimates: self.estimates.clone(),
        }
    }

    pub fn from_checkpoint(checkpoint: LearnerCheckpoint) -> Result<Self> {
        let stats = SufficientStats::from_checkpoint(checkpoint.stats)?;
        let widths = WidthSchedule::new(
            checkpoint.link,
            stats.maps(),
            checkpoint.config.param_bound,
            checkpoint.config.delta,
            checkpoint.config.rho_scale,
        )?;
        if checkpoint.episode != stats.episodes() + 1 {
            return Err(Error::Config(format!(
                "checkpoint episode {} does not follow {} recorded episodes",
                checkpoint.episode,
                stats.episodes()
            )));
        }
        Ok(Self {
            name: checkpoint.name,
            link: checkpoint.link,
            config: checkpoint.config,
            widths,
            stats,
            estimates: checkpoint.estimates,
            episode: checkpoint.episode,
        })
    }
}

impl Learner for OfuLearner {
    fn name(&self) -> &str {
        &self.name
    }

    fn learn_episode(&mut self, x: &[f64], env: &dyn EpisodeSampler, rng: &mut dyn RngCore) -> Result<EpisodeReport> {
        self.run_episode(x, env, rng).map(|(_, report)| report)
    }
}

/// Serialized learner state: statistics, estimates and episode counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerCheckpoint {
    pub name: String,
    pub link: LinkFunction,
    pub config: OfuConfig,
    pub episode: usize,
    pub stats: StatsCheckpoint,
    pub estimates: ModelEstimates,
}

/// Uniformly random policy every episode.
#[derive(Debug, Clone)]
pub struct RandomLearner {
    topology: Arc<LayeredTopology>,
    episode: usize,
}

impl RandomLearner {
    pub fn new(topology: Arc<LayeredTopology>) -> Self {
        Self { topology, episode: 1 }
    }
}

impl Learner for RandomLearner {
    fn name(&self) -> &str {
        "random"
    }

    fn learn_episode(&mut self, x: &[f64], env: &dyn EpisodeSampler, rng: &mut dyn RngCore) -> Result<EpisodeReport> {
        let actions = (0..self.topology.num_non_terminal())
            .map(|_| rng.random_range(0..self.topology.num_actions()))
            .collect();
        let policy = Policy::new(&self.topology, actions)?;
        let trajectory = env.rollout(x, &policy, self.episode, rng)?;
        self.episode += 1;
        Ok(EpisodeReport {
            trajectory,
            policy,
            optimistic_value: None,
            infeasible_rows: 0,
            solver_iterations: 0,
            solver_failures: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{generate_environment, EnvironmentSpec, GroundTruth};
    use crate::glm::{FeatureMap, ParameterTables};
    use crate::mdp::{best_policy, evaluate_policy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture(seed: u64) -> GroundTruth {
        generate_environment(&EnvironmentSpec::default_fixture(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn learner(env: &GroundTruth, config: OfuConfig) -> OfuLearner {
        OfuLearner::new(env.topology().clone(), *env.maps(), env.link(), config).unwrap()
    }

    #[test]
    fn first_episode_is_fully_optimistic() {
        let env = fixture(1);
        let ofu = learner(&env, OfuConfig::default());
        let planned = ofu.plan_episode(&[0.2, -0.3]).unwrap();
        assert!(planned.bands.reward_center.iter().all(|&c| c == 0.5));
        // theoretical widths at t = 1 saturate every reward band
        assert_eq!(planned.plan.root_value(), env.topology().horizon() as f64);
    }

    #[test]
    fn zero_width_at_truth_recovers_optimal_policy() {
        let env = fixture(2);
        let x = [0.4, 0.1];
        let (kernel, reward) = env.true_models(&x).unwrap();
        // plant the true parameters as estimates and shut the widths off
        let config = OfuConfig { rho_scale: 0.0, ..Default::default() };
        let mut ofu = learner(&env, config);
        ofu.estimates.params = ParameterTables { bound: 10.0, ..env.params().clone() };
        let planned = ofu.plan_episode(&x).unwrap();
        let (policy, value) = best_policy(&kernel, &reward).unwrap();
        assert_eq!(planned.policy, policy);
        assert!((planned.plan.root_value() - value).abs() < 1e-12);
        assert_eq!(planned.plan.infeasible_rows, 0);
    }

    #[test]
    fn single_action_has_no_regret() {
        let mut spec = EnvironmentSpec::default_fixture();
        spec.num_actions = 1;
        let env = generate_environment(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut ofu = learner(&env, OfuConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x = env.sample_side_info(&mut rng);
            let report = ofu.learn_episode(&x, &env, &mut rng).unwrap();
            let (kernel, reward) = env.true_models(&x).unwrap();
            let (_, best) = best_policy(&kernel, &reward).unwrap();
            let v = evaluate_policy(&kernel, &reward, &report.policy).unwrap();
            assert_eq!(best, v);
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let env = fixture(5);
        let run = || {
            let mut ofu = learner(&env, OfuConfig { rho_scale: 0.1, ..Default::default() });
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            (0..40)
                .map(|_| {
                    let x = env.sample_side_info(&mut rng);
                    ofu.learn_episode(&x, &env, &mut rng).unwrap().trajectory
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn episode_counter_and_estimates_track_logs() {
        let env = fixture(7);
        let mut ofu = learner(&env, OfuConfig { rho_scale: 0.1, ..Default::default() });
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..25 {
            let x = env.sample_side_info(&mut rng);
            ofu.learn_episode(&x, &env, &mut rng).unwrap();
        }
        assert_eq!(ofu.episode(), ofu.stats().episodes() + 1);
        for pair in 0..env.topology().num_pairs() {
            assert_eq!(ofu.estimates().fitted_on(pair), ofu.stats().visits(pair));
        }
        // nothing new to fit: a refresh changes nothing
        let before = ofu.estimates.clone();
        let report = ofu.estimates.refresh(&ofu.stats, ofu.link, &ofu.config.solver, ofu.config.refresh);
        assert_eq!(report.solves, 0);
        assert_eq!(before, ofu.estimates);
    }

    #[test]
    fn checkpoint_resume_is_exact() {
        let env = fixture(9);
        let config = OfuConfig { rho_scale: 0.1, ..Default::default() };
        let xs: Vec<Vec<f64>> = {
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            (0..30).map(|_| env.sample_side_info(&mut rng)).collect()
        };
        let episode_rng = |t: usize| ChaCha8Rng::seed_from_u64(100 + t as u64);

        let mut straight = learner(&env, config);
        let mut a = Vec::new();
        for (t, x) in xs.iter().enumerate() {
            a.push(straight.learn_episode(x, &env, &mut episode_rng(t)).unwrap().trajectory);
        }

        let mut first = learner(&env, config);
        let mut b = Vec::new();
        for (t, x) in xs.iter().enumerate().take(12) {
            b.push(first.learn_episode(x, &env, &mut episode_rng(t)).unwrap().trajectory);
        }
        let text = serde_json::to_string(&first.checkpoint()).unwrap();
        let mut resumed = OfuLearner::from_checkpoint(serde_json::from_str(&text).unwrap()).unwrap();
        for (t, x) in xs.iter().enumerate().skip(12) {
            b.push(resumed.learn_episode(x, &env, &mut episode_rng(t)).unwrap().trajectory);
        }
        assert_eq!(a, b);
        assert_eq!(resumed.checkpoint(), straight.checkpoint());
    }

    #[test]
    fn context_blind_ignores_side_information() {
        let env = fixture(11);
        let blind = OfuLearner::context_blind(env.topology().clone(), env.maps(), env.link(), OfuConfig::default()).unwrap();
        assert_eq!(blind.stats().maps().transition, FeatureMap::constant());
        assert_eq!(blind.name(), "context_blind");
        let a = blind.plan_episode(&[0.9, 0.0]).unwrap();
        let b = blind.plan_episode(&[-0.9, 0.0]).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.bands, b.bands);
    }

    #[test]
    fn random_learner_is_valid() {
        let env = fixture(12);
        let mut random = RandomLearner::new(env.topology().clone());
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let report = random.learn_episode(&[0.0, 0.0], &env, &mut rng).unwrap();
            report.trajectory.validate(env.topology()).unwrap();
        }
    }
}
