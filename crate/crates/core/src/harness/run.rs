use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, LearnerKind};
use super::trace::{emit_csv, RegretTrace, Summary};
use crate::environment::{generate_environment, EpisodeSampler, GroundTruth};
use crate::error::Result;
use crate::learner::{EpisodeReport, Learner, OfuLearner, RandomLearner};
use crate::mdp::{best_policy, evaluate_policy};

/// What a per-episode random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamPurpose {
    Environment = 0,
    SideInfo = 1,
    Episode = 2,
}

/// Independent stream for `(seed, t, purpose)`.
///
/// Streams are derived, not drawn in sequence, so episode `t` sees the same
/// randomness no matter how the run was split or resumed.
pub fn stream(seed: u64, t: u64, purpose: StreamPurpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((t << 2) | purpose as u64);
    rng
}

/// The environment a seed generates.
pub fn environment_for_seed(config: &ExperimentConfig, seed: u64) -> Result<GroundTruth> {
    generate_environment(&config.environment_spec(), &mut stream(seed, 0, StreamPurpose::Environment))
}

/// Best achievable expected return for side information `x`.
pub fn oracle_value(truth: &GroundTruth, x: &[f64]) -> Result<f64> {
    let (kernel, reward) = truth.true_models(x)?;
    Ok(best_policy(&kernel, &reward)?.1)
}

/// Plays the optimal policy of the true models.
#[derive(Debug, Clone)]
pub struct OracleLearner {
    truth: Arc<GroundTruth>,
    episode: usize,
}

impl OracleLearner {
    pub fn new(truth: Arc<GroundTruth>) -> Self {
        Self { truth, episode: 1 }
    }
}

impl Learner for OracleLearner {
    fn name(&self) -> &str {
        "oracle"
    }

    fn learn_episode(&mut self, x: &[f64], env: &dyn EpisodeSampler, rng: &mut dyn RngCore) -> Result<EpisodeReport> {
        let (kernel, reward) = self.truth.true_models(x)?;
        let (policy, value) = best_policy(&kernel, &reward)?;
        let trajectory = env.rollout(x, &policy, self.episode, rng)?;
        self.episode += 1;
        Ok(EpisodeReport {
            trajectory,
            policy,
            optimistic_value: Some(value),
            infeasible_rows: 0,
            solver_iterations: 0,
            solver_failures: 0,
        })
    }
}

pub fn build_learner(config: &ExperimentConfig, truth: &Arc<GroundTruth>) -> Result<Box<dyn Learner>> {
    let topology = truth.topology().clone();
    Ok(match config.learner {
        LearnerKind::Ofu => Box::new(OfuLearner::new(topology, *truth.maps(), truth.link(), config.ofu_config())?),
        LearnerKind::ContextBlind => Box::new(OfuLearner::context_blind(
            topology,
            truth.maps(),
            truth.link(),
            config.ofu_config(),
        )?),
        LearnerKind::Random => Box::new(RandomLearner::new(topology)),
        LearnerKind::Oracle => Box::new(OracleLearner::new(truth.clone())),
    })
}

/// Runs the configured learner for one seed.
pub fn run_replication(config: &ExperimentConfig, seed: u64) -> Result<RegretTrace> {
    let truth = Arc::new(environment_for_seed(config, seed)?);
    let mut learner = build_learner(config, &truth)?;
    let mut trace = RegretTrace::new();
    for t in 1..=config.episodes as u64 {
        let x = truth.sample_side_info(&mut stream(seed, t, StreamPurpose::SideInfo));
        let report = learner.learn_episode(&x, truth.as_ref(), &mut stream(seed, t, StreamPurpose::Episode))?;
        if report.solver_failures > 0 {
            log::warn!(
                "seed {seed}, episode {t}: {} estimate refreshes fell back to previous values",
                report.solver_failures
            );
        }
        let (kernel, reward) = truth.true_models(&x)?;
        let (_, oracle) = best_policy(&kernel, &reward)?;
        let value = evaluate_policy(&kernel, &reward, &report.policy)?;
        trace.push(
            oracle,
            value,
            report.trajectory.realized_return(),
            report.infeasible_rows,
            report.solver_iterations,
        )?;
    }
    Ok(trace)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub traces: Vec<(u64, RegretTrace)>,
    pub summary: Summary,
}

/// Runs every seed, in parallel across `config.workers` threads.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let run_all = || -> Result<Vec<(u64, RegretTrace)>> {
        config
            .seeds
            .par_iter()
            .map(|&seed| run_replication(config, seed).map(|trace| (seed, trace)))
            .collect()
    };
    let traces = match config.workers {
        Some(workers) => rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| crate::Error::Config(e.to_string()))?
            .install(run_all)?,
        None => run_all()?,
    };
    let summary = Summary::from_traces(config.learner.as_str(), &traces)?;
    Ok(ExperimentOutcome { traces, summary })
}

/// Path of the CSV for one seed.
pub fn trace_path(dir: &Path, learner: LearnerKind, seed: u64) -> PathBuf {
    dir.join(format!("{}_seed{seed}.csv", learner.as_str()))
}

/// Writes one CSV per seed and `<learner>_summary.json`; returns the paths.
pub fn write_outputs(config: &ExperimentConfig, outcome: &ExperimentOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (seed, trace) in &outcome.traces {
        let path = trace_path(dir, config.learner, *seed);
        emit_csv(trace, &path)?;
        written.push(path);
    }
    let path = dir.join(format!("{}_summary.json", config.learner.as_str()));
    std::fs::write(&path, serde_json::to_string_pretty(&outcome.summary)? + "\n")?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a = stream(5, 3, StreamPurpose::Episode).random::<u64>();
        assert_eq!(a, stream(5, 3, StreamPurpose::Episode).random::<u64>());
        assert_ne!(a, stream(5, 3, StreamPurpose::SideInfo).random::<u64>());
        assert_ne!(a, stream(5, 4, StreamPurpose::Episode).random::<u64>());
        assert_ne!(a, stream(6, 3, StreamPurpose::Episode).random::<u64>());
    }

    #[test]
    fn oracle_has_zero_regret() {
        let config = ExperimentConfig::new(LearnerKind::Oracle, 50, vec![1, 2]);
        let outcome = run_experiment(&config).unwrap();
        for (_, trace) in &outcome.traces {
            assert!(trace.final_regret().abs() <= 1e-9);
        }
    }

    #[test]
    fn single_action_means_no_regret_for_anyone() {
        for learner in [LearnerKind::Ofu, LearnerKind::ContextBlind, LearnerKind::Random, LearnerKind::Oracle] {
            let mut config = ExperimentConfig::new(learner, 20, vec![4]);
            config.environment.num_actions = Some(1);
            let outcome = run_experiment(&config).unwrap();
            assert!(outcome.summary.final_regret_mean.abs() <= 1e-12, "{learner:?}");
        }
    }

    #[test]
    fn oracle_value_dominates_random_policies() {
        let config = ExperimentConfig::new(LearnerKind::Random, 1, vec![0]);
        let truth = environment_for_seed(&config, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let topology = truth.topology().clone();
        for _ in 0..10 {
            let x = truth.sample_side_info(&mut rng);
            let best = oracle_value(&truth, &x).unwrap();
            let (kernel, reward) = truth.true_models(&x).unwrap();
            for _ in 0..20 {
                let actions = (0..topology.num_non_terminal())
                    .map(|_| rng.random_range(0..topology.num_actions()))
                    .collect();
                let policy = crate::mdp::Policy::new(&topology, actions).unwrap();
                assert!(evaluate_policy(&kernel, &reward, &policy).unwrap() <= best + 1e-12);
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut config = ExperimentConfig::new(LearnerKind::Ofu, 30, vec![1, 2, 3]);
        config.rho_scale = 0.1;
        config.workers = Some(1);
        let serial = run_experiment(&config).unwrap();
        config.workers = Some(3);
        let parallel = run_experiment(&config).unwrap();
        assert_eq!(serial.traces, parallel.traces);
        assert_eq!(serial.summary, parallel.summary);
    }
}
