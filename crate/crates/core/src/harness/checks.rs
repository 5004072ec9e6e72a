//! Acceptance criteria as runnable checks.
//!
//! Each check returns a [`CriterionReport`] instead of panicking, so the CLI
//! and the test suite can print one line per criterion and carry on.

use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{ExperimentConfig, FixtureKind, LearnerKind};
use super::run::{oracle_value, run_experiment, stream, StreamPurpose};
use crate::confidence::ConfidenceBands;
use crate::environment::{generate_environment, EnvironmentSpec, EpisodeSampler};
use crate::error::Result;
use crate::estimation::{solve_mqle, DesignMatrix, MqleProblem, SolverSettings};
use crate::glm::LinkFunction;
use crate::learner::{OfuConfig, OfuLearner};
use crate::mdp::{occupancy, LayeredTopology, Policy, TransitionKernel};
use crate::planner::{brute_force_optimistic, optimistic_plan};

/// Largest deviation of a kernel row sum from one that the checks accept.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CriterionReport {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl CriterionReport {
    fn finish(id: usize, name: &'static str, budget: Duration, started: Instant, ok: bool, detail: String) -> Self {
        let elapsed = started.elapsed();
        let in_time = elapsed <= budget;
        let detail = if in_time {
            detail
        } else {
            format!("{detail}; over time budget")
        };
        Self {
            id,
            name,
            passed: ok && in_time,
            detail,
            elapsed,
            budget,
        }
    }

    fn error(id: usize, name: &'static str, budget: Duration, started: Instant, err: crate::Error) -> Self {
        Self::finish(id, name, budget, started, false, format!("error: {err}"))
    }
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {} {:<28} {} ({:.1} s / {} s): {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.elapsed.as_secs_f64(),
            self.budget.as_secs(),
            self.detail
        )
    }
}

/// Tracks the worst row-sum error over every kernel the checks touch.
#[derive(Debug, Default)]
pub struct RowSumAudit {
    state: Mutex<(f64, usize)>,
}

impl RowSumAudit {
    pub fn record(&self, kernel: &TransitionKernel) {
        let topology = kernel.topology();
        let mut worst: f64 = 0.0;
        for pair in 0..topology.num_pairs() {
            let sum: f64 = kernel.probs()[topology.row(pair)].iter().sum();
            worst = worst.max((sum - 1.0).abs());
        }
        let mut state = self.state.lock().expect("audit lock");
        state.0 = state.0.max(worst);
        state.1 += topology.num_pairs();
    }

    /// `(worst deviation, rows inspected)`.
    pub fn worst(&self) -> (f64, usize) {
        *self.state.lock().expect("audit lock")
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn random_row<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn random_sizes<R: Rng + ?Sized>(rng: &mut R, transitions: usize) -> Vec<usize> {
    std::iter::once(1).chain((0..transitions).map(|_| rng.random_range(1..=3))).collect()
}

fn random_kernel<R: Rng + ?Sized>(rng: &mut R, topology: &Arc<LayeredTopology>) -> Result<TransitionKernel> {
    TransitionKernel::from_rows(topology.clone(), |pair| random_row(rng, topology.pair_successors(pair).len()))
}

fn random_policy<R: Rng + ?Sized>(rng: &mut R, topology: &LayeredTopology) -> Result<Policy> {
    let actions = (0..topology.num_non_terminal()).map(|_| rng.random_range(0..topology.num_actions())).collect();
    Policy::new(topology, actions)
}

/// Extended dynamic programming agrees with exhaustive search over policies
/// and band vertices on 200 small instances.
pub fn planner_oracle(seed: u64, audit: &RowSumAudit) -> CriterionReport {
    const NAME: &str = "planner-oracle equivalence";
    let started = Instant::now();
    let budget = secs(10);
    let run = || -> Result<(f64, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let mut infeasible = 0;
        for _ in 0..200 {
            let topology = Arc::new(LayeredTopology::full(&random_sizes(&mut rng, 3), 2)?);
            let reward: Vec<f64> = (0..topology.num_pairs()).map(|_| rng.random()).collect();
            let mut transition = Vec::with_capacity(topology.num_triples());
            for pair in 0..topology.num_pairs() {
                transition.extend(random_row(&mut rng, topology.pair_successors(pair).len()));
            }
            let mut bands = ConfidenceBands::degenerate(topology.clone(), reward, transition)?;
            for i in 0..topology.num_triples() {
                let c = bands.transition_center[i];
                bands.transition_lo[i] = (c - 0.4 * rng.random::<f64>()).max(0.0);
                bands.transition_hi[i] = (c + 0.4 * rng.random::<f64>()).min(1.0);
            }
            for i in 0..topology.num_pairs() {
                let c = bands.reward_center[i];
                bands.reward_lo[i] = (c - 0.3 * rng.random::<f64>()).max(0.0);
                bands.reward_hi[i] = (c + 0.3 * rng.random::<f64>()).min(1.0);
            }
            let plan = optimistic_plan(&topology, &bands)?;
            audit.record(&plan.kernel);
            infeasible += plan.infeasible_rows;
            worst = worst.max((plan.root_value() - brute_force_optimistic(&topology, &bands)?).abs());
        }
        Ok((worst, infeasible))
    };
    match run() {
        Ok((worst, infeasible)) => CriterionReport::finish(
            1,
            NAME,
            budget,
            started,
            worst <= 1e-9 && infeasible == 0,
            format!("max |plan − brute force| = {worst:.2e} over 200 instances (limit 1e-9)"),
        ),
        Err(e) => CriterionReport::error(1, NAME, budget, started, e),
    }
}

/// Counts from running the theoretical-width learner on the default fixture.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BandStatistics {
    pub episodes: usize,
    pub optimistic_episodes: usize,
    pub transition_checks: usize,
    pub transition_escapes: usize,
    pub reward_checks: usize,
    pub reward_escapes: usize,
}

/// Runs OFU with unscaled widths and compares every band against the truth.
pub fn band_statistics(seed: u64, episodes: usize, delta: f64, audit: &RowSumAudit) -> Result<BandStatistics> {
    let spec = EnvironmentSpec::default_fixture();
    let truth = generate_environment(&spec, &mut stream(seed, 0, StreamPurpose::Environment))?;
    let config = OfuConfig {
        delta,
        rho_scale: 1.0,
        param_bound: spec.param_bound,
        ..OfuConfig::default()
    };
    let mut learner = OfuLearner::new(truth.topology().clone(), *truth.maps(), truth.link(), config)?;
    let topology = truth.topology().clone();
    let reachable = topology.reachable();
    let mut stats = BandStatistics { episodes, ..Default::default() };
    for t in 1..=episodes as u64 {
        let x = truth.sample_side_info(&mut stream(seed, t, StreamPurpose::SideInfo));
        let (planned, _) = learner.run_episode(&x, &truth, &mut stream(seed, t, StreamPurpose::Episode))?;
        let (kernel, reward) = truth.true_models(&x)?;
        audit.record(&kernel);
        audit.record(&planned.plan.kernel);
        if planned.plan.root_value() >= oracle_value(&truth, &x)? - 1e-12 {
            stats.optimistic_episodes += 1;
        }
        for pair in 0..topology.num_pairs() {
            let (s, a) = topology.pair(pair);
            if !reachable[s] {
                continue;
            }
            stats.reward_checks += 1;
            if !planned.bands.reward_contains(pair, reward.get(s, a)) {
                stats.reward_escapes += 1;
            }
            for (triple, &p) in topology.row(pair).zip(kernel.row(s, a)) {
                stats.transition_checks += 1;
                if !planned.bands.transition_contains(triple, p) {
                    stats.transition_escapes += 1;
                }
            }
        }
    }
    Ok(stats)
}

/// The optimistic value dominates the best achievable value in ≥ 90% of
/// 2000 episodes.
pub fn optimism_frequency(seed: u64, audit: &RowSumAudit) -> CriterionReport {
    const NAME: &str = "optimism frequency";
    let started = Instant::now();
    let budget = secs(120);
    match band_statistics(seed, 2000, 0.1, audit) {
        Ok(s) => {
            let rate = s.optimistic_episodes as f64 / s.episodes as f64;
            CriterionReport::finish(
                2,
                NAME,
                budget,
                started,
                rate >= 0.9,
                format!("optimistic in {}/{} episodes ({:.1}%, need ≥ 90%)", s.optimistic_episodes, s.episodes, 100.0 * rate),
            )
        }
        Err(e) => CriterionReport::error(2, NAME, budget, started, e),
    }
}

/// True probabilities and reward means escape their bands at a rate ≤ δ.
pub fn confidence_coverage(seed: u64, audit: &RowSumAudit) -> CriterionReport {
    const NAME: &str = "confidence coverage";
    let started = Instant::now();
    let budget = secs(120);
    let delta = 0.1;
    match band_statistics(seed, 2000, delta, audit) {
        Ok(s) => {
            let p = s.transition_escapes as f64 / s.transition_checks as f64;
            let r = s.reward_escapes as f64 / s.reward_checks as f64;
            CriterionReport::finish(
                3,
                NAME,
                budget,
                started,
                p <= delta && r <= delta,
                format!(
                    "escape rate transitions {}/{} = {p:.4}, rewards {}/{} = {r:.4} (limit {delta})",
                    s.transition_escapes, s.transition_checks, s.reward_escapes, s.reward_checks
                ),
            )
        }
        Err(e) => CriterionReport::error(3, NAME, budget, started, e),
    }
}

/// Uniform in the unit ball, or on the unit sphere when `on_sphere`.
fn unit_ball_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize, on_sphere: bool) -> Vec<f64> {
    let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let radius = if on_sphere { 1.0 } else { rng.random::<f64>().powf(1.0 / dim as f64) };
    (v.normalize() * radius).as_slice().to_vec()
}

/// Worst ratio of the potential `Σ min(1, ‖w_s‖²_{W_s⁻¹})` to its bound.
pub fn elliptical_potential_ratio(seed: u64, sequences: usize) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut violations = 0;
    for k in [1usize, 2, 5] {
        for t in [10usize, 1_000, 10_000] {
            let bound = 2.0 * k as f64 * (1.0 + t as f64 / k as f64).ln();
            for i in 0..sequences {
                let mut design = DesignMatrix::identity(k);
                let mut potential = 0.0;
                for _ in 0..t {
                    // half the sequences sit on the sphere, the worst case
                    let w = unit_ball_vector(&mut rng, k, i % 2 == 0);
                    potential += design.mahalanobis_norm(&w)?.powi(2).min(1.0);
                    design.update(&w)?;
                }
                worst = worst.max(potential / bound);
                if potential > bound {
                    violations += 1;
                }
            }
        }
    }
    Ok((worst, violations))
}

/// The elliptical potential never exceeds `2k log(1 + t/k)`.
pub fn elliptical_potential(seed: u64) -> CriterionReport {
    const NAME: &str = "elliptical potential";
    let started = Instant::now();
    let budget = secs(30);
    match elliptical_potential_ratio(seed, 50) {
        Ok((worst, violations)) => CriterionReport::finish(
            4,
            NAME,
            budget,
            started,
            violations == 0,
            format!("{violations} violations in 450 sequences; largest potential/bound = {worst:.3}"),
        ),
        Err(e) => CriterionReport::error(4, NAME, budget, started, e),
    }
}

/// Worst `(lhs − rhs)` of the occupancy perturbation inequality and the
/// number of violations at `slack`.
pub fn occupancy_perturbation_margin(seed: u64, pairs: usize, slack: f64, audit: &RowSumAudit) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..pairs {
        let transitions = rng.random_range(2..=4);
        let topology = Arc::new(LayeredTopology::full(&random_sizes(&mut rng, transitions), 2)?);
        let truth = random_kernel(&mut rng, &topology)?;
        let other = random_kernel(&mut rng, &topology)?;
        // P̂ = (1 − η)P + ηQ, with η spanning small to large perturbations
        let eta = rng.random::<f64>().powi(2);
        let perturbed = TransitionKernel::from_rows(topology.clone(), |pair| {
            let range = topology.row(pair);
            let mixed: Vec<f64> = truth.probs()[range.clone()]
                .iter()
                .zip(&other.probs()[range])
                .map(|(p, q)| (1.0 - eta) * p + eta * q)
                .collect();
            let total: f64 = mixed.iter().sum();
            mixed.into_iter().map(|v| v / total).collect()
        })?;
        audit.record(&truth);
        audit.record(&perturbed);
        let policy = random_policy(&mut rng, &topology)?;
        let mu = occupancy(&truth, &policy)?;
        let mu_hat = occupancy(&perturbed, &policy)?;
        let mut accumulated = 0.0;
        for l in 1..=topology.horizon() {
            for s in topology.layer(l - 1) {
                let pair = topology.pair_index(s, policy.action(s));
                let range = topology.row(pair);
                let d: f64 = truth.probs()[range.clone()]
                    .iter()
                    .zip(&perturbed.probs()[range])
                    .map(|(p, q)| (p - q).abs())
                    .sum();
                accumulated += mu[s] * d;
            }
            let lhs: f64 = topology.layer(l).map(|s| (mu_hat[s] - mu[s]).abs()).sum();
            worst = worst.max(lhs - accumulated);
            if lhs > accumulated + slack {
                violations += 1;
            }
        }
    }
    Ok((worst, violations))
}

/// Layer-wise occupancy differences stay below the accumulated row errors.
pub fn occupancy_perturbation(seed: u64, audit: &RowSumAudit) -> CriterionReport {
    const NAME: &str = "occupancy perturbation";
    let started = Instant::now();
    let budget = secs(10);
    match occupancy_perturbation_margin(seed, 100, 1e-10, audit) {
        Ok((worst, violations)) => CriterionReport::finish(
            5,
            NAME,
            budget,
            started,
            violations == 0,
            format!("{violations} violations over 100 kernel pairs; max(lhs − rhs) = {worst:.3e}"),
        ),
        Err(e) => CriterionReport::error(5, NAME, budget, started, e),
    }
}

/// Seeds and horizon shared by the two long-run criteria.
#[derive(Debug, Clone)]
pub struct LongRunSettings {
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub rho_scale: f64,
    pub workers: Option<usize>,
}

impl Default for LongRunSettings {
    fn default() -> Self {
        Self {
            seeds: (0..8).collect(),
            episodes: 8192,
            rho_scale: 0.1,
            workers: None,
        }
    }
}

impl LongRunSettings {
    fn config(&self, learner: LearnerKind, fixture: FixtureKind) -> ExperimentConfig {
        let mut config = ExperimentConfig::new(learner, self.episodes, self.seeds.clone());
        config.fixture = fixture;
        config.rho_scale = self.rho_scale;
        config.workers = self.workers;
        config
    }
}

/// Mean regret grows like √T rather than linearly.
pub fn regret_sublinearity(settings: &LongRunSettings) -> CriterionReport {
    const NAME: &str = "regret sublinearity";
    let started = Instant::now();
    let budget = secs(600);
    let outcome = match run_experiment(&settings.config(LearnerKind::Ofu, FixtureKind::Default)) {
        Ok(o) => o,
        Err(e) => return CriterionReport::error(6, NAME, budget, started, e),
    };
    let summary = &outcome.summary;
    let at = |t: usize| summary.regret_at(t).unwrap_or(f64::NAN);
    let t_final = settings.episodes;
    let mut ok = true;
    let mut parts = Vec::new();
    let mut t = 1024;
    while 2 * t <= t_final && t <= 4096 {
        let ratio = at(2 * t) / at(t);
        ok &= ratio <= 1.7;
        parts.push(format!("R({})/R({t}) = {ratio:.3}", 2 * t));
        t *= 2;
    }
    let early = at(512) / 512.0;
    let late = at(t_final) / t_final as f64;
    ok &= late < 0.5 * early;
    parts.push(format!("R(T)/T = {late:.4} vs R(512)/512 = {early:.4}"));
    let enough = t_final >= 8192;
    CriterionReport::finish(
        6,
        NAME,
        budget,
        started,
        ok && enough,
        format!("{} (ratio limit 1.7, average must halve)", parts.join(", ")),
    )
}

/// Using side information beats ignoring it by at least a factor of two on
/// the context-dependent fixture.
pub fn separation(settings: &LongRunSettings) -> CriterionReport {
    const NAME: &str = "separation";
    let started = Instant::now();
    let budget = secs(900);
    let run = |learner| run_experiment(&settings.config(learner, FixtureKind::ContextDependent));
    let (ofu, blind) = match (run(LearnerKind::Ofu), run(LearnerKind::ContextBlind)) {
        (Ok(a), Ok(b)) => (a.summary, b.summary),
        (Err(e), _) | (_, Err(e)) => return CriterionReport::error(7, NAME, budget, started, e),
    };
    let ratio = ofu.final_regret_mean / blind.final_regret_mean;
    CriterionReport::finish(
        7,
        NAME,
        budget,
        started,
        ratio < 0.5,
        format!(
            "final regret ofu {:.1} ± {:.1}, context_blind {:.1} ± {:.1}, ratio {ratio:.3} (need < 0.5)",
            ofu.final_regret_mean,
            ofu.final_regret_standard_error,
            blind.final_regret_mean,
            blind.final_regret_standard_error
        ),
    )
}

/// Result of one planted-parameter recovery trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryTrial {
    pub error: f64,
    pub residual: f64,
}

/// Where the side information of a recovery trial is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryDesign {
    /// The default fixture's distribution, uniform in the ball.
    FixtureSideInfo,
    /// Uniform on the sphere `‖x‖ = X_max`.
    Sphere,
}

/// Fits a logistic GLM to `samples` Bernoulli responses generated from a
/// planted parameter, using the default fixture's reward features.
pub fn recovery_trial<R: Rng + ?Sized>(rng: &mut R, samples: usize, design: RecoveryDesign) -> Result<RecoveryTrial> {
    let spec = EnvironmentSpec::default_fixture();
    let maps = spec.feature_maps();
    let dim = maps.m();
    let planted = DVector::from_vec(unit_ball_vector(rng, dim, false)) * spec.param_bound;
    let mut features = Vec::with_capacity(samples * dim);
    let mut responses = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = match design {
            RecoveryDesign::FixtureSideInfo => spec.sample_side_info(rng),
            RecoveryDesign::Sphere => unit_ball_vector(rng, spec.side_dim, true).iter().map(|v| v * spec.x_max).collect(),
        };
        let psi = maps.psi(&x)?;
        let mean = LinkFunction::Logistic.value(psi.dot(&planted));
        responses.push(if rng.random::<f64>() < mean { 1.0 } else { 0.0 });
        features.extend(psi.iter());
    }
    let problem = MqleProblem::new(dim, &features, &responses)?;
    let fit = solve_mqle(&problem, LinkFunction::Logistic, spec.param_bound, &SolverSettings::default(), None)?;
    Ok(RecoveryTrial {
        error: (fit.params - planted).norm(),
        residual: fit.residual,
    })
}

/// Planted parameters are recovered to within 0.1 from 10⁴ samples.
pub fn estimator_consistency(seed: u64) -> CriterionReport {
    const NAME: &str = "estimator consistency";
    let started = Instant::now();
    let budget = secs(30);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trials: Result<Vec<RecoveryTrial>> = (0..20).map(|_| recovery_trial(&mut rng, 10_000, RecoveryDesign::Sphere)).collect();
    match trials {
        Ok(trials) => {
            let recovered = trials.iter().filter(|t| t.error <= 0.1).count();
            let worst_error = trials.iter().map(|t| t.error).fold(0.0, f64::max);
            let worst_residual = trials.iter().map(|t| t.residual).fold(0.0, f64::max);
            CriterionReport::finish(
                8,
                NAME,
                budget,
                started,
                recovered == 20 && worst_residual <= 1e-8,
                format!(
                    "{recovered}/20 within 0.1 (worst error {worst_error:.4}); worst score residual {worst_residual:.1e}"
                ),
            )
        }
        Err(e) => CriterionReport::error(8, NAME, budget, started, e),
    }
}

/// Largest entry of `maintained − direct` inverse after `updates` rank-one
/// updates in dimension `dim`.
pub fn inverse_drift(seed: u64, dim: usize, updates: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut design = DesignMatrix::identity(dim);
    for _ in 0..updates {
        design.update(&unit_ball_vector(&mut rng, dim, false))?;
    }
    let direct = design
        .matrix()
        .clone()
        .try_inverse()
        .ok_or_else(|| crate::Error::InvalidArgument("design matrix is singular".into()))?;
    Ok((design.inverse() - direct).amax())
}

/// Maintained inverses stay accurate and every kernel row sums to one.
pub fn numerical_hygiene(seed: u64, audit: &RowSumAudit) -> CriterionReport {
    const NAME: &str = "numerical hygiene";
    let started = Instant::now();
    let budget = secs(60);
    let drift = [3usize, 5].iter().map(|&dim| inverse_drift(seed, dim, 100_000)).collect::<Result<Vec<f64>>>();
    match drift {
        Ok(drift) => {
            let drift = drift.into_iter().fold(0.0, f64::max);
            let (rows, count) = audit.worst();
            CriterionReport::finish(
                9,
                NAME,
                budget,
                started,
                drift <= 1e-8 && rows <= ROW_SUM_TOLERANCE && count > 0,
                format!("inverse drift {drift:.1e} after 1e5 updates (limit 1e-8); worst row-sum error {rows:.1e} over {count} audited rows (limit 1e-12)"),
            )
        }
        Err(e) => CriterionReport::error(9, NAME, budget, started, e),
    }
}

/// Which criteria to run and with what settings.
#[derive(Debug, Clone)]
pub struct AcceptanceOptions {
    pub seed: u64,
    pub long_run: LongRunSettings,
    /// Criteria ids to run; empty means all.
    pub only: Vec<usize>,
}

impl Default for AcceptanceOptions {
    fn default() -> Self {
        Self {
            seed: 2024,
            long_run: LongRunSettings::default(),
            only: Vec::new(),
        }
    }
}

/// Runs the selected criteria in order, calling `on_report` after each.
pub fn run_acceptance(options: &AcceptanceOptions, mut on_report: impl FnMut(&CriterionReport)) -> Vec<CriterionReport> {
    let audit = RowSumAudit::default();
    let seed = options.seed;
    let wanted = |id: usize| options.only.is_empty() || options.only.contains(&id);
    let checks: [(usize, Box<dyn Fn() -> CriterionReport + '_>); 9] = [
        (1, Box::new(|| planner_oracle(seed, &audit))),
        (2, Box::new(|| optimism_frequency(seed, &audit))),
        (3, Box::new(|| confidence_coverage(seed, &audit))),
        (4, Box::new(|| elliptical_potential(seed))),
        (5, Box::new(|| occupancy_perturbation(seed, &audit))),
        (6, Box::new(|| regret_sublinearity(&options.long_run))),
        (7, Box::new(|| separation(&options.long_run))),
        (8, Box::new(|| estimator_consistency(seed))),
        (9, Box::new(|| numerical_hygiene(seed, &audit))),
    ];
    let mut reports = Vec::new();
    for (id, check) in checks.iter() {
        if wanted(*id) {
            let report = check();
            on_report(&report);
            reports.push(report);
        }
    }
    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audit_tracks_worst_row() {
        let audit = RowSumAudit::default();
        let topology = Arc::new(LayeredTopology::full(&[1, 3], 1).unwrap());
        audit.record(&TransitionKernel::new(topology, vec![0.1, 0.2, 0.7]).unwrap());
        let (worst, rows) = audit.worst();
        assert!(worst <= 2.0 * f64::EPSILON);
        assert_eq!(rows, 1);
    }

    #[test]
    fn report_line_format() {
        let report = CriterionReport::finish(4, "x", secs(10), Instant::now(), true, "ok".into());
        let line = report.to_string();
        assert!(line.starts_with("criterion 4 x"));
        assert!(line.contains("PASS"));
        let slow = CriterionReport::finish(4, "x", Duration::ZERO, Instant::now() - secs(1), true, "ok".into());
        assert!(!slow.passed);
    }

    #[test]
    fn ball_vectors_respect_the_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dim in 1..5 {
            for _ in 0..100 {
                let norm = DVector::from_vec(unit_ball_vector(&mut rng, dim, false)).norm();
                assert!(norm <= 1.0 + 1e-12);
            }
            let norm = DVector::from_vec(unit_ball_vector(&mut rng, dim, true)).norm();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}
