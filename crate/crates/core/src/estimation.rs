//! Sufficient statistics and the maximum quasi-likelihood estimator.
//!
//! Each `(s, a)` pair owns a reward design matrix `M = I + Σ ψψᵀ` and each
//! `(s, a, s')` triple a transition design matrix `N = I + Σ φφᵀ`. A visit to
//! `(s, a)` updates `M` and the `N` of every successor `s'`: the transition
//! model for `s'` is a binary GLM whose response is the indicator that `s'`
//! was reached, so every visit is an observation for every successor.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{FeatureMaps, LinkFunction, ParameterTables};
use crate::mdp::{LayeredTopology, Trajectory};

/// Full re-inversion period of [`DesignMatrix`].
pub const REINVERT_EVERY: usize = 512;

/// `W = I + Σ w wᵀ` together with a rank-one-maintained inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    updates: usize,
    since_reinversion: usize,
}

impl DesignMatrix {
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
            inverse: DMatrix::identity(dim, dim),
            updates: 0,
            since_reinversion: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// `W ← W + w wᵀ`; the inverse follows by Sherman–Morrison.
    pub fn update(&mut self, w: &[f64]) -> Result<()> {
        let dim = self.dim();
        if w.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: w.len(),
            });
        }
        let w = DVector::from_column_slice(w);
        self.matrix.ger(1.0, &w, &w, 1.0);
        let u = &self.inverse * &w;
        let denom = 1.0 + w.dot(&u);
        self.inverse.ger(-1.0 / denom, &u, &u, 1.0);
        self.updates += 1;
        self.since_reinversion += 1;
        if self.since_reinversion >= REINVERT_EVERY {
            self.reinvert();
        }
        Ok(())
    }

    /// Recomputes the inverse from the accumulated matrix.
    pub fn reinvert(&mut self) {
        // W ⪰ I, so Cholesky cannot fail short of non-finite input
        if let Some(chol) = self.matrix.clone().cholesky() {
            self.inverse = chol.inverse();
        }
        self.since_reinversion = 0;
    }

    /// `‖v‖_{W⁻¹} = √(vᵀ W⁻¹ v)`.
    pub fn mahalanobis_norm(&self, v: &[f64]) -> Result<f64> {
        let dim = self.dim();
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
        let mut q = 0.0;
        for i in 0..dim {
            let mut row = 0.0;
            for j in 0..dim {
                row += self.inverse[(i, j)] * v[j];
            }
            q += v[i] * row;
        }
        Ok(q.max(0.0).sqrt())
    }
}

/// Free-function form of [`DesignMatrix::mahalanobis_norm`].
pub fn mahalanobis_norm(v: &[f64], acc: &DesignMatrix) -> Result<f64> {
    acc.mahalanobis_norm(v)
}

/// One visit of a `(s, a)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub episode: usize,
    pub side_info: Vec<f64>,
    pub reward: f64,
    /// Global id of the successor that was reached.
    pub successor: usize,
}

#[derive(Debug, Clone)]
pub struct SufficientStats {
    topology: Arc<LayeredTopology>,
    maps: FeatureMaps,
    reward_design: Vec<DesignMatrix>,
    transition_design: Vec<DesignMatrix>,
    logs: Vec<Vec<Observation>>,
    reward_features: Vec<Vec<f64>>,
    transition_features: Vec<Vec<f64>>,
    episodes: usize,
}

impl SufficientStats {
    pub fn new(topology: Arc<LayeredTopology>, maps: FeatureMaps) -> Self {
        let pairs = topology.num_pairs();
        Self {
            reward_design: vec![DesignMatrix::identity(maps.m()); pairs],
            transition_design: vec![DesignMatrix::identity(maps.n()); topology.num_triples()],
            logs: vec![Vec::new(); pairs],
            reward_features: vec![Vec::new(); pairs],
            transition_features: vec![Vec::new(); pairs],
            episodes: 0,
            topology,
            maps,
        }
    }

    pub fn topology(&self) -> &Arc<LayeredTopology> {
        &self.topology
    }

    pub fn maps(&self) -> &FeatureMaps {
        &self.maps
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn reward_design(&self, pair: usize) -> &DesignMatrix {
        &self.reward_design[pair]
    }

    pub fn transition_design(&self, triple: usize) -> &DesignMatrix {
        &self.transition_design[triple]
    }

    pub fn log(&self, pair: usize) -> &[Observation] {
        &self.logs[pair]
    }

    /// Visit count `τ` of a pair.
    pub fn visits(&self, pair: usize) -> usize {
        self.logs[pair].len()
    }

    pub fn record_episode(&mut self, trajectory: &Trajectory) -> Result<()> {
        trajectory.validate(&self.topology)?;
        let psi = self.maps.psi(&trajectory.side_info)?;
        let phi = self.maps.phi(&trajectory.side_info)?;
        let (psi, phi) = (psi.as_slice(), phi.as_slice());
        for l in 0..self.topology.horizon() {
            let s = trajectory.states[l];
            let a = trajectory.actions[l];
            let pair = self.topology.pair_index(s, a);
            self.reward_design[pair].update(psi)?;
            for triple in self.topology.row(pair) {
                self.transition_design[triple].update(phi)?;
            }
            self.reward_features[pair].extend_from_slice(psi);
            self.transition_features[pair].extend_from_slice(phi);
            self.logs[pair].push(Observation {
                episode: trajectory.episode,
                side_info: trajectory.side_info.clone(),
                reward: trajectory.rewards[l],
                successor: trajectory.states[l + 1],
            });
        }
        self.episodes += 1;
        Ok(())
    }

    /// Observed rewards of a pair as an estimation problem for `λ`.
    pub fn reward_problem(&self, pair: usize) -> (Vec<f64>, &[f64]) {
        let responses = self.logs[pair].iter().map(|o| o.reward).collect();
        (responses, &self.reward_features[pair])
    }

    /// Reach indicators of one successor as an estimation problem for `θ`.
    pub fn transition_problem(&self, pair: usize, successor: usize) -> (Vec<f64>, &[f64]) {
        let responses = self.logs[pair]
            .iter()
            .map(|o| if o.successor == successor { 1.0 } else { 0.0 })
            .collect();
        (responses, &self.transition_features[pair])
    }

    /// Largest entrywise gap between any maintained matrix and `I` plus the
    /// outer products recomputed from the logs.
    pub fn rebuild_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for pair in 0..self.topology.num_pairs() {
            let mut m = DMatrix::identity(self.maps.m(), self.maps.m());
            let mut n = DMatrix::identity(self.maps.n(), self.maps.n());
            for obs in &self.logs[pair] {
                let psi = self.maps.reward.apply(&obs.side_info);
                let phi = self.maps.transition.apply(&obs.side_info);
                m.ger(1.0, &psi, &psi, 1.0);
                n.ger(1.0, &phi, &phi, 1.0);
            }
            worst = worst.max((self.reward_design[pair].matrix() - &m).amax());
            for triple in self.topology.row(pair) {
                worst = worst.max((self.transition_design[triple].matrix() - &n).amax());
            }
        }
        worst
    }

    pub fn to_checkpoint(&self) -> StatsCheckpoint {
        StatsCheckpoint {
            topology: (*self.topology).clone(),
            maps: self.maps,
            reward_design: self.reward_design.clone(),
            transition_design: self.transition_design.clone(),
            logs: self.logs.clone(),
            episodes: self.episodes,
        }
    }

    pub fn from_checkpoint(checkpoint: StatsCheckpoint) -> Result<Self> {
        let StatsCheckpoint {
            topology,
            maps,
            reward_design,
            transition_design,
            logs,
            episodes,
        } = checkpoint;
        if reward_design.len() != topology.num_pairs()
            || logs.len() != topology.num_pairs()
            || transition_design.len() != topology.num_triples()
        {
            return Err(Error::TopologyMismatch);
        }
        let mut reward_features = Vec::with_capacity(logs.len());
        let mut transition_features = Vec::with_capacity(logs.len());
        for log in &logs {
            let mut r = Vec::with_capacity(log.len() * maps.m());
            let mut t = Vec::with_capacity(log.len() * maps.n());
            for obs in log {
                r.extend_from_slice(maps.psi(&obs.side_info)?.as_slice());
                t.extend_from_slice(maps.phi(&obs.side_info)?.as_slice());
            }
            reward_features.push(r);
            transition_features.push(t);
        }
        Ok(Self {
            topology: Arc::new(topology),
            maps,
            reward_design,
            transition_design,
            logs,
            reward_features,
            transition_features,
            episodes,
        })
    }
}

/// Serialized [`SufficientStats`]; feature caches are rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsCheckpoint {
    pub topology: LayeredTopology,
    pub maps: FeatureMaps,
    pub reward_design: Vec<DesignMatrix>,
    pub transition_design: Vec<DesignMatrix>,
    pub logs: Vec<Vec<Observation>>,
    pub episodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Weight of the `½‖λ‖²` penalty; `1` matches the identity in the
    /// design matrices, `0` gives the bare score equation.
    pub ridge: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-8,
            ridge: 1.0,
        }
    }
}

/// Observations for one parameter vector: `features` is row-major with
/// `dim` columns, one row per response.
#[derive(Debug, Clone, Copy)]
pub struct MqleProblem<'a> {
    dim: usize,
    features: &'a [f64],
    responses: &'a [f64],
}

impl<'a> MqleProblem<'a> {
    pub fn new(dim: usize, features: &'a [f64], responses: &'a [f64]) -> Result<Self> {
        if responses.is_empty() {
            return Err(Error::InvalidArgument("no observations".into()));
        }
        if dim == 0 || features.len() != dim * responses.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * responses.len(),
                actual: features.len(),
            });
        }
        if let Some(y) = responses.iter().find(|y| !(0.0..=1.0).contains(*y)) {
            return Err(Error::InvalidArgument(format!("response {y} outside [0, 1]")));
        }
        Ok(Self {
            dim,
            features,
            responses,
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    fn rows(&self) -> impl Iterator<Item = (&'a [f64], f64)> + '_ {
        self.features.chunks_exact(self.dim).zip(self.responses.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MqleFit {
    /// Projected onto the norm ball.
    pub params: DVector<f64>,
    /// Root of the estimating equation before projection.
    pub unprojected: DVector<f64>,
    pub iterations: usize,
    /// `‖Σ (y − σ(wᵀλ)) w − ridge·λ‖` at the unprojected root.
    pub residual: f64,
    pub projected: bool,
}

struct Evaluation {
    objective: f64,
    gradient: DVector<f64>,
    hessian: DMatrix<f64>,
}

fn evaluate(problem: &MqleProblem, link: LinkFunction, ridge: f64, lambda: &DVector<f64>, second_order: bool) -> Evaluation {
    let dim = problem.dim;
    let mut objective = -0.5 * ridge * lambda.norm_squared();
    let mut gradient = -ridge * lambda;
    let mut hessian = if second_order {
        DMatrix::identity(dim, dim) * ridge
    } else {
        DMatrix::zeros(0, 0)
    };
    let lam = lambda.as_slice();
    for (w, y) in problem.rows() {
        let z: f64 = w.iter().zip(lam).map(|(a, b)| a * b).sum();
        objective += y * z - link.cumulant(z);
        let r = y - link.mean(z);
        for (g, wi) in gradient.iter_mut().zip(w) {
            *g += r * wi;
        }
        if second_order {
            let slope = link.derivative(z);
            for i in 0..dim {
                let si = slope * w[i];
                for j in i..dim {
                    hessian[(i, j)] += si * w[j];
                }
            }
        }
    }
    if second_order {
        hessian.fill_lower_triangle_with_upper_triangle();
    }
    Evaluation {
        objective,
        gradient,
        hessian,
    }
}

/// Solves `Σ_u (y_u − σ(w_uᵀλ)) w_u − ridge·λ = 0` by damped Newton with step
/// halving, then projects onto `‖λ‖ ≤ bound`.
pub fn solve_mqle(
    problem: &MqleProblem,
    link: LinkFunction,
    bound: f64,
    settings: &SolverSettings,
    warm_start: Option<&DVector<f64>>,
) -> Result<MqleFit> {
    let dim = problem.dim;
    let mut lambda = match warm_start {
        Some(w) if w.len() == dim => w.clone(),
        Some(w) => {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: w.len(),
            })
        }
        None => DVector::zeros(dim),
    };
    let ridge = settings.ridge;
    let mut eval = evaluate(problem, link, ridge, &lambda, true);
    let mut iterations = 0;
    loop {
        let residual = eval.gradient.norm();
        let direction = match eval.hessian.clone().cholesky() {
            Some(chol) => chol.solve(&eval.gradient),
            // near-singular curvature: plain gradient step scaled by the
            // largest possible curvature
            None => {
                let scale = eval.hessian.diagonal().iter().sum::<f64>().max(1.0);
                &eval.gradient / scale
            }
        };
        // A vanishing gradient alone is not enough: on separable data the
        // curvature vanishes with it while the iterate runs off to infinity.
        let step_limit = settings.tolerance.sqrt() * (1.0 + lambda.norm());
        if residual <= settings.tolerance && direction.norm() <= step_limit {
            let unprojected = lambda.clone();
            let norm = lambda.norm();
            let projected = norm > bound;
            if projected {
                lambda *= bound / norm;
            }
            return Ok(MqleFit {
                params: lambda,
                unprojected,
                iterations,
                residual,
                projected,
            });
        }
        if iterations >= settings.max_iterations || !residual.is_finite() {
            return Err(Error::NonConvergence {
                iterations,
                residual,
            });
        }
        iterations += 1;

        let slack = 1e-12 * (1.0 + eval.objective.abs());
        let mut step = 1.0;
        let mut next = loop {
            let candidate = &lambda + &direction * step;
            let trial = evaluate(problem, link, ridge, &candidate, false);
            if trial.objective >= eval.objective - slack || step < 1e-10 {
                break candidate;
            }
            step *= 0.5;
        };
        std::mem::swap(&mut lambda, &mut next);
        eval = evaluate(problem, link, ridge, &lambda, true);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefreshSchedule {
    /// Re-solve every pair whose log grew since its last solve.
    #[default]
    EveryEpisode,
    /// Re-solve a pair once its log has doubled since the last solve.
    Doubling,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RefreshReport {
    pub solves: usize,
    pub iterations: usize,
    pub failures: usize,
}

/// Current `λ̃`, `θ̃` and the log length each pair was last fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEstimates {
    pub params: ParameterTables,
    /// Unprojected roots, used to warm-start the next solve.
    roots: ParameterTables,
    fitted_on: Vec<usize>,
}

impl ModelEstimates {
    pub fn new(topology: &LayeredTopology, maps: &FeatureMaps, bound: f64) -> Self {
        let params = ParameterTables::zeros(topology, maps.n(), maps.m(), bound);
        Self {
            roots: params.clone(),
            params,
            fitted_on: vec![0; topology.num_pairs()],
        }
    }

    pub fn fitted_on(&self, pair: usize) -> usize {
        self.fitted_on[pair]
    }

    /// Errors when a pair has data but was never fitted.
    pub fn check_solved(&self, stats: &SufficientStats) -> Result<()> {
        for pair in 0..self.fitted_on.len() {
            let visits = stats.visits(pair);
            if visits > 0 && self.fitted_on[pair] == 0 {
                return Err(Error::UnsolvedEstimates { pair, visits });
            }
        }
        Ok(())
    }

    /// Re-solves the pairs selected by `schedule`. A non-converged solve
    /// keeps the previous estimate and is counted as a failure.
    pub fn refresh(
        &mut self,
        stats: &SufficientStats,
        link: LinkFunction,
        settings: &SolverSettings,
        schedule: RefreshSchedule,
    ) -> RefreshReport {
        let topology = stats.topology().clone();
        let maps = stats.maps();
        let bound = self.params.bound;
        let mut report = RefreshReport::default();
        for pair in 0..topology.num_pairs() {
            let visits = stats.visits(pair);
            let last = self.fitted_on[pair];
            let due = match schedule {
                RefreshSchedule::EveryEpisode => visits > last,
                RefreshSchedule::Doubling => visits > 0 && (last == 0 || visits >= 2 * last),
            };
            if !due {
                continue;
            }
            self.fitted_on[pair] = visits;

            let (responses, features) = stats.reward_problem(pair);
            let problem = MqleProblem::new(maps.m(), features, &responses)
                .expect("log and feature cache agree");
            self.apply(
                solve_mqle(&problem, link, bound, settings, Some(&self.roots.lambda[pair])),
                &mut report,
                |tables| &mut tables.lambda[pair],
                pair,
            );

            let successors = topology.pair_successors(pair);
            // single-successor rows are fixed by the topology
            if successors.len() < 2 {
                continue;
            }
            for (triple, &next) in topology.row(pair).zip(successors) {
                let (responses, features) = stats.transition_problem(pair, next);
                let problem = MqleProblem::new(maps.n(), features, &responses)
                    .expect("log and feature cache agree");
                self.apply(
                    solve_mqle(&problem, link, bound, settings, Some(&self.roots.theta[triple])),
                    &mut report,
                    |tables| &mut tables.theta[triple],
                    pair,
                );
            }
        }
        report
    }

    fn apply(
        &mut self,
        fit: Result<MqleFit>,
        report: &mut RefreshReport,
        slot: impl Fn(&mut ParameterTables) -> &mut DVector<f64>,
        pair: usize,
    ) {
        report.solves += 1;
        match fit {
            Ok(fit) => {
                report.iterations += fit.iterations;
                *slot(&mut self.params) = fit.params;
                *slot(&mut self.roots) = fit.unprojected;
            }
            Err(err) => {
                report.failures += 1;
                if let Error::NonConvergence { iterations, .. } = err {
                    report.iterations += iterations;
                }
                log::warn!("pair {pair}: keeping previous estimate ({err})");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::FeatureMap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit_ball(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                return v;
            }
        }
    }

    #[test]
    fn single_outer_product() {
        let mut acc = DesignMatrix::identity(2);
        acc.update(&[1.0, 0.0]).unwrap();
        assert_eq!(acc.matrix(), &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));
        assert_eq!(acc.inverse(), &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0]));
        assert!(acc.update(&[1.0]).is_err());
    }

    #[test]
    fn mahalanobis_identity_and_zero() {
        let acc = DesignMatrix::identity(3);
        let v = [3.0, 4.0, 0.0];
        assert_eq!(acc.mahalanobis_norm(&v).unwrap(), 5.0);
        assert_eq!(mahalanobis_norm(&[0.0; 3], &acc).unwrap(), 0.0);
        assert!(acc.mahalanobis_norm(&[1.0]).is_err());
    }

    #[test]
    fn mahalanobis_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut acc = DesignMatrix::identity(4);
        for _ in 0..50 {
            acc.update(&random_unit_ball(&mut rng, 4)).unwrap();
        }
        for _ in 0..20 {
            let v = random_unit_ball(&mut rng, 4);
            let dv = DVector::from_vec(v.clone());
            let solved = acc.matrix().clone().lu().solve(&dv).unwrap();
            let direct = dv.dot(&solved).sqrt();
            let norm = acc.mahalanobis_norm(&v).unwrap();
            assert!((norm - direct).abs() < 1e-10);
            assert!(norm <= dv.norm() + 1e-15);
        }
    }

    #[test]
    fn norm_never_grows_with_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut acc = DesignMatrix::identity(3);
        let probe = [0.3, -0.6, 0.2];
        let mut last = acc.mahalanobis_norm(&probe).unwrap();
        for _ in 0..2000 {
            acc.update(&random_unit_ball(&mut rng, 3)).unwrap();
            let now = acc.mahalanobis_norm(&probe).unwrap();
            assert!(now <= last + 1e-14);
            last = now;
        }
    }

    #[test]
    fn maintained_inverse_survives_many_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut acc = DesignMatrix::identity(3);
        for _ in 0..20_000 {
            acc.update(&random_unit_ball(&mut rng, 3)).unwrap();
        }
        let product = acc.matrix() * acc.inverse();
        assert!((product - DMatrix::identity(3, 3)).amax() <= 1e-8);
    }

    fn stats_fixture() -> SufficientStats {
        let topology = Arc::new(LayeredTopology::full(&[1, 2, 2, 1], 2).unwrap());
        let maps = FeatureMaps {
            side_dim: 2,
            transition: FeatureMap::new(2, true),
            reward: FeatureMap::new(1, true),
            x_max: 1.0,
        };
        SufficientStats::new(topology, maps)
    }

    #[test]
    fn fresh_stats_are_identity() {
        let stats = stats_fixture();
        for pair in 0..stats.topology().num_pairs() {
            assert_eq!(stats.reward_design(pair).matrix(), &DMatrix::identity(2, 2));
            assert_eq!(stats.visits(pair), 0);
        }
        for triple in 0..stats.topology().num_triples() {
            assert_eq!(stats.transition_design(triple).matrix(), &DMatrix::identity(3, 3));
        }
    }

    #[test]
    fn record_updates_every_successor() {
        let mut stats = stats_fixture();
        let traj = Trajectory {
            episode: 1,
            side_info: vec![1.0, 0.0],
            states: vec![0, 2, 3, 5],
            actions: vec![1, 0, 1],
            rewards: vec![1.0, 0.0, 1.0],
        };
        stats.record_episode(&traj).unwrap();
        let t = stats.topology().clone();
        let pair = t.pair_index(0, 1);
        assert_eq!(stats.visits(pair), 1);
        // ψ(x) = (1, 1)
        assert_eq!(*stats.reward_design(pair).matrix(), DMatrix::from_element(2, 2, 1.0) + DMatrix::<f64>::identity(2, 2));
        for triple in t.row(pair) {
            assert_eq!(stats.transition_design(triple).updates(), 1);
        }
        let other = t.pair_index(0, 0);
        for triple in t.row(other) {
            assert_eq!(stats.transition_design(triple).updates(), 0);
        }
        let (responses, _) = stats.transition_problem(pair, 2);
        assert_eq!(responses, vec![1.0]);
        let (responses, _) = stats.transition_problem(pair, 1);
        assert_eq!(responses, vec![0.0]);

        let bad = Trajectory { states: vec![0, 3, 3, 5], ..traj };
        assert!(stats.record_episode(&bad).is_err());
    }

    #[test]
    fn rebuild_and_checkpoint_consistency() {
        let mut stats = stats_fixture();
        let t = stats.topology().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for ep in 0..100 {
            let x = random_unit_ball(&mut rng, 2);
            let mut states = vec![0];
            let mut actions = vec![];
            for _ in 0..t.horizon() {
                let s = *states.last().unwrap();
                let a = rng.random_range(0..2);
                let succ = t.successors(s, a);
                actions.push(a);
                states.push(succ[rng.random_range(0..succ.len())]);
            }
            let rewards = (0..t.horizon()).map(|_| rng.random_range(0..2) as f64).collect();
            stats
                .record_episode(&Trajectory { episode: ep, side_info: x, states, actions, rewards })
                .unwrap();
        }
        assert!(stats.rebuild_deviation() <= 1e-10);
        for pair in 0..t.num_pairs() {
            let acc = stats.reward_design(pair);
            let direct = acc.matrix().clone().try_inverse().unwrap();
            assert!((direct - acc.inverse()).amax() <= 1e-8);
        }

        let text = serde_json::to_string(&stats.to_checkpoint()).unwrap();
        let restored = SufficientStats::from_checkpoint(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(restored.to_checkpoint(), stats.to_checkpoint());
        assert_eq!(restored.reward_features, stats.reward_features);
        assert_eq!(restored.transition_features, stats.transition_features);
    }

    #[test]
    fn half_responses_give_zero_estimate() {
        let features = [0.3, 1.0, -0.8, 1.0, 0.5, 1.0];
        let responses = [0.5; 3];
        let problem = MqleProblem::new(2, &features, &responses).unwrap();
        for ridge in [0.0, 1.0] {
            let settings = SolverSettings { ridge, ..Default::default() };
            let fit = solve_mqle(&problem, LinkFunction::Logistic, 10.0, &settings, None).unwrap();
            assert!(fit.params.norm() < 1e-12);
        }
    }

    #[test]
    fn identity_link_is_ridge_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let dim = 3;
        let count = 40;
        let mut features = Vec::new();
        let mut responses = Vec::new();
        for _ in 0..count {
            features.extend(random_unit_ball(&mut rng, dim));
            responses.push(rng.random::<f64>());
        }
        let problem = MqleProblem::new(dim, &features, &responses).unwrap();
        let fit = solve_mqle(&problem, LinkFunction::Identity, 100.0, &SolverSettings::default(), None).unwrap();

        // normal equations (I + XᵀX) λ = Xᵀy
        let x = DMatrix::from_row_slice(count, dim, &features);
        let y = DVector::from_vec(responses.clone());
        let gram = DMatrix::identity(dim, dim) + x.transpose() * &x;
        let closed = gram.lu().solve(&(x.transpose() * y)).unwrap();
        assert!((fit.params - closed).amax() < 1e-10);
    }

    #[test]
    fn separable_data_without_ridge_does_not_converge() {
        let features = [1.0, 1.0];
        let responses = [1.0, 1.0];
        let problem = MqleProblem::new(1, &features, &responses).unwrap();
        let settings = SolverSettings { ridge: 0.0, max_iterations: 30, ..Default::default() };
        let err = solve_mqle(&problem, LinkFunction::Logistic, 10.0, &settings, None).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }

    #[test]
    fn projection_onto_norm_ball() {
        let features = [1.0; 200];
        let responses = [1.0; 200];
        let problem = MqleProblem::new(1, &features, &responses).unwrap();
        let fit = solve_mqle(&problem, LinkFunction::Logistic, 2.0, &SolverSettings::default(), None).unwrap();
        assert!(fit.projected);
        assert!((fit.params.norm() - 2.0).abs() < 1e-12);
        assert!(fit.unprojected.norm() > 2.0);
    }

    #[test]
    fn problem_validation() {
        assert!(MqleProblem::new(1, &[], &[]).is_err());
        assert!(MqleProblem::new(2, &[1.0], &[0.5]).is_err());
        assert!(MqleProblem::new(1, &[1.0], &[1.5]).is_err());
    }

    #[test]
    fn resolve_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut features = Vec::new();
        let mut responses = Vec::new();
        for _ in 0..300 {
            let w = random_unit_ball(&mut rng, 2);
            let p = LinkFunction::Logistic.value(1.5 * w[0] - 0.5 * w[1]);
            responses.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
            features.extend(w);
        }
        let problem = MqleProblem::new(2, &features, &responses).unwrap();
        let s = SolverSettings::default();
        let first = solve_mqle(&problem, LinkFunction::Logistic, 10.0, &s, None).unwrap();
        let second = solve_mqle(&problem, LinkFunction::Logistic, 10.0, &s, Some(&first.unprojected)).unwrap();
        assert_eq!(second.iterations, 0);
        assert_eq!(first.params, second.params);
    }
}
