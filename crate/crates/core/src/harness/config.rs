use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::environment::{Branching, EnvironmentShape, EnvironmentSpec, RewardNoise, SideInfoDistribution};
use crate::error::{Error, Result};
use crate::estimation::{RefreshSchedule, SolverSettings};
use crate::glm::{FeatureMap, LinkFunction};
use crate::learner::OfuConfig;

/// Environment variable overriding [`ExperimentConfig::output_dir`].
pub const OUTPUT_DIR_ENV: &str = "CTXMDP_OUTPUT_DIR";
/// Environment variable overriding [`ExperimentConfig::workers`].
pub const WORKERS_ENV: &str = "CTXMDP_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum LearnerKind {
    Ofu,
    ContextBlind,
    Random,
    /// Plays the true optimal policy; regret is zero by construction.
    Oracle,
}

impl LearnerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LearnerKind::Ofu => "ofu",
            LearnerKind::ContextBlind => "context_blind",
            LearnerKind::Random => "random",
            LearnerKind::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum FixtureKind {
    #[default]
    Default,
    ContextDependent,
}

/// Optional changes applied on top of a fixture preset.
///
/// `side_dim` is `d`; `transition_dim` and `reward_dim` are the raw feature
/// dimensions before the optional bias coordinate, so `n = transition_dim +
/// bias`. The horizon is `layer_sizes.len() - 1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentOverrides {
    pub layer_sizes: Option<Vec<usize>>,
    pub num_actions: Option<usize>,
    pub side_dim: Option<usize>,
    pub transition_dim: Option<usize>,
    pub reward_dim: Option<usize>,
    pub feature_bias: Option<bool>,
    pub x_max: Option<f64>,
    pub link: Option<LinkFunction>,
    pub param_bound: Option<f64>,
    pub shape: Option<EnvironmentShape>,
    pub side_info: Option<SideInfoDistribution>,
    pub reward_noise: Option<RewardNoise>,
    pub branching: Option<Branching>,
}

impl EnvironmentOverrides {
    pub fn apply(&self, mut spec: EnvironmentSpec) -> EnvironmentSpec {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    spec.$field = v.clone();
                }
            )*};
        }
        set!(layer_sizes, num_actions, side_dim, x_max, link, param_bound, shape, side_info, reward_noise, branching);
        if let Some(d) = self.side_dim {
            // features follow the side information unless set explicitly
            spec.transition_features.dim = d;
            spec.reward_features.dim = d;
        }
        if let Some(n) = self.transition_dim {
            spec.transition_features.dim = n;
        }
        if let Some(m) = self.reward_dim {
            spec.reward_features.dim = m;
        }
        if let Some(bias) = self.feature_bias {
            spec.transition_features = FeatureMap::new(spec.transition_features.dim, bias);
            spec.reward_features = FeatureMap::new(spec.reward_features.dim, bias);
        }
        spec
    }
}

/// One experiment: a learner run on one generated environment per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub learner: LearnerKind,
    /// Episodes per seed (`T`).
    pub episodes: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_rho_scale")]
    pub rho_scale: f64,
    #[serde(default)]
    pub fixture: FixtureKind,
    #[serde(default)]
    pub environment: EnvironmentOverrides,
    /// Radius the learner projects its estimates onto; defaults to the
    /// environment's `param_bound`.
    #[serde(default)]
    pub learner_param_bound: Option<f64>,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub refresh: RefreshSchedule,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_delta() -> f64 {
    0.1
}

fn default_rho_scale() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn new(learner: LearnerKind, episodes: usize, seeds: Vec<u64>) -> Self {
        Self {
            learner,
            episodes,
            seeds,
            delta: default_delta(),
            rho_scale: default_rho_scale(),
            fixture: FixtureKind::Default,
            environment: EnvironmentOverrides::default(),
            learner_param_bound: None,
            solver: SolverSettings::default(),
            refresh: RefreshSchedule::default(),
            output_dir: None,
            workers: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `CTXMDP_OUTPUT_DIR` and `CTXMDP_WORKERS` if set.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            self.output_dir = Some(dir.into());
        }
        if let Ok(workers) = std::env::var(WORKERS_ENV) {
            let parsed = workers
                .parse()
                .map_err(|_| Error::Config(format!("{WORKERS_ENV}={workers:?} is not a count")))?;
            self.workers = Some(parsed);
        }
        self.validate()
    }

    pub fn environment_spec(&self) -> EnvironmentSpec {
        let preset = match self.fixture {
            FixtureKind::Default => EnvironmentSpec::default_fixture(),
            FixtureKind::ContextDependent => EnvironmentSpec::context_dependent_fixture(),
        };
        self.environment.apply(preset)
    }

    pub fn ofu_config(&self) -> OfuConfig {
        OfuConfig {
            delta: self.delta,
            rho_scale: self.rho_scale,
            param_bound: self.learner_param_bound.unwrap_or_else(|| self.environment_spec().param_bound),
            solver: self.solver,
            refresh: self.refresh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.rho_scale >= 0.0) || !self.rho_scale.is_finite() {
            return Err(Error::Config(format!("rho_scale must be non-negative, got {}", self.rho_scale)));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        if let Some(b) = self.learner_param_bound {
            if !(b >= 0.0) {
                return Err(Error::Config("learner_param_bound must be non-negative".into()));
            }
        }
        let spec = self.environment_spec();
        if spec.layer_sizes.contains(&0) || spec.num_actions == 0 {
            return Err(Error::Config("layer sizes and action count must be positive".into()));
        }
        spec.validate()
    }
}
