use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctxmdp::environment::{EnvironmentShape, RewardNoise, SideInfoDistribution};
use ctxmdp::glm::LinkFunction;
use ctxmdp::harness::checks::{run_acceptance, AcceptanceOptions};
use ctxmdp::harness::config::{OUTPUT_DIR_ENV, WORKERS_ENV};
use ctxmdp::harness::run::{environment_for_seed, run_replication, write_outputs};
use ctxmdp::harness::{run_experiment, ExperimentConfig, FixtureKind, LearnerKind};
use ctxmdp::Result;

#[derive(Parser)]
#[command(name = "ctxmdp", version, about = "Optimistic learning in layered MDPs with side information")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write per-seed CSV traces plus a summary.
    Run(RunArgs),
    /// Run the acceptance criteria and print one line per criterion.
    Check(CheckArgs),
    /// Write the generated environment for one seed as JSON.
    DumpFixture(DumpArgs),
    /// Re-run one seed and compare against a previously written trace.
    Replay(ReplayArgs),
}

/// Experiment settings; each flag overrides the matching config key.
#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    learner: Option<LearnerKind>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    rho_scale: Option<f64>,
    #[arg(long, value_enum)]
    fixture: Option<FixtureKind>,
    /// Comma-separated layer sizes, starting with 1.
    #[arg(long, value_delimiter = ',')]
    layer_sizes: Option<Vec<usize>>,
    #[arg(long)]
    num_actions: Option<usize>,
    #[arg(long)]
    side_dim: Option<usize>,
    #[arg(long)]
    transition_dim: Option<usize>,
    #[arg(long)]
    reward_dim: Option<usize>,
    #[arg(long)]
    feature_bias: Option<bool>,
    #[arg(long)]
    x_max: Option<f64>,
    #[arg(long, value_parser = parse_link)]
    link: Option<LinkFunction>,
    #[arg(long)]
    param_bound: Option<f64>,
    #[arg(long, value_parser = parse_shape)]
    shape: Option<EnvironmentShape>,
    #[arg(long, value_parser = parse_side_info)]
    side_info: Option<SideInfoDistribution>,
    /// `bernoulli` or `uniform:<half width>`.
    #[arg(long, value_parser = parse_noise)]
    reward_noise: Option<RewardNoise>,
    #[arg(long)]
    learner_param_bound: Option<f64>,
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

fn parse_link(s: &str) -> std::result::Result<LinkFunction, String> {
    match s {
        "logistic" => Ok(LinkFunction::Logistic),
        "identity" => Ok(LinkFunction::Identity),
        _ => Err(format!("unknown link {s:?} (logistic, identity)")),
    }
}

fn parse_shape(s: &str) -> std::result::Result<EnvironmentShape, String> {
    match s {
        "random" => Ok(EnvironmentShape::Random),
        "context_dependent" => Ok(EnvironmentShape::ContextDependent),
        _ => Err(format!("unknown shape {s:?} (random, context_dependent)")),
    }
}

fn parse_side_info(s: &str) -> std::result::Result<SideInfoDistribution, String> {
    match s {
        "uniform_ball" => Ok(SideInfoDistribution::UniformBall),
        "uniform_cube" => Ok(SideInfoDistribution::UniformCube),
        _ => Err(format!("unknown side-info distribution {s:?} (uniform_ball, uniform_cube)")),
    }
}

fn parse_noise(s: &str) -> std::result::Result<RewardNoise, String> {
    match s.split_once(':') {
        None if s == "bernoulli" => Ok(RewardNoise::Bernoulli),
        Some(("uniform", h)) => h
            .parse()
            .map(|half_width| RewardNoise::Uniform { half_width })
            .map_err(|_| format!("bad half width {h:?}")),
        _ => Err(format!("unknown reward noise {s:?} (bernoulli, uniform:<h>)")),
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::new(LearnerKind::Ofu, 1000, vec![0]),
        };
        macro_rules! set {
            ($target:expr, $($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    $target.$field = v.clone().into();
                }
            )*};
        }
        set!(config, learner, episodes, seeds, delta, rho_scale, fixture);
        set!(config, learner_param_bound, output_dir, workers);
        set!(
            config.environment,
            layer_sizes,
            num_actions,
            side_dim,
            transition_dim,
            reward_dim,
            feature_bias,
            x_max,
            link,
            param_bound,
            shape,
            side_info,
            reward_noise
        );
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Also print the resolved config as TOML.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct CheckArgs {
    /// Criterion ids to run (repeatable); all when omitted.
    #[arg(long = "criterion", short = 'c')]
    criteria: Vec<usize>,
    #[arg(long, default_value_t = AcceptanceOptions::default().seed)]
    seed: u64,
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: u64,
    /// CSV trace written by an earlier `run`.
    #[arg(long)]
    trace: PathBuf,
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let config = args.config.resolve()?;
    if args.print_config {
        println!("{}", config.to_toml()?);
    }
    let outcome = run_experiment(&config)?;
    let dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
    for path in write_outputs(&config, &outcome, &dir)? {
        log::info!("wrote {}", path.display());
    }
    println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
    Ok(ExitCode::SUCCESS)
}

fn check(args: CheckArgs) -> ExitCode {
    let mut options = AcceptanceOptions {
        seed: args.seed,
        only: args.criteria,
        ..Default::default()
    };
    options.long_run.workers = args.workers;
    let reports = run_acceptance(&options, |r| println!("{r}"));
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} of {} criteria passed", reports.len() - failed, reports.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn dump_fixture(args: DumpArgs) -> Result<ExitCode> {
    let config = args.config.resolve()?;
    let truth = environment_for_seed(&config, args.seed)?;
    let text = serde_json::to_string_pretty(&truth.to_dump(Some(args.seed)))? + "\n";
    match args.output {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn replay(args: ReplayArgs) -> Result<ExitCode> {
    let config = args.config.resolve()?;
    let recorded = std::fs::read(&args.trace)?;
    let trace = run_replication(&config, args.seed)?;
    let mut fresh = Vec::new();
    trace.write_csv(&mut fresh)?;
    if fresh == recorded {
        println!("{}: identical ({} episodes)", args.trace.display(), trace.len());
        return Ok(ExitCode::SUCCESS);
    }
    let recorded = String::from_utf8_lossy(&recorded);
    let fresh = String::from_utf8_lossy(&fresh);
    let line = recorded
        .lines()
        .zip(fresh.lines())
        .position(|(a, b)| a != b)
        .unwrap_or_else(|| recorded.lines().count().min(fresh.lines().count()));
    println!("{}: differs from line {}", args.trace.display(), line + 1);
    Ok(ExitCode::FAILURE)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Check(args) => Ok(check(args)),
        Command::DumpFixture(args) => dump_fixture(args),
        Command::Replay(args) => replay(args),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
