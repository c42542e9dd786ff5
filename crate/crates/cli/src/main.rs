use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use crossflux::engine::TraceLevel;
use crossflux::error::{ScenarioError, SimError};
use crossflux::experiment::{self, CalibrationOptions, ExperimentPlan};
use crossflux::scenario::{load_scenario, Condition, Environment, Scenario};

/// Output directory override, taking precedence over `--out`.
const OUT_ENV: &str = "CROSSFLUX_OUT";

#[derive(Parser)]
#[command(name = "crossflux", version, about = "Co-simulate V2I message loss on an adaptive signal controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run conditions and replications and write per-run and summary outputs.
    Run(RunArgs),
    /// Search the receiver SNR threshold that yields a target loss ratio at 0 dB penalty.
    Calibrate(CalibrateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvArg {
    Baseline,
    Homogeneous,
    Heterogeneous,
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceArg {
    Summary,
    Decisions,
    Messages,
    Trajectories,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML merged onto the built-in case study.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Condition by name, e.g. `baseline` or `heterogeneous-30db-corr`. Repeatable.
    #[arg(long, conflicts_with_all = ["all", "env"])]
    condition: Vec<String>,
    /// The full 15-condition matrix.
    #[arg(long)]
    all: bool,
    /// Environment of a single ad hoc condition.
    #[arg(long, value_enum)]
    env: Option<EnvArg>,
    /// SNR penalty of the ad hoc condition.
    #[arg(long, requires = "env", default_value_t = 0.0)]
    snr_penalty: f64,
    /// Force loss compensation on or off for the selected conditions.
    #[arg(long, value_enum, conflicts_with = "all")]
    correction: Option<OnOff>,
    #[arg(long, default_value_t = experiment::DEFAULT_REPLICATIONS, value_parser = clap::value_parser!(u32).range(1..))]
    replications: u32,
    /// Seed of replication 0; replication i uses seed + i.
    #[arg(long, default_value_t = experiment::DEFAULT_BASE_SEED)]
    seed: u64,
    /// Output directory (overridden by CROSSFLUX_OUT).
    #[arg(long, default_value = "crossflux-out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "summary")]
    trace_level: TraceArg,
    /// Maximum number of runs executing at once.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Whole-intersection loss ratio wanted at 0 dB penalty.
    #[arg(long, default_value_t = 0.203)]
    target_mlr: f64,
    #[arg(long, default_value_t = experiment::DEFAULT_BASE_SEED)]
    seed: u64,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,
}

/// Failures split by exit status: bad input exits 2, everything else 1.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Scenario(ScenarioError::Io(..)) => Failure::Runtime(e.to_string()),
            SimError::Scenario(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn scenario_from(path: Option<&PathBuf>) -> Result<Scenario, Failure> {
    match path {
        Some(p) => load_scenario(p).map_err(|e| match e {
            ScenarioError::Io(..) => Failure::Runtime(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }),
        None => Ok(Scenario::default_case_study()),
    }
}

fn conditions_from(args: &RunArgs) -> Result<Vec<Condition>, Failure> {
    let mut out = if args.all {
        Condition::case_study_matrix()
    } else if let Some(env) = args.env {
        let environment = match env {
            EnvArg::Baseline => Environment::Baseline,
            EnvArg::Homogeneous => Environment::Homogeneous,
            EnvArg::Heterogeneous => Environment::Heterogeneous,
        };
        let penalty = if environment == Environment::Baseline { 0.0 } else { args.snr_penalty };
        vec![Condition { environment, snr_penalty_db: penalty, correction: false }]
    } else if !args.condition.is_empty() {
        args.condition.iter().map(|n| Condition::parse_name(n)).collect::<Result<_, _>>().map_err(Failure::Usage)?
    } else {
        return Err(Failure::Usage("choose conditions with --condition, --env or --all".into()));
    };
    if let Some(c) = args.correction {
        out.iter_mut().for_each(|cond| cond.correction = matches!(c, OnOff::On));
    }
    if let Some(bad) = out.iter().find(|c| !c.snr_penalty_db.is_finite() || c.snr_penalty_db < 0.0) {
        return Err(Failure::Usage(format!("SNR penalty must be a non-negative number, got {}", bad.snr_penalty_db)));
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>, scale: f64, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.*}", prec, x * scale))
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let scenario = scenario_from(args.scenario.as_ref())?;
    let conditions = conditions_from(&args)?;
    let out_dir = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or(args.out);
    let mut plan = ExperimentPlan::new(scenario, out_dir);
    plan.conditions = conditions;
    plan.replications = args.replications;
    plan.base_seed = args.seed;
    plan.jobs = args.jobs.map(|j| j as usize);
    plan.trace = match args.trace_level {
        TraceArg::Summary => TraceLevel::Summary,
        TraceArg::Decisions => TraceLevel::Decisions,
        TraceArg::Messages => TraceLevel::Messages,
        TraceArg::Trajectories => TraceLevel::Trajectories,
    };
    let result = experiment::execute(&plan)?;
    println!("{:<28} {:>8} {:>8} {:>8} {:>9} {:>8} {:>8}", "condition", "mlr_all", "mlr_west", "delay_s", "delta_%", "p", "events");
    for r in &result.conditions {
        let events = [r.switch_divergences, r.wrongful_terminations, r.wrongful_extensions].iter().flatten().sum::<f64>();
        println!(
            "{:<28} {:>8} {:>8} {:>8} {:>9} {:>8} {:>8.1}",
            r.condition,
            fmt_opt(r.mlr_all_mean, 100.0, 1),
            fmt_opt(r.mlr_west_mean, 100.0, 1),
            fmt_opt(r.delay_mean_s, 1.0, 2),
            fmt_opt(r.delay_delta_pct, 1.0, 1),
            fmt_opt(r.p_value, 1.0, 4),
            events,
        );
    }
    println!("wrote {}", plan.out_dir.join("summary.csv").display());
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&args.target_mlr) {
        return Err(Failure::Usage(format!("--target-mlr must lie in [0, 1], got {}", args.target_mlr)));
    }
    let scenario = scenario_from(args.scenario.as_ref())?;
    let opts = CalibrationOptions { base_seed: args.seed, jobs: args.jobs.map(|j| j as usize), ..CalibrationOptions::default() };
    let cal = experiment::calibrate(&scenario, args.target_mlr, &opts)?;
    if cal.clamped_to_lower_bound {
        eprintln!(
            "warning: target {:.3} is below the loss ratio at the lower bound ({:.3}); returning the bound",
            args.target_mlr, cal.mlr
        );
    }
    println!("snr_threshold_db = {}", cal.threshold_db);
    println!("mlr = {:.4}", cal.mlr);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Calibrate(a) => cmd_calibrate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
