//! `pollsmc`: synthetic data, baseline fits, scenario runs, backtests and
//! the HTTP service.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "pollsmc", version, about = "Scenario analysis for poll-aggregation models by sequential Monte Carlo")]
struct Cli {
    /// Directory for every artifact a command writes.
    #[arg(long, global = true, env = "POLLSMC_OUT", default_value = "pollsmc-out")]
    out: PathBuf,
    /// Worker threads for particle rejuvenation and reference refits.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic campaign from the prior: spec.kv, polls.csv, truth.json.
    Generate(GenerateArgs),
    /// Fit the baseline posterior by reference MCMC: draws.csv and report.json.
    FitBaseline(FitArgs),
    /// Run a perturbation schedule from baseline draws.
    RunScenario(ScenarioArgs),
    /// Run SMC and brute-force MCMC side by side and compare.
    BacktestCompare(BacktestArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Model spec (kv or json). Without it the desk instance is generated.
    #[arg(long, requires = "plan")]
    spec: Option<PathBuf>,
    /// Poll plan (kv or json) listing day, state, count and n per entry.
    #[arg(long, requires = "spec")]
    plan: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    polls: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Poll-error slots; defaults to the poll count plus eight spares for
    /// polls added by later scenarios.
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long, default_value_t = 1200)]
    iters: usize,
    #[arg(long, default_value_t = 200)]
    burnin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Engine settings shared by scenario runs and backtests.
#[derive(Debug, Clone, Args)]
struct EngineArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mesh steps for schedule documents that do not set their own.
    #[arg(long, default_value_t = 30)]
    mesh: usize,
    /// Rejuvenate when ESS falls below this fraction of the particle count.
    #[arg(long = "ess-frac", default_value_t = 0.5)]
    ess_frac: f64,
    /// HMC sweeps per rejuvenation.
    #[arg(long, default_value_t = 3)]
    sweeps: usize,
    /// Pareto k-hat warning threshold on reweight-only steps.
    #[arg(long, default_value_t = 0.7)]
    khat: f64,
}

#[derive(Debug, Args)]
struct RunInputs {
    #[command(flatten)]
    model: ModelArgs,
    /// Draws file the run starts from (a baseline fit or a snapshot).
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Schedule document (kv or json); an empty file is the identity.
    #[arg(long)]
    schedule: PathBuf,
    /// Configuration the starting draws target, as written to knob.json by
    /// an earlier run; the schedule continues from it.
    #[arg(long)]
    after: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    #[command(flatten)]
    inputs: RunInputs,
    /// Also keep the particles after this step (repeatable).
    #[arg(long = "snapshot")]
    snapshots: Vec<usize>,
}

#[derive(Debug, Args)]
struct BacktestArgs {
    #[command(flatten)]
    inputs: RunInputs,
    /// Reference chains pooled at the terminal configuration.
    #[arg(long, default_value_t = 5)]
    chains: usize,
    /// Pass threshold on the standardized mean difference.
    #[arg(long, default_value_t = 3.0)]
    tolerance: f64,
    #[arg(long, default_value_t = 1200)]
    iters: usize,
    #[arg(long, default_value_t = 200)]
    burnin: usize,
    /// Skip the per-mesh-point reference refits used for timing.
    #[arg(long)]
    no_refits: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Scenario jobs allowed to run at once.
    #[arg(long, default_value_t = 2)]
    workers: usize,
    /// Where baselines, jobs and snapshots persist; defaults to `<out>/service`.
    #[arg(long, env = "POLLSMC_DATA")]
    data_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // Help and version output.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::usage(e.to_string().trim().to_string(), "see `pollsmc <command> --help`");
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1", "omit --threads to use every core"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string(), "set --threads once"))?;
    }
    let out = cli.out;
    match cli.command {
        Command::Generate(a) => commands::generate(&out, a.spec.as_deref(), a.plan.as_deref(), a.seed),
        Command::FitBaseline(a) => commands::fit_baseline(
            &out,
            &commands::FitPlan {
                spec: a.model.spec,
                polls: a.model.polls,
                slots: a.slots,
                iterations: a.iters,
                burn_in: a.burnin,
                seed: a.seed,
            },
        ),
        Command::RunScenario(a) => commands::run_scenario(&out, &inputs(a.inputs), &a.snapshots),
        Command::BacktestCompare(a) => commands::backtest(
            &out,
            &inputs(a.inputs),
            &commands::OracleSettings {
                chains: a.chains,
                tolerance: a.tolerance,
                iterations: a.iters,
                burn_in: a.burnin,
                refits: !a.no_refits,
            },
        ),
        Command::Serve(a) => {
            let config = pollsmc_service::ServiceConfig {
                host: a.host,
                port: a.port,
                workers: a.workers,
                data_dir: a.data_dir.unwrap_or_else(|| out.join("service")),
            };
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(pollsmc_service::serve(config))?;
            Ok(())
        }
    }
}

fn inputs(a: RunInputs) -> commands::RunPlan {
    let e = a.engine;
    commands::RunPlan {
        spec: a.model.spec,
        polls: a.model.polls,
        baseline: a.baseline,
        schedule: a.schedule,
        after: a.after,
        config: pollsmc_core::SmcConfig {
            seed: e.seed,
            mesh: e.mesh,
            ess_fraction: e.ess_frac,
            sweeps: e.sweeps,
            khat_threshold: e.khat,
            ..pollsmc_core::SmcConfig::default()
        },
    }
}
