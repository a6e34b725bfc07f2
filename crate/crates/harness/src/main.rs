use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rtinv_harness::{execute, Command, HarnessError, Overrides, RunOptions, Scenario};

#[derive(Parser, Debug)]
#[command(name = "rtinv", version, about = "Transport simulation, boundary control and single-measurement reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Output directory; overrides the scenario's.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Noise seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Relative Gramian shift override for every control solve.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Horizon override in units of the domain diameter.
    #[arg(long = "tau-factor", global = true)]
    tau_factor: Option<f64>,
    /// Print nothing but errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug, Clone)]
enum Sub {
    /// Forward solve of the true experiment; writes the outflow traces.
    Simulate,
    /// Minimum-norm control steering to the scenario's initial state.
    Control,
    /// Assemble and solve the linear problem.
    InvertLinear,
    /// Outer iteration for absorption and initial state.
    InvertNonlinear,
    /// Run the acceptance battery.
    Validate {
        /// Comma-separated criterion numbers (default: all).
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<usize>>,
    },
    /// Smallness and illumination report.
    ConditionCheck,
    /// Stability-constant estimates over the scenario's perturbation ladder.
    StabilityProbe,
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let path = cli.scenario.ok_or_else(|| HarnessError::scenario("--scenario PATH is required"))?;
    let mut scenario = Scenario::load(&path)?;
    scenario.apply(&Overrides { seed: cli.seed, epsilon: cli.epsilon, tau_factor: cli.tau_factor })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| HarnessError::scenario(format!("thread pool: {e}")))?;
    let mut opts = RunOptions { out: cli.out, quiet: cli.quiet, ..RunOptions::default() };
    let cmd = match cli.command {
        Sub::Simulate => Command::Simulate,
        Sub::Control => Command::Control,
        Sub::InvertLinear => Command::InvertLinear,
        Sub::InvertNonlinear => Command::InvertNonlinear,
        Sub::Validate { criteria } => {
            if let Some(c) = criteria {
                opts.criteria = c;
            }
            Command::Validate
        }
        Sub::ConditionCheck => Command::ConditionCheck,
        Sub::StabilityProbe => Command::StabilityProbe,
    };
    execute(cmd, &scenario, &opts)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Error } else { log::LevelFilter::Warn })
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rtinv: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
