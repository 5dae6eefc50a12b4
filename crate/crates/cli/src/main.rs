use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use conc_lab::config::ScenarioConfig;
use conc_lab::{run_scenario, scenarios, ExitClass, RunError, RunOptions, Stage};

#[derive(Parser)]
#[command(name = "conc-lab", version, about = "Concentrating solutions by Lyapunov-Schmidt reduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Shoot the radial ground state and write its profile.
    GroundState(Common),
    /// Tabulate Γ over the search box and locate its critical points.
    GammaScan(Common),
    /// Evaluate the reduction at the probe point for every eps.
    Reduce(Common),
    /// Full Newton solve started from the reduced ansatz.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Defaults to the smallest eps of the scenario.
        #[arg(long)]
        eps: Option<f64>,
        /// Rescaled point, comma separated; defaults to the probe point.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        xi: Option<Vec<f64>>,
    },
    /// Concentration sweep and multiplicity scan.
    Sweep(Common),
    /// The full scenario: every stage plus the acceptance rules.
    Run(Common),
    /// Print a bundled scenario as JSON.
    Scenario {
        /// One of the bundled scenario names.
        name: String,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    config: Option<PathBuf>,
    /// Bundled scenario name instead of a file.
    #[arg(long)]
    scenario: Option<String>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for multistart searches; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, env = "CONC_LAB_THREADS")]
    threads: Option<usize>,
    /// Also write solution fields in the binary field format.
    #[arg(long)]
    dump_fields: bool,
}

impl Common {
    fn load(&self) -> Result<ScenarioConfig, RunError> {
        match (&self.config, &self.scenario) {
            (Some(path), _) => ScenarioConfig::load(path),
            (None, Some(name)) => scenarios::bundled(name).ok_or_else(|| unknown_scenario(name)),
            (None, None) => Err(RunError::new(ExitClass::Config, "config", "no scenario given".into())),
        }
    }

    fn options(&self, stage: Stage) -> RunOptions {
        RunOptions {
            out_dir: self.out.clone(),
            seed: self.seed,
            dump_fields: self.dump_fields,
            ..RunOptions::new(stage)
        }
    }
}

fn unknown_scenario(name: &str) -> RunError {
    RunError::new(
        ExitClass::Config,
        "config",
        format!("unknown scenario {name:?}; bundled: {}", scenarios::NAMES.join(", ")),
    )
}

/// Runs the pipeline and reports; the returned class is the process exit status.
fn execute(common: &Common, options: RunOptions) -> Result<ExitClass, RunError> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| RunError::new(ExitClass::Config, "setup", e.to_string()))?;
    }
    let config = common.load()?;
    let summary = run_scenario(&config, &options)?;
    for rule in &summary.rules {
        println!("{:<20} {}  {}", rule.rule, if rule.passed { "PASS" } else { "FAIL" }, rule.detail);
    }
    println!("artifacts in {}", summary.out_dir.display());
    if let Some(message) = &summary.error {
        eprintln!("conc-lab: {message}");
    }
    Ok(summary.exit_class)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GroundState(c) => execute(c, c.options(Stage::GroundState)),
        Command::GammaScan(c) => execute(c, c.options(Stage::GammaScan)),
        Command::Reduce(c) => execute(c, c.options(Stage::Reduce)),
        Command::Solve { common, eps, xi } => {
            let options = RunOptions {
                solve_eps: *eps,
                solve_xi: xi.clone(),
                ..common.options(Stage::Solve)
            };
            execute(common, options)
        }
        Command::Sweep(c) => execute(c, c.options(Stage::Sweep)),
        Command::Run(c) => execute(c, c.options(Stage::Run)),
        Command::Scenario { name } => match scenarios::bundled(name) {
            Some(config) => {
                println!("{}", config.to_json());
                Ok(ExitClass::Success)
            }
            None => Err(unknown_scenario(name)),
        },
    };
    match result {
        Ok(class) => ExitCode::from(class.code() as u8),
        Err(e) => {
            eprintln!("conc-lab: {e}");
            ExitCode::from(e.class.code() as u8)
        }
    }
}
