use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{self, CliError, Outcome, Overrides, Settings, EXIT_OK};
use crate::config::{parse_counts, parse_vector, ConfigError, RunConfig};

// Aliases keep clap from treating each list as a repeated flag.
type Vector = Vec<f64>;
type Counts = Vec<usize>;

#[derive(Debug, Parser)]
#[command(name = "nhj", version, about = "Projected Hamilton-Jacobi solver for constrained mechanics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the terminal-value problem; write field slices and residuals.
    Solve(RunArgs),
    /// Integrate the value-function flow and the d'Alembert oracle.
    Simulate(RunArgs),
    /// Check that the flow minimizes the action against perturbations.
    Audit(RunArgs),
    /// Solve at two resolutions and report the residual order.
    Convergence(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration, `-` for standard input.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Initial point, comma separated.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    pub x0: Option<Vector>,
    /// Launch velocity of the d'Alembert run, comma separated.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    pub v0: Option<Vector>,
    /// Cells per axis, comma separated.
    #[arg(long, value_parser = parse_counts)]
    pub grid: Option<Counts>,
    /// Time steps of the grid solve.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Steps of every trajectory integration.
    #[arg(long)]
    pub trajectory_steps: Option<usize>,
    #[arg(long)]
    pub perturbations: Option<usize>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Absolute and relative slack of the minimality check.
    #[arg(long)]
    pub slack: Option<f64>,
    /// Worker threads of the grid solver.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Use a field written by `solve --save-field` instead of solving.
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Also write the whole solved field as `field.bin`.
    #[arg(long)]
    pub save_field: bool,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            x0: self.x0.clone(),
            v0: self.v0.clone(),
            grid: self.grid.clone(),
            steps: self.steps,
            trajectory_steps: self.trajectory_steps,
            perturbations: self.perturbations,
            amplitude: self.amplitude,
            seed: self.seed,
            slack: self.slack,
            field: self.field.clone(),
            save_field: self.save_field,
        }
    }
}

fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(t) = threads {
        if t == 0 {
            return Err(ConfigError::Invalid("--threads must be positive".into()).into());
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(())
}

type Pipeline = fn(&Settings) -> Result<Outcome, CliError>;

/// Runs one subcommand and returns its outcome.
pub fn execute(command: &Command) -> Result<Outcome, CliError> {
    let (args, pipeline): (&RunArgs, Pipeline) = match command {
        Command::Solve(a) => (a, commands::solve),
        Command::Simulate(a) => (a, commands::simulate),
        Command::Audit(a) => (a, commands::audit),
        Command::Convergence(a) => (a, commands::convergence),
    };
    configure_threads(args.threads)?;
    let config = RunConfig::load(&args.config)?;
    let settings = Settings::resolve(&config, &args.overrides(), &args.out)?;
    pipeline(&settings)
}

/// Parses the process arguments, runs, reports, and returns the exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            if !outcome.summary.ends_with('\n') {
                println!();
            }
            for a in &outcome.artifacts {
                println!("wrote {}", a.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
