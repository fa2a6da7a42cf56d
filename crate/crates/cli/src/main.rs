use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

use commands::{Outcome, Failure};

#[derive(Parser)]
#[command(name = "antipassive", about = "Passivity certificates, destabilizers and game dynamics simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify passivity and δ-passivity of a state-space system.
    Analyze {
        #[arg(long)]
        system: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Build a passive system that destabilizes a stable non-passive plant.
    Destabilize {
        #[arg(long)]
        system: PathBuf,
        /// Where to write the destabilizer R.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the construction report.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        json: bool,
    },
    /// Check a game: stable-game test for `{"payoff_matrix": ...}`, both
    /// passivity orientations for a higher-order game.
    CheckGame {
        #[arg(long)]
        game: PathBuf,
        /// Simplex samples (static game) or frequency points (higher-order game).
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Linearize a second-order dynamic at an interior rest point.
    Linearize {
        #[arg(long)]
        dynamics: String,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value = "paper")]
        mode: String,
        /// Rest point; uniform when omitted.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        xstar: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reduce a linearization to tangent coordinates.
    Reduce {
        #[arg(long)]
        lin: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one scenario and write its trajectory, simplex and report files.
    Simulate {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[command(flatten)]
        integrator: IntegratorArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long)]
        json: bool,
    },
    /// Regenerate scenario bundles.
    Reproduce {
        /// Run every scenario.
        #[arg(long, conflicts_with = "scenario")]
        all: bool,
        #[arg(long, required_unless_present = "all")]
        scenario: Vec<String>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[command(flatten)]
        integrator: IntegratorArgs,
        #[arg(long)]
        json: bool,
    },
    /// Storage balance of the first-order replicator with rock-paper-scissors
    /// under repeated step halving.
    LosslessCheck {
        #[arg(long, default_value_t = 0.005)]
        dt: f64,
        #[arg(long = "t-end", default_value_t = 50.0)]
        t_end: f64,
        #[arg(long, default_value_t = 2)]
        halvings: u32,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Print the version.
    Version,
}

#[derive(Args)]
struct GridArgs {
    /// Frequency grid size; overrides ANTIPASSIVE_GRID_POINTS.
    #[arg(long)]
    grid_points: Option<usize>,
}

#[derive(Args)]
struct OutputArgs {
    /// Print the machine-readable result on stdout.
    #[arg(long)]
    json: bool,
    /// Also write the result to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Rk4,
    Rk45,
}

#[derive(Args)]
struct IntegratorArgs {
    #[arg(long, value_enum, default_value = "rk4")]
    method: MethodArg,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    #[arg(long)]
    record_stride: Option<usize>,
}

fn run(cli: Cli) -> Result<Outcome, Failure> {
    match cli.command {
        Command::Analyze { system, grid, output } => {
            commands::analyze(&system, &commands::grid(grid.grid_points)?, output.json, output.out.as_deref())
        }
        Command::Destabilize {
            system,
            out,
            report,
            grid,
            json,
        } => commands::destabilize(
            &system,
            out.as_deref(),
            report.as_deref(),
            &commands::grid(grid.grid_points)?,
            json,
        ),
        Command::CheckGame {
            game,
            samples,
            seed,
            output,
        } => commands::check_game(&game, samples, seed, output.json, output.out.as_deref()),
        Command::Linearize {
            dynamics,
            m,
            mode,
            xstar,
            out,
        } => commands::linearize(&dynamics, m, &mode, xstar, out.as_deref()),
        Command::Reduce { lin, out } => commands::reduce(&lin, out.as_deref()),
        Command::Simulate {
            scenario,
            out_dir,
            integrator,
            x0,
            json,
        } => commands::simulate(&scenario, &out_dir, &integrator.config()?, x0, json),
        Command::Reproduce {
            all,
            scenario,
            out_dir,
            integrator,
            json,
        } => {
            let names = if all { Vec::new() } else { scenario };
            commands::reproduce(&names, &out_dir, &integrator.config()?, json)
        }
        Command::LosslessCheck {
            dt,
            t_end,
            halvings,
            output,
        } => commands::lossless_check(dt, t_end, halvings, output.json, output.out.as_deref()),
        Command::Version => {
            println!("antipassive {}", env!("CARGO_PKG_VERSION"));
            Ok(Outcome::Success)
        }
    }
}

impl IntegratorArgs {
    fn config(&self) -> Result<antipassive::sim::IntegratorConfig, Failure> {
        use antipassive::sim::{IntegratorConfig, Method};
        let base = IntegratorConfig::default();
        let cfg = IntegratorConfig {
            method: match self.method {
                MethodArg::Rk4 => Method::FixedRk4,
                MethodArg::Rk45 => Method::AdaptiveRk45,
            },
            dt: self.dt.unwrap_or(base.dt),
            tolerance: self.tolerance.unwrap_or(base.tolerance),
            t_end: self.t_end.unwrap_or(base.t_end),
            record_stride: self.record_stride.unwrap_or(base.record_stride),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => ExitCode::from(outcome.code()),
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code())
        }
    }
}
