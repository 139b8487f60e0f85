use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use sivac_cli::commands::{self, FitModel, G2Options};
use sivac_cli::config::RunConfig;
use sivac_cli::{exit_code, UsageError, EXIT_USAGE};

/// Simulate focused-He⁺-beam defect arrays in SiC and recover their yields.
#[derive(Parser, Debug)]
#[command(name = "sivac", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a forward simulation.
    Simulate {
        #[command(subcommand)]
        what: Simulate,
    },
    /// Fit a model to a data file and print the result as JSON.
    Fit(FitArgs),
    /// Detect, classify and count defects in simulated scans; write the yield table.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Directory holding pattern.json and the scans (defaults to --out).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Assemble the transport summary and yield table of a directory into one report.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand, Debug)]
enum Simulate {
    /// Ion transport: depth/lateral profile CSV and summary JSON.
    Transport {
        #[command(flatten)]
        common: Common,
    },
    /// Ground-truth defect arrays and confocal scans for every dose.
    Array {
        #[command(flatten)]
        common: Common,
    },
    /// HBT photon-correlation histogram.
    Hbt {
        #[command(flatten)]
        common: Common,
        /// Also write the first segment's photon timestamps.
        #[arg(long)]
        trace: bool,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (JSON); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of ion histories, overriding the configuration.
    #[arg(long)]
    ions: Option<usize>,
    /// Comma-separated doses in ions/spot, overriding the configuration.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    dose: Option<Vec<f64>>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(n) = self.ions {
            cfg.transport.n_ions = n;
        }
        if let Some(doses) = &self.dose {
            if doses.is_empty() {
                return Err(UsageError("--dose needs at least one value".into()).into());
            }
            cfg.doses = doses.clone();
            if let sivac_cli::config::YieldConfig::PerDose(v) = &cfg.conversion_yield {
                if v.len() != doses.len() {
                    return Err(UsageError("--dose changes the dose count; per-dose yields no longer match".into()).into());
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Model to fit.
    #[arg(value_enum)]
    model: FitModel,
    /// CSV data file (counts file for poisson).
    data: PathBuf,
    /// Signal rate for the g² background correction, kcps.
    #[arg(long, default_value_t = 1.0)]
    signal: f64,
    /// Background rate for the g² background correction, kcps.
    #[arg(long, default_value_t = 0.0)]
    background: f64,
    /// Apply the background correction before the g² fit.
    #[arg(long)]
    correct: bool,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { what } => {
            let files = match what {
                Simulate::Transport { common } => {
                    let cfg = common.config()?;
                    commands::simulate_transport(&cfg, &cfg.output_dir)?
                }
                Simulate::Array { common } => {
                    let cfg = common.config()?;
                    commands::simulate_array(&cfg, &cfg.output_dir)?
                }
                Simulate::Hbt { common, trace } => {
                    let cfg = common.config()?;
                    commands::simulate_hbt(&cfg, &cfg.output_dir, trace)?
                }
            };
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Fit(args) => {
            let json = commands::fit(
                args.model,
                &args.data,
                G2Options {
                    signal_kcps: args.signal,
                    background_kcps: args.background,
                    correct: args.correct,
                },
            )?;
            println!("{}", serde_json::to_string_pretty(&json)?);
        }
        Command::Analyze { common, input } => {
            let cfg = common.config()?;
            let input = input.unwrap_or_else(|| cfg.output_dir.clone());
            let table = commands::analyze(&cfg, &input, &cfg.output_dir)?;
            print!("{}", table.to_text());
        }
        Command::Report { common } => {
            let cfg = common.config()?;
            let report = commands::report(&cfg, &cfg.output_dir)?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
