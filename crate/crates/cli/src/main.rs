//! `cliplab`: run, validate and list the synthetic contrastive-learning
//! experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cliplab::experiments::{run_experiment, ExperimentConfig, ExperimentId};
use cliplab::{par, Error};

#[derive(Parser)]
#[command(name = "cliplab", version, about = "Seeded contrastive-learning experiments on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads. Runs are sequential unless this is above 1;
        /// outputs are identical either way.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Check a config and report every violation.
    Validate { config: PathBuf },
    /// List the available experiments.
    ListExperiments,
    /// Print the fully resolved default config of an experiment.
    DefaultConfig {
        experiment: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Io { .. } | Error::InvalidArgument { .. } => EXIT_CONFIG,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_OTHER,
    }
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    ExperimentConfig::from_toml(&text)
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(&e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListExperiments => {
            for id in ExperimentId::ALL {
                println!("{:<20} {}", id.name(), id.description());
            }
            ExitCode::SUCCESS
        }
        Command::DefaultConfig { experiment, seed } => match ExperimentId::parse(&experiment) {
            Some(id) => match ExperimentConfig::new(id, seed).resolved().to_toml() {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            },
            None => {
                eprintln!("error: unknown experiment `{experiment}`; see `cliplab list-experiments`");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::Validate { config } => match load(&config).and_then(|c| c.validate().map(|_| c)) {
            Ok(c) => {
                println!("{}: ok ({}, hash {})", config.display(), c.experiment, c.hash());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Run {
            config,
            seed,
            out,
            threads,
        } => {
            let mut cfg = match load(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            if seed.is_some() {
                cfg.seed = seed;
            }
            if out.is_some() {
                cfg.output_dir = out;
            }
            if threads > 1 {
                if let Err(e) = par::init_threads(threads) {
                    eprintln!("error: cannot start thread pool: {e}");
                    return ExitCode::from(EXIT_OTHER);
                }
                par::set_mode(par::Mode::Parallel);
            } else {
                par::set_mode(par::Mode::Sequential);
            }
            match run_experiment(&cfg) {
                Ok(run) => {
                    println!(
                        "{} finished: {} files in {} (config hash {})",
                        run.manifest.experiment,
                        run.manifest.files.len() + 1,
                        run.dir.display(),
                        run.manifest.config_hash
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
    }
}
