use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use latent_bandits::cli;

#[derive(Parser)]
#[command(name = "latent-bandits", version, about = "Latent bandit experiments")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic multi-armed experiments.
    Synth {
        #[command(subcommand)]
        action: SynthAction,
    },
    /// MovieLens-derived contextual experiments.
    Movielens {
        #[command(subcommand)]
        action: MovielensAction,
    },
}

#[derive(Subcommand)]
enum SynthAction {
    /// Run the configured policies and write runs.csv and aggregate.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Subcommand)]
enum MovielensAction {
    /// Ingest, factor and cluster ratings into an instance bundle.
    Prepare {
        #[arg(long)]
        config: PathBuf,
        /// Bundle file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ratings: Option<PathBuf>,
        #[arg(long)]
        movies: Option<PathBuf>,
    },
    /// Evaluate the configured policies on sampled users.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let outcome = match args.command {
        Command::Synth {
            action:
                SynthAction::Run {
                    config,
                    out,
                    seed,
                    threads,
                },
        } => cli::synth_run(
            &config,
            &out,
            seed,
            threads.unwrap_or_else(cli::default_threads),
        )
        .map(|_| ()),
        Command::Movielens {
            action:
                MovielensAction::Prepare {
                    config,
                    out,
                    ratings,
                    movies,
                },
        } => cli::movielens_prepare(&config, &out, ratings, movies).map(|_| ()),
        Command::Movielens {
            action:
                MovielensAction::Run {
                    config,
                    bundle,
                    out,
                    seed,
                    threads,
                },
        } => cli::movielens_run(
            &config,
            bundle,
            &out,
            seed,
            threads.unwrap_or_else(cli::default_threads),
        )
        .map(|_| ()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
