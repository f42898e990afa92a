//! `oversub`: generate traces, train the learner, evaluate and compare policies.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "oversub", version, about = "Cloud CPU oversubscription experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to the config's `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated seeds overriding the config.
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic trace as vms.csv and usage.csv.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train one learner per seed.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training episodes per seed.
        #[arg(long)]
        episodes: Option<usize>,
        /// Safety preference α.
        #[arg(long)]
        alpha: Option<f64>,
        /// Also write SVG training curves.
        #[arg(long)]
        plots: bool,
    },
    /// Evaluate policies and write one report per policy and seed.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// grid:<rate> | ma:<window> | sl | c2marl:<checkpoint>
        #[arg(long = "policy", required = true)]
        policies: Vec<String>,
        /// Evaluation episodes per seed.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate several policies on identical seeds and tabulate them.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long = "policy", required = true)]
        policies: Vec<String>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Also write SVG bar charts.
        #[arg(long)]
        plots: bool,
    },
}

/// Exit status when a run completed but some evaluated VM could not be placed.
const EXIT_DROPS: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OVERSUB_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { common } => commands::generate(&common),
        Command::Train {
            common,
            episodes,
            alpha,
            plots,
        } => commands::train(&common, episodes, alpha, plots),
        Command::Evaluate {
            common,
            policies,
            episodes,
        } => commands::evaluate(&common, &policies, episodes),
        Command::Compare {
            common,
            policies,
            episodes,
            plots,
        } => commands::compare(&common, &policies, episodes, plots),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(drops) => {
            log::error!("{drops} VM placements were dropped");
            ExitCode::from(EXIT_DROPS)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
