//! `phaseforge` command-line tool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phaseforge::nn::VariantKind;

#[derive(Debug, Parser)]
#[command(name = "phaseforge", version, about = "Fringe projection phase retrieval toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: Global,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Run configuration (JSON); defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed; also seeds training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_variant)]
    pub variant: Option<VariantKind>,
    /// Comma-separated ladder frequencies, lowest first.
    #[arg(long, global = true, value_delimiter = ',')]
    pub ladder: Option<Vec<f64>>,
    /// Phase steps per fringe set.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Fringe frequency of the input or of the calculation network.
    #[arg(long, global = true)]
    pub freq: Option<f64>,
    /// Use the classical chain instead of trained networks.
    #[arg(long, global = true)]
    pub classical: bool,
    /// Checkpoint (calculation network for run-e2e).
    #[arg(long, global = true)]
    pub weights: Option<PathBuf>,
    /// Second checkpoint (unwrapping network for run-e2e).
    #[arg(long, global = true)]
    pub weights2: Option<PathBuf>,
    /// Input raster or fringe directory; repeat for a second input.
    #[arg(long, global = true)]
    pub input: Vec<PathBuf>,
    /// Dataset root (overrides `dataset.path`).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated dataset tree with a checksummed manifest.
    GenData,
    /// Train the configured network variant on a dataset.
    Train,
    /// Transform input fringes with a trained network.
    Infer,
    /// Wrapped phase of one fringe set.
    Phase,
    /// Temporal unwrapping over a frequency ladder.
    Unwrap,
    /// Height from an absolute phase raster.
    Height,
    /// Compare predictions with ground truth, or score a network on a test split.
    Eval,
    /// End-to-end retrieval, classical or learned.
    RunE2e,
    /// Print the resolved configuration (or normalize a report/manifest).
    ShowConfig,
}

fn parse_variant(s: &str) -> Result<VariantKind, String> {
    s.parse().map_err(|e: phaseforge::Error| e.to_string())
}

fn configure_threads() -> Result<(), commands::Failure> {
    let Ok(value) = std::env::var("PHASEFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| commands::Failure::Usage(format!("PHASEFORGE_THREADS must be an integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global()
        .map_err(|e| commands::Failure::Usage(format!("cannot configure threads: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return commands::Failure::Usage(e.to_string().trim().to_string()).report();
        }
    };
    let result = configure_threads().and_then(|_| commands::dispatch(&cli));
    match result {
        Ok(summary) => {
            use std::io::Write;
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            // a closed stdout (e.g. `| head`) is not a failure of the command
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(failure) => failure.report(),
    }
}
