//! `treadmatch`: prepare data, train, index, query, evaluate and serve.
//!
//! Exit codes: 0 success, 1 validation error (bad config, flags or inputs),
//! 2 runtime error. Errors go to stderr as `ERROR <code>: <message>`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "treadmatch", version, about = "Partial shoeprint to tread depth map retrieval")]
struct Cli {
    /// TOML or JSON config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice (defaults to training.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Modality {
    Depth,
    Print,
}

#[derive(Args, Debug)]
struct MaskingFlags {
    /// Score over the full feature grid instead of the mask's cells.
    #[arg(long)]
    no_feature_masking: bool,
    /// Encode the query print without zeroing pixels outside the mask.
    #[arg(long)]
    no_query_print_masking: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build an aligned dataset and manifest (synthetic or from raw pairs).
    Prepare {
        /// Generate a synthetic dataset sized by the dataset config section.
        #[arg(long, conflicts_with = "manifest")]
        synthetic: bool,
        /// Manifest of raw, unaligned depth/print pairs.
        #[arg(long, required_unless_present = "synthetic")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        fraction_unseen: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a contact sheet: clean | occluded | erased | noised | composite.
    AugmentPreview {
        #[arg(long)]
        manifest: PathBuf,
        /// Instance to preview (first entry when omitted).
        #[arg(long)]
        instance: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the encoder; writes encoder.ckpt and loss.csv under --out.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, value_enum)]
        modality: Option<Modality>,
        /// Train without print degradations.
        #[arg(long)]
        no_augment: bool,
        #[arg(long)]
        no_feature_masking: bool,
    },
    /// Encode every reference entry into a feature index file.
    BuildIndex {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        modality: Option<Modality>,
    },
    /// Rank shoe models for one aligned query print.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Aligned query print PNG in the canonical frame.
        #[arg(long)]
        print: PathBuf,
        /// Mask PNG, or a rectangle "x,y,w,h" in canonical pixels (default: full frame).
        #[arg(long)]
        mask: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        query_id: Option<String>,
        /// Write the result JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        masking: MaskingFlags,
    },
    /// Simulate degraded, masked queries from a manifest and score them.
    Evaluate {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 2)]
        queries_per_instance: usize,
        /// Visible area range of the random rectangle masks, "lo,hi".
        #[arg(long, default_value = "0.4,1.0")]
        mask_area: String,
        /// Use clean prints as queries.
        #[arg(long)]
        no_query_augment: bool,
        /// Report JSON path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-query rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        masking: MaskingFlags,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Manifest whose images `/api/images` serves.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

/// Error carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CRISP_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("ERROR 1: {}", e.to_string().trim_end());
            return ExitCode::from(1);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ERROR {}: {}", e.code(), e.message());
            ExitCode::from(e.code())
        }
    }
}
