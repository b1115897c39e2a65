mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use idcn_core::trainer::QualitySpec;

/// JPEG artifact reduction: degrade, analyse, train, restore and evaluate.
#[derive(Debug, Parser)]
#[command(name = "idcn", version)]
pub struct Cli {
    /// Random seed; training falls back to the config file's seed, then a fixed default.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for per-file work (0 = all cores).
    #[arg(long, global = true, env = "IDCN_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct QualityArgs {
    /// A single JPEG quality in 1..=100.
    #[arg(long, short = 'q', conflicts_with = "quality_range")]
    pub quality: Option<u32>,

    /// An inclusive quality range, `lo:hi`.
    #[arg(long, value_parser = parse_range)]
    pub quality_range: Option<QualitySpec>,
}

impl QualityArgs {
    pub fn spec(&self) -> Option<QualitySpec> {
        self.quality.map(QualitySpec::Fixed).or(self.quality_range)
    }
}

fn parse_range(s: &str) -> Result<QualitySpec, String> {
    match s.parse::<QualitySpec>() {
        Ok(r @ QualitySpec::Range(..)) => Ok(r),
        Ok(_) => Err("expected `lo:hi`".into()),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the luma and chroma quantization tables for a quality.
    Tables {
        #[arg(long, short = 'q')]
        quality: u32,
    },
    /// JPEG-degrade every image in a directory and write a manifest.
    Degrade {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        quality: QualityArgs,
    },
    /// Estimate compression-error standard-deviation grids from a corpus.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, short = 'q')]
        quality: u32,
    },
    /// Write the 64×64 translation kernels for a quality.
    Kernel {
        #[arg(long, short = 'q')]
        quality: u32,
        #[arg(long)]
        out: PathBuf,
        /// Byte-range kernels instead of unit-range ones.
        #[arg(long)]
        byte_range: bool,
    },
    /// Train a fixed-quality (or range) model.
    Train(TrainArgs),
    /// Train a flexible model over a quality range with multi-channel labels.
    TrainFlexible(TrainArgs),
    /// Restore degraded images with trained weights.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, short = 'q')]
        quality: Option<u32>,
        /// Degrade manifest giving a quality per file; overrides --quality.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Compare test images with clean references by filename stem.
    Eval {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Quality recorded in the CSV.
        #[arg(long, short = 'q')]
        quality: Option<u32>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean DCT coefficient-loss spectra of a trained model.
    Spectrum {
        #[arg(long)]
        weights: PathBuf,
        /// Clean images; they are degraded at the given quality.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, short = 'q')]
        quality: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic natural-looking corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
    },
    /// Finite-difference gradient checks of every op and a micro network.
    Gradcheck,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Key-value file with model and training keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training images.
    #[arg(long)]
    pub train: PathBuf,
    /// Validation images.
    #[arg(long)]
    pub val: PathBuf,
    /// Output directory for weights and history.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a weight file.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[command(flatten)]
    pub quality: QualityArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
