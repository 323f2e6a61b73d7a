use std::net::SocketAddr;
use std::path::PathBuf;

use caae_core::data::Split;
use caae_core::evalkit::Axis;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "caae", version, about = "Edit facial expressions by valence and arousal")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NetworkPreset {
    /// Full-size networks.
    Full,
    /// Reduced filter counts at 96×96 for CPU training.
    Desk,
    /// Tiny 16×16 networks for smoke tests.
    Probe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassifierPreset {
    /// Full-width reference stack.
    Reference,
    /// Narrower layers for CPU training.
    Desk,
}

fn unit_interval(s: &str) -> Result<f32, String> {
    let v: f32 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v.is_finite() && (-1.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err("must be within [-1, 1]".into())
    }
}

fn grid_size(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if (2..=15).contains(&n) => Ok(n),
        _ => Err("must be an integer in [2, 15]".into()),
    }
}

fn threshold(s: &str) -> Result<f32, String> {
    match s.parse::<f32>() {
        Ok(t) if t > 0.0 && t <= 1.0 => Ok(t),
        _ => Err("must be within (0, 1]".into()),
    }
}

#[derive(Debug, clap::Args)]
pub struct ManifestArgs {
    /// Manifest listing images and labels.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory image paths are relative to; defaults to the manifest's.
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// Use only records of this split.
    #[arg(long)]
    pub split: Option<Split>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a labeled synthetic face dataset.
    SynthData {
        #[arg(long, default_value_t = 5000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the autoencoder and its discriminators.
    Train {
        #[command(flatten)]
        data: ManifestArgs,
        /// Output directory for checkpoints and the loss log.
        #[arg(long)]
        out: PathBuf,
        /// JSON training configuration; overrides --preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = NetworkPreset::Desk)]
        preset: NetworkPreset,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many total steps.
        #[arg(long)]
        stop_after: Option<u64>,
        /// Print a loss line every this many steps (0 = never).
        #[arg(long, default_value_t = 50)]
        log_every: u64,
    },
    /// Edit one face to a target valence and arousal.
    Edit {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_parser = unit_interval, allow_negative_numbers = true)]
        valence: f32,
        #[arg(long, value_parser = unit_interval, allow_negative_numbers = true)]
        arousal: f32,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write a montage of edits over the whole label square instead;
        /// valence falls top to bottom, arousal left to right.
        #[arg(long)]
        grid: bool,
        #[arg(long, value_parser = grid_size, default_value = "7")]
        grid_size: usize,
    },
    /// Rate edits of every source to every grid label and score them.
    EvalQuant {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: ManifestArgs,
        /// Rate with the analytic reader of synthetic faces.
        #[arg(long, conflicts_with_all = ["valence_classifier", "arousal_classifier"])]
        oracle: bool,
        #[arg(long, requires = "arousal_classifier")]
        valence_classifier: Option<PathBuf>,
        #[arg(long, requires = "valence_classifier")]
        arousal_classifier: Option<PathBuf>,
        #[arg(long, value_parser = grid_size, default_value = "7")]
        grid_size: usize,
        /// Labels with both magnitudes at least this are extreme.
        #[arg(long, value_parser = threshold, default_value = "0.9")]
        threshold: f32,
        /// Use at most this many source images.
        #[arg(long)]
        limit: Option<usize>,
        /// JSON report path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate difference heatmaps against neutral edits.
    EvalQual {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: ManifestArgs,
        #[arg(long, value_parser = grid_size, default_value = "7")]
        grid_size: usize,
        #[arg(long, default_value_t = 200)]
        limit: usize,
        /// Report the share of change inside the synthetic renderer's
        /// mouth and eye regions.
        #[arg(long)]
        synthetic_regions: bool,
        /// Receives heatmap PNGs, montage.png and summary.json.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a valence or arousal regressor for rating edits.
    TrainClassifier {
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[command(flatten)]
        data: ManifestArgs,
        #[arg(long)]
        out: PathBuf,
        /// JSON classifier configuration; overrides --preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ClassifierPreset::Desk)]
        preset: ClassifierPreset,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve edits over HTTP.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// List the tensors stored in a checkpoint or classifier archive.
    InspectCheckpoint {
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    Valence,
    Arousal,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Valence => Axis::Valence,
            AxisArg::Arousal => Axis::Arousal,
        }
    }
}
