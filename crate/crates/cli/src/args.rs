use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Linear motion blur synthesis, blur-parameter regression and blur-field analysis.
#[derive(Debug, Parser, Serialize)]
#[command(name = "blurfield", version, args_override_self = true)]
pub struct Cli {
    /// Directory receiving the frozen config, the log and every relative output path.
    #[arg(long, global = true, default_value = ".")]
    pub run_dir: PathBuf,

    /// Key-value TOML file; keys are long flag names of the chosen subcommand.
    /// Command-line flags override file values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, env = "BLURFIELD_THREADS")]
    pub threads: Option<usize>,

    /// Log at debug level.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Rasterize one blur kernel, or the de-duplicated kernel set of a length/angle grid.
    Kernels(KernelsArgs),
    /// Blur one image uniformly, with a two-region pattern, or with a JSON blur field.
    Blur(BlurArgs),
    /// Write a procedural source-image corpus.
    Corpus(CorpusArgs),
    /// Generate a labeled blurred dataset with a manifest.
    Dataset(DatasetArgs),
    /// Train the regression network on a dataset manifest.
    Train(TrainArgs),
    /// Score a checkpoint on the test split across patch sizes.
    Eval(EvalArgs),
    /// Predict a sliding-window blur field over one image.
    Field(FieldArgs),
    /// Sweep windows across a two-region blur discontinuity.
    Sweep(SweepArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Kernels(_) => "kernels",
            Command::Blur(_) => "blur",
            Command::Corpus(_) => "corpus",
            Command::Dataset(_) => "dataset",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Field(_) => "field",
            Command::Sweep(_) => "sweep",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct KernelsArgs {
    /// Blur length in pixels (single-kernel mode).
    #[arg(long, requires = "phi", conflicts_with = "lengths")]
    pub r: Option<f64>,
    /// Blur angle in degrees (single-kernel mode).
    #[arg(long, requires = "r", allow_hyphen_values = true)]
    pub phi: Option<f64>,
    /// Output text file for a single kernel.
    #[arg(long, default_value = "kernel.txt")]
    pub out: PathBuf,
    /// Also write a 16-bit PNG of a single kernel.
    #[arg(long)]
    pub png: Option<PathBuf>,
    /// Length grid for set mode: `a:b` (inclusive, step 1) or a comma list.
    #[arg(long)]
    pub lengths: Option<String>,
    /// Angle step in degrees for set mode.
    #[arg(long, default_value_t = 1.0)]
    pub angle_step: f64,
    /// Kernels closer than this (max abs weight difference) count as duplicates.
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    /// Output CSV of unique `(r, phi)` pairs for set mode.
    #[arg(long, default_value = "unique_params.csv")]
    pub params_out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BlurArgs {
    /// Sharp input image.
    #[arg(long)]
    pub input: PathBuf,
    /// Blurred output PNG.
    #[arg(long, default_value = "blurred.png")]
    pub out: PathBuf,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub phi: Option<f64>,
    /// Two-region pattern: length-horizontal, length-vertical, angle-horizontal, angle-vertical.
    #[arg(long)]
    pub pattern: Option<String>,
    /// Override the pattern's first (left/top) region as `r,phi`.
    #[arg(long, allow_hyphen_values = true)]
    pub first: Option<String>,
    /// Override the pattern's second (right/bottom) region as `r,phi`.
    #[arg(long, allow_hyphen_values = true)]
    pub second: Option<String>,
    /// First column/row of the second region (default: midline).
    #[arg(long)]
    pub split: Option<usize>,
    /// JSON blur field file.
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Standard deviation of additive Gaussian noise (0 disables noise).
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct CorpusArgs {
    /// Output directory for `synth_NNNNN.png`.
    #[arg(long, default_value = "corpus")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub count: usize,
    /// Image size as `HxW`.
    #[arg(long, default_value = "64x64")]
    pub size: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct DatasetArgs {
    /// Directory of sharp source images (png, jpg).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output dataset directory.
    #[arg(long, default_value = "dataset")]
    pub out: PathBuf,
    /// Largest training patch size; fixes the length label range.
    #[arg(long, default_value_t = 33)]
    pub n_max: usize,
    /// Length grid: `a:b` (inclusive, step 1) or a comma list.
    #[arg(long, default_value = "1:33")]
    pub lengths: String,
    #[arg(long, default_value_t = 1.0)]
    pub angle_step: f64,
    /// Random parameter draws per source image.
    #[arg(long, default_value_t = 1)]
    pub per_image: usize,
    /// Apply every unique parameter pair to every image instead of sampling.
    #[arg(long)]
    pub enumerate_all: bool,
    /// Train/val/test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub split_ratios: String,
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset manifest (`manifest.json`).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Patch size per epoch, cycled.
    #[arg(long, default_value = "29,30,31,32,33")]
    pub patch_schedule: String,
    /// Drop Block 5 (minimum patch size 16 instead of 32).
    #[arg(long)]
    pub no_block5: bool,
    /// Divide every layer width by this (1 = full size).
    #[arg(long, default_value_t = 1)]
    pub width_divisor: usize,
    /// Feed raw samples instead of per-patch standardized ones.
    #[arg(long)]
    pub raw_input: bool,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 1e-12)]
    pub convergence_epsilon: f64,
    #[arg(long, default_value_t = 15)]
    pub patience: usize,
    /// Fixed batches per epoch (default: ceil(admissible records / batch size)).
    #[arg(long)]
    pub batches_per_epoch: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub val_batches: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path; metadata goes to `<out>.json`.
    #[arg(long, default_value = "model.bin")]
    pub out: PathBuf,
    /// Per-epoch loss log.
    #[arg(long, default_value = "train_log.csv")]
    pub log_csv: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "16,29,30,31,32,64")]
    pub patch_sizes: String,
    /// Row label (default: the checkpoint's training schedule).
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output prefix: writes `<out>.csv` and `<out>.txt`.
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FieldArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Image to analyze (already blurred unless `--pattern` is given).
    #[arg(long)]
    pub image: PathBuf,
    /// Blur the image with this two-region pattern first and report the
    /// profile across the split.
    #[arg(long)]
    pub pattern: Option<String>,
    #[arg(long, default_value_t = 31)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Output prefix: `<out>_r.csv`, `<out>_phi.csv`, `<out>_r.png`, `<out>_phi.png`.
    #[arg(long, default_value = "field")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = "angle-horizontal")]
    pub pattern: String,
    #[arg(long, default_value_t = 31)]
    pub n: usize,
    /// Directory of sharp source images.
    #[arg(long)]
    pub images: PathBuf,
    /// Number of source images (sorted by name) to use.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Center-crop sources to `HxW` before blurring.
    #[arg(long)]
    pub size: Option<String>,
    /// Output prefix: `<out>.csv` and `<out>.svg`.
    #[arg(long, default_value = "sweep")]
    pub out: PathBuf,
}
