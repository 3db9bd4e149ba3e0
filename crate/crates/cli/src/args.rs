use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use detkit::augment::{ComposeMode, Selection};
use detkit::simdet::NoiseProfile;
use detkit::{SuppressionConfig, SuppressionMethod};

#[derive(Debug, Parser)]
#[command(
    name = "detkit",
    version,
    about = "Detection augmentation, fusion and evaluation toolkit"
)]
pub struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// TOML configuration file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log more (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate stitcher / mosaic composites and their annotations.
    Augment(AugmentArgs),
    /// Render one composite with its boxes outlined.
    Preview(PreviewArgs),
    /// Produce synthetic detections from ground truth.
    Simulate(SimulateArgs),
    /// Apply NMS, Soft-NMS or TkV to a result file.
    Suppress(SuppressArgs),
    /// Merge per-scale result files into original coordinates.
    FuseScales(FuseArgs),
    /// Merge result files from several models.
    Ensemble(EnsembleArgs),
    /// COCO metrics of a result file.
    Evaluate(EvaluateArgs),
    /// Simulate, fuse, ensemble and evaluate in one run.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Stitcher,
    Mosaic,
    Mixed,
}

impl From<ModeArg> for ComposeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Stitcher => ComposeMode::Stitcher,
            ModeArg::Mosaic => ComposeMode::Mosaic,
            ModeArg::Mixed => ComposeMode::Mixed,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SelectionArg {
    Random,
    Supercategory,
}

impl From<SelectionArg> for Selection {
    fn from(s: SelectionArg) -> Self {
        match s {
            SelectionArg::Random => Selection::Random,
            SelectionArg::Supercategory => Selection::Supercategory,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Hard,
    SoftLinear,
    SoftGaussian,
    Tkv,
}

impl From<MethodArg> for SuppressionMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Hard => SuppressionMethod::Hard,
            MethodArg::SoftLinear => SuppressionMethod::SoftLinear,
            MethodArg::SoftGaussian => SuppressionMethod::SoftGaussian,
            MethodArg::Tkv => SuppressionMethod::Tkv,
        }
    }
}

/// Composite layout flags shared by `augment` and `preview`.
#[derive(Debug, Args)]
pub struct ComposeFlags {
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub selection: Option<SelectionArg>,
    /// Fixed canvas as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_canvas)]
    pub canvas: Option<(u32, u32)>,
    #[arg(long)]
    pub min_visible_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Directory holding the source images by file name. Without it, flat
    /// stand-in images are drawn from the annotations.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Output directory for the annotation file and composites.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Write only the annotation document.
    #[arg(long)]
    pub annotations_only: bool,
    #[command(flatten)]
    pub compose: ComposeFlags,
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Composite index to render.
    #[arg(long, default_value_t = 0)]
    pub index: u64,
    #[command(flatten)]
    pub compose: ComposeFlags,
}

#[derive(Debug, Args)]
pub struct NoiseFlags {
    /// jitter,miss_rate,fp_rate,score_noise
    #[arg(long, value_parser = parse_profile)]
    pub profile: Option<[f64; 4]>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub miss_rate: Option<f64>,
    #[arg(long)]
    pub fp_rate: Option<f64>,
    #[arg(long)]
    pub score_noise: Option<f64>,
}

impl NoiseFlags {
    pub fn apply(&self, mut p: NoiseProfile) -> NoiseProfile {
        if let Some([j, m, f, s]) = self.profile {
            p.jitter_sigma = j;
            p.miss_rate = m;
            p.fp_rate = f;
            p.score_noise = s;
        }
        p.jitter_sigma = self.jitter.unwrap_or(p.jitter_sigma);
        p.miss_rate = self.miss_rate.unwrap_or(p.miss_rate);
        p.fp_rate = self.fp_rate.unwrap_or(p.fp_rate);
        p.score_noise = self.score_noise.unwrap_or(p.score_noise);
        p
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub noise: NoiseFlags,
    /// Simulate on images resized to this shorter edge; boxes are written
    /// in resized coordinates.
    #[arg(long)]
    pub scale: Option<u32>,
    #[arg(long, default_value_t = 1333)]
    pub longer_cap: u32,
    /// Mirror the (resized) images horizontally.
    #[arg(long)]
    pub flipped: bool,
}

#[derive(Debug, Args)]
pub struct SuppressionFlags {
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub score_floor: Option<f64>,
    #[arg(long)]
    pub max_per_image: Option<usize>,
}

impl SuppressionFlags {
    pub fn apply(&self, mut c: SuppressionConfig) -> SuppressionConfig {
        if let Some(m) = self.method {
            c.method = m.into();
        }
        c.iou_threshold = self.iou_threshold.unwrap_or(c.iou_threshold);
        c.sigma = self.sigma.unwrap_or(c.sigma);
        c.k = self.k.unwrap_or(c.k);
        c.score_floor = self.score_floor.unwrap_or(c.score_floor);
        c.max_per_image = self.max_per_image.unwrap_or(c.max_per_image);
        c
    }
}

#[derive(Debug, Args)]
pub struct SuppressArgs {
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub dets: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub suppression: SuppressionFlags,
}

/// Each `--dets` file is tagged by the `--scale` (and optional `--flipped`)
/// that follows it.
#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, required = true, action = clap::ArgAction::Append)]
    pub dets: Vec<PathBuf>,
    #[arg(long, required = true, action = clap::ArgAction::Append)]
    pub scale: Vec<u32>,
    #[arg(long, action = clap::ArgAction::Count)]
    pub flipped: u8,
    #[arg(long, default_value_t = 1333)]
    pub longer_cap: u32,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub suppression: SuppressionFlags,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, required = true, action = clap::ArgAction::Append)]
    pub dets: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub suppression: SuppressionFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub dets: PathBuf,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub detectors: Option<usize>,
    /// Comma-separated shorter-edge sizes.
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<u32>>,
    #[arg(long)]
    pub flip: bool,
    #[arg(long)]
    pub augment_count: Option<usize>,
    #[command(flatten)]
    pub noise: NoiseFlags,
}

fn parse_canvas(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let w = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    let h = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    Ok((w, h))
}

fn parse_profile(s: &str) -> Result<[f64; 4], String> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<_, _>>()?;
    vals.try_into()
        .map_err(|_| "expected four values: jitter,miss_rate,fp_rate,score_noise".to_string())
}
