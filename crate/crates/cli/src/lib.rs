//! The `b2n` command line.
//!
//! [`run`] parses arguments, runs one subcommand and maps the outcome to an
//! exit code: 0 on success, 1 for usage errors, 2 when a stage fails.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod external;
mod pipeline;
mod synth;

pub use pipeline::PipelineConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_STAGE: i32 = 2;

/// A failure tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: anyhow::Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {}: {:#}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T, E: Into<anyhow::Error>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|e| StageError { stage, error: e.into() })
    }
}

#[derive(Debug, Parser)]
#[command(name = "b2n", version, about = "Broad-to-narrow hierarchical detection toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreArg {
    #[value(name = "s_d", alias = "detector")]
    Detector,
    #[value(name = "s_c", alias = "classifier")]
    Classifier,
    Fused,
}

impl From<ScoreArg> for b2n_core::ScoreKey {
    fn from(s: ScoreArg) -> Self {
        match s {
            ScoreArg::Detector => Self::Detector,
            ScoreArg::Classifier => Self::Classifier,
            ScoreArg::Fused => Self::Fused,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RepMode {
    Laplacian,
    Canny,
    Mask,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Random,
    Rows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PaintArg {
    Gray,
    Noise,
    Camo,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut a raster into overlapping chips.
    Chip(ChipArgs),
    /// Merge detection files and suppress duplicates.
    Stitch(StitchArgs),
    /// Score detections against ground truth.
    Evaluate(EvaluateArgs),
    /// Fit a fusion model from validation score pairs.
    Fuse(FuseArgs),
    /// Apply a fusion model to detections.
    Score(ScoreArgs),
    /// Build synthetic scenes from sprites and backgrounds.
    Composite(CompositeArgs),
    /// Compute a schematic representation of an image.
    Rep(RepArgs),
    /// Regenerate images from their representation.
    Reskin(ReskinArgs),
    /// Match the color statistics of images to style images.
    Colormatch(ColormatchArgs),
    /// Simulate detector and classifier output from ground truth.
    Simulate(SimulateArgs),
    /// Sample a dataset mixture manifest.
    Mix(MixArgs),
    /// Run stitch, classify, fuse and evaluate end to end.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct ChipArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Geotransform sidecar; pixel coordinates when absent.
    #[arg(long)]
    pub geo: Option<PathBuf>,
    #[arg(long, visible_alias = "size", default_value_t = 768)]
    pub chip_size: u32,
    #[arg(long, default_value_t = b2n_core::chipper::DEFAULT_OVERLAP)]
    pub overlap: f64,
    /// Receives `<chip>.png`, `<chip>.geo.json` and `grid.json`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct StitchArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Chip grid; detections are taken as chip pixels and lifted to world.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value_t = b2n_core::nms::DEFAULT_NMS_IOU)]
    pub iou: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = b2n_core::evaluator::DEFAULT_MATCH_IOU)]
    pub iou: f64,
    #[arg(long, value_enum, default_value = "s_d")]
    pub score: ScoreArg,
    #[arg(long, default_value_t = b2n_core::evaluator::DEFAULT_FP_PER_TP as f64)]
    pub fp_per_tp: f64,
    /// JSON summary.
    #[arg(long, visible_alias = "out")]
    pub report: PathBuf,
    /// PR curve CSV; next to the report when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub neg_val: PathBuf,
    #[arg(long)]
    pub pos_val: Option<PathBuf>,
    #[arg(long, default_value_t = b2n_core::fusion::DEFAULT_GRID_SIZE)]
    pub grid: usize,
    /// `lo:hi` in normalized score units.
    #[arg(long, default_value = "-0.25:1.25", allow_hyphen_values = true)]
    pub domain: String,
    /// Fixed `h_x,h_y` instead of Silverman's rule.
    #[arg(long)]
    pub bandwidth: Option<String>,
    #[arg(long)]
    pub model_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompositeArgs {
    #[arg(long)]
    pub backgrounds: PathBuf,
    #[arg(long)]
    pub sprites: PathBuf,
    #[arg(long = "class")]
    pub class: String,
    #[arg(long, value_enum, default_value = "random")]
    pub policy: PolicyArg,
    /// Number of scenes.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Objects per scene.
    #[arg(long, default_value_t = 5)]
    pub objects: usize,
    #[arg(long, default_value_t = 8.0)]
    pub spacing: f64,
    #[arg(long, default_value_t = 1.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub orientation: f64,
    #[arg(long, default_value_t = 100)]
    pub max_attempts: usize,
    #[arg(long, value_enum, default_values = ["gray", "noise", "camo"])]
    pub paint: Vec<PaintArg>,
    #[arg(long, default_value_t = 1.0)]
    pub blur: f32,
    #[arg(long)]
    pub no_harmonize: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RepArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub mode: RepMode,
    /// Polygon JSON (list of `[[x, y], ...]`) for the mask mode.
    #[arg(long)]
    pub polygons: Option<PathBuf>,
    #[arg(long, default_value_t = b2n_core::synthcompositor::represent::CANNY_LOW)]
    pub low: f32,
    #[arg(long, default_value_t = b2n_core::synthcompositor::represent::CANNY_HIGH)]
    pub high: f32,
    #[arg(long, default_value_t = b2n_core::synthcompositor::represent::CANNY_SIGMA)]
    pub sigma: f32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReskinArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "laplacian")]
    pub rep: RepMode,
    /// `stub`, `identity` or `exec:<command>` reading and writing PNG on
    /// stdio.
    #[arg(long, default_value = "stub")]
    pub generator: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ColormatchArgs {
    /// Image or directory of images.
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long, conflicts_with = "style_dir", required_unless_present = "style_dir")]
    pub style: Option<PathBuf>,
    /// Each style image yields one output per content image.
    #[arg(long)]
    pub style_dir: Option<PathBuf>,
    #[arg(long, default_value_t = b2n_core::colorxfer::DEFAULT_RIDGE)]
    pub ridge: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub area_mpx: f64,
    /// Overrides the profile seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// `CODE=path`, where path is a directory or a file list.
    #[arg(long = "source", required = true)]
    pub sources: Vec<String>,
    /// Comma-separated, one per source.
    #[arg(long)]
    pub counts: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub with_replacement: bool,
    #[arg(long)]
    pub manifest_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Detection JSON files, already in world coordinates unless --grid is
    /// given.
    #[arg(long = "detections", num_args = 1.., conflicts_with = "detector")]
    pub detections: Vec<PathBuf>,
    /// `exec:<command>` run once per chip: PNG on stdin, detection JSON in
    /// chip pixels on stdout.
    #[arg(long)]
    pub detector: Option<String>,
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Raster for the detector and crop classifier.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub geo: Option<PathBuf>,
    #[arg(long, default_value_t = 768)]
    pub chip_size: u32,
    #[arg(long, default_value_t = b2n_core::chipper::DEFAULT_OVERLAP)]
    pub overlap: f64,
    /// `embedded`, a score file, or `exec:<command>` run per crop: PNG on
    /// stdin, `{"s_c": x}` on stdout.
    #[arg(long, default_value = "embedded")]
    pub classifier: String,
    #[arg(long, default_value_t = 64)]
    pub crop: u32,
    /// Fusion model; detections are ranked by detector score without one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = b2n_core::evaluator::DEFAULT_MATCH_IOU)]
    pub iou: f64,
    #[arg(long, default_value_t = b2n_core::nms::DEFAULT_NMS_IOU)]
    pub nms_iou: f64,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Also write the fused detections.
    #[arg(long)]
    pub detections_out: Option<PathBuf>,
}

/// Applies `B2N_THREADS` to the global rayon pool. Later calls in the same
/// process keep the first pool.
fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("B2N_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| format!("B2N_THREADS must be a positive integer, got {raw:?}"))?;
    if n == 0 {
        return Err("B2N_THREADS must be at least 1".into());
    }
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(command: Command) -> Result<(), StageError> {
    match command {
        Command::Chip(a) => commands::chip(a).stage("chip"),
        Command::Stitch(a) => commands::stitch(a).stage("stitch"),
        Command::Evaluate(a) => commands::evaluate(a).stage("evaluate"),
        Command::Fuse(a) => commands::fuse(a).stage("fuse"),
        Command::Score(a) => commands::score(a).stage("score"),
        Command::Composite(a) => synth::composite(a).stage("composite"),
        Command::Rep(a) => synth::rep(a).stage("rep"),
        Command::Reskin(a) => synth::reskin(a).stage("reskin"),
        Command::Colormatch(a) => commands::colormatch(a).stage("colormatch"),
        Command::Simulate(a) => commands::simulate(a).stage("simulate"),
        Command::Mix(a) => commands::mix(a).stage("mix"),
        Command::Pipeline(a) => pipeline::run(&PipelineConfig::try_from(a).stage("pipeline")?),
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("b2n: {msg}");
        return EXIT_USAGE;
    }
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("b2n: {e}");
            EXIT_STAGE
        }
    }
}
