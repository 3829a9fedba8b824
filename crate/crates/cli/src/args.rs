use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use splatup::{AlignmentForm, Backend, NormalSource};

#[derive(Debug, Parser)]
#[command(name = "splatup", version, about = "Point cloud upsampling with per-point anisotropic Gaussians")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Upsample a point cloud.
    Upsample(UpsampleArgs),
    /// Compare a predicted cloud with a ground-truth cloud (and optional mesh).
    Eval(EvalArgs),
    /// Sweep noise and sparsity perturbations over a directory of clouds.
    Robustness(RobustnessArgs),
    /// Verify the analytic objective gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Draw points uniformly by area from a mesh or a built-in shape.
    SampleMesh(SampleMeshArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Analytic,
    Optimize,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Analytic => Backend::Analytic,
            BackendArg::Optimize => Backend::Optimize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalSourceArg {
    GaussianAxis,
    LocalPca,
}

impl From<NormalSourceArg> for NormalSource {
    fn from(n: NormalSourceArg) -> Self {
        match n {
            NormalSourceArg::GaussianAxis => NormalSource::GaussianAxis,
            NormalSourceArg::LocalPca => NormalSource::LocalPca,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlignmentArg {
    Covariance,
    Mahalanobis,
}

impl From<AlignmentArg> for AlignmentForm {
    fn from(a: AlignmentArg) -> Self {
        match a {
            AlignmentArg::Covariance => AlignmentForm::Covariance,
            AlignmentArg::Mahalanobis => AlignmentForm::Mahalanobis,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Xyz,
    Ply,
    PlyAscii,
    Off,
}

/// Pipeline knobs shared by `upsample` and `robustness`.
#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[arg(long, value_enum, default_value = "analytic")]
    pub backend: BackendArg,
    #[arg(long, default_value_t = 256)]
    pub patch_size: usize,
    /// Samples drawn per Gaussian before farthest point sampling.
    #[arg(long = "r-train", default_value_t = 6)]
    pub r_train: usize,
    #[arg(long, default_value_t = 2)]
    pub passes: usize,
    /// Refinement step weight in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub weight: f64,
    #[arg(long, value_enum, default_value = "gaussian-axis")]
    pub normal_source: NormalSourceArg,
    #[arg(short = 'k', long, default_value_t = 16)]
    pub k_neighbors: usize,
    #[arg(long, default_value_t = 2.0)]
    pub truncation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub scale_gain: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value = "covariance")]
    pub alignment: AlignmentArg,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 3.0)]
    pub coverage: f64,
    /// Treat the whole cloud as a single patch.
    #[arg(long)]
    pub no_patching: bool,
}

#[derive(Debug, Clone, Args)]
pub struct UpsampleArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Upsampling rate; powers of four run as chained 4x stages.
    #[arg(short = 'r', long = "rate", default_value_t = 4)]
    pub rate: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dense target cloud, required by the optimize backend.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Output format; defaults to the output extension (.ply is binary).
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub mesh: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SparsifyArg {
    Random,
    Fps,
}

#[derive(Debug, Clone, Args)]
pub struct RobustnessArgs {
    /// Directory of input clouds (.xyz, .ply, .off).
    #[arg(long)]
    pub input_dir: PathBuf,
    /// Ground-truth clouds with the same file names; inputs are their own
    /// ground truth when omitted.
    #[arg(long)]
    pub gt_dir: Option<PathBuf>,
    /// Meshes named `<stem>.off` or `<stem>.ply`; enables P2F.
    #[arg(long)]
    pub mesh_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.01, 0.02])]
    pub noise: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![256, 512, 1024])]
    pub sparsity: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![4, 16])]
    pub rates: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0])]
    pub seeds: Vec<u64>,
    #[arg(long, value_enum, default_value = "random")]
    pub sparsify: SparsifyArg,
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub json: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub cases: usize,
    /// Alignment term to differentiate.
    #[arg(long, value_enum, default_value = "covariance")]
    pub form: AlignmentArg,
    /// Scale the analytic offset gradient by this factor (negative control).
    #[arg(long, hide = true)]
    pub corrupt_offsets: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SampleMeshArgs {
    /// Mesh file (.off or .ply).
    #[arg(long, conflicts_with = "shape", required_unless_present = "shape")]
    pub mesh: Option<PathBuf>,
    /// Built-in shape: sphere, torus, cube, cylinder, plane.
    #[arg(long)]
    pub shape: Option<String>,
    #[arg(short = 'n', long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Also write the source mesh as OFF (useful for built-in shapes).
    #[arg(long)]
    pub write_mesh: Option<PathBuf>,
}
