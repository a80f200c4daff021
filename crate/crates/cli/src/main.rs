//! `latsurv`: simulate cohorts, fit and evaluate survival models, project
//! observations into a toy generator's latent space and edit latents along
//! fitted attribute directions.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod artifacts;
mod commands;

#[derive(Debug, Parser)]
#[command(
    name = "latsurv",
    version,
    about = "Survival analysis on generator latent spaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a censored cohort with known true log-risk.
    Simulate(SimulateArgs),
    /// Project observations into the latent space of a toy generator.
    Project(ProjectArgs),
    /// Fit a ridge-regularized Cox model.
    FitCox(FitCoxArgs),
    /// Train a DeepSurv network.
    FitDeepsurv(FitDeepsurvArgs),
    /// C-index and integrated Brier score of a saved model on a cohort.
    Evaluate(EvaluateArgs),
    /// Fit or construct an attribute direction in latent space.
    Attribute(AttributeArgs),
    /// Move latents along an attribute direction.
    Manipulate(ManipulateArgs),
    /// Render generator outputs for a range of edit strengths.
    Sweep(SweepArgs),
    /// Append latent vectors to cohort features, matched by id.
    Fuse(FuseArgs),
    /// Split a cohort into train and test parts.
    Split(SplitArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Manifest path; defaults to `<output>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Identity,
    Linear,
    Orthonormal,
    ToyMlp,
}

impl GeneratorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Linear => "linear",
            Self::Orthonormal => "orthonormal",
            Self::ToyMlp => "toy-mlp",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GeneratorArgs {
    #[arg(long, value_enum, default_value_t = GeneratorKind::ToyMlp)]
    pub generator: GeneratorKind,
    /// Generator output length (ignored by `identity`).
    #[arg(long, default_value_t = 1024)]
    pub output_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub generator_seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = Form::Linear)]
    pub form: Form,
    /// Comma-separated true coefficients; default `1,-1,0,...`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub coefficients: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.533)]
    pub censor_fraction: f64,
    #[arg(long, default_value_t = 1.2)]
    pub weibull_shape: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub weibull_scale: f64,
    #[arg(long, default_value_t = 2.0)]
    pub min_days: f64,
    #[arg(long, default_value_t = 4923.0)]
    pub max_days: f64,
    #[arg(long)]
    pub allow_ties: bool,
    #[arg(long, default_value = "f")]
    pub feature_prefix: String,
    /// Cohort CSV; the true log-risks go to `<stem>_truth.csv` beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write generator outputs of each record's features as JSONL
    /// `{"id", "x"}` observations.
    #[arg(long)]
    pub observations: Option<PathBuf>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    Identity,
    Linear,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProjectArgs {
    /// JSONL observations `{"id", "x"}`.
    #[arg(long)]
    pub observations: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub latent_dim: usize,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[arg(long, value_enum, default_value_t = ExtractorKind::Identity)]
    pub extractor: ExtractorKind,
    /// Feature count of the linear extractor.
    #[arg(long, default_value_t = 256)]
    pub extractor_dim: usize,
    #[arg(long, default_value_t = 800)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    /// Start from the mean of these latents instead of zero.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// Latent JSONL output.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV of `id,final_loss`.
    #[arg(long)]
    pub losses_out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitCoxArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long, default_value_t = latsurv::coxph::DEFAULT_RIDGE)]
    pub ridge: f64,
    #[arg(long, default_value_t = 20000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0.001)]
    pub learning_rate: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitDeepsurvArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.4)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0.1)]
    pub validation_fraction: f64,
    /// Comma-separated hidden widths.
    #[arg(long, value_delimiter = ',', default_value = "256,128,64,32,16")]
    pub hidden: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
    /// Report path; printed to standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lower_quantile: f64,
    #[arg(long, default_value_t = 0.95)]
    pub upper_quantile: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AttributeArgs {
    #[command(subcommand)]
    pub kind: AttributeKind,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributeKind {
    /// Cox coefficients of survival on latents.
    Health(HealthArgs),
    /// Ridge regression slopes of age on latents.
    Age(AgeArgs),
    /// Unit vector along one latent coordinate.
    SingleDim(SingleDimArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HealthArgs {
    /// Survival cohort; its features are used as latents unless
    /// `--latents` is given.
    #[arg(long)]
    pub cohort: PathBuf,
    /// Latents matched to the cohort by id.
    #[arg(long)]
    pub latents: Option<PathBuf>,
    #[arg(long, default_value_t = latsurv::coxph::DEFAULT_RIDGE)]
    pub ridge: f64,
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Also save the fitted Cox model.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AgeArgs {
    #[arg(long)]
    pub latents: PathBuf,
    /// CSV with header `id,age`.
    #[arg(long)]
    pub ages: PathBuf,
    #[arg(long, default_value_t = latsurv::latent::AGE_RIDGE)]
    pub ridge: f64,
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SingleDimArgs {
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 512)]
    pub latent_dim: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ManipulateArgs {
    #[arg(long)]
    pub latents: PathBuf,
    #[arg(long)]
    pub attribute: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub beta: f64,
    /// Only edit this record.
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    /// Latent JSONL; the first record is used unless `--id` is given.
    #[arg(long)]
    pub latent: PathBuf,
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long)]
    pub attribute: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "-10,-5,0,5,10,20"
    )]
    pub betas: Vec<f64>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    /// Directory for `<id>_beta_<value>.pgm` files and `sweep.manifest.json`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FuseArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub latents: PathBuf,
    #[arg(long, default_value = "z")]
    pub latent_prefix: String,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub fraction: f64,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Project(a) => commands::project(&a),
        Command::FitCox(a) => commands::fit_cox(&a),
        Command::FitDeepsurv(a) => commands::fit_deepsurv(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Attribute(a) => commands::attribute(&a),
        Command::Manipulate(a) => commands::manipulate(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Fuse(a) => commands::fuse(&a),
        Command::Split(a) => commands::split(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
