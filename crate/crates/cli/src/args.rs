//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use denomamba::gradsuite::SuiteModule;
use denomamba::Ablation;

#[derive(Debug, Parser)]
#[command(name = "denomamba", version, about = "Low-dose CT denoising with fused state-space blocks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate paired normal-dose / low-dose phantom images.
    #[command(name = "simulate-ldct")]
    SimulateLdct(SimulateArgs),
    /// Train a model on a simulated or loaded dataset.
    Train(TrainArgs),
    /// Denoise images with a trained checkpoint.
    Denoise(DenoiseArgs),
    /// Score predictions against references; optionally compare two methods.
    Eval(EvalArgs),
    /// Check every backward rule against finite differences.
    Gradcheck(GradcheckArgs),
    /// Train the full model and each single-pathway ablation.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of image pairs.
    #[arg(long)]
    pub n: Option<usize>,
    /// Square image extent in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Dose fraction in (0, 1].
    #[arg(long)]
    pub dose: Option<f64>,
    /// Full-dose incident photon count per detector reading.
    #[arg(long)]
    pub photons: Option<f64>,
    /// Electronic noise standard deviation at full dose.
    #[arg(long)]
    pub electronic: Option<f64>,
    /// Base seed; pair i uses seed + i.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Image file format: raw or pgm.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON configuration file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Starting configuration: desk or paper.
    #[arg(long)]
    pub preset: Option<String>,
    /// Remove a pathway (repeatable): no-spa-ssm, no-cha-ssm, no-cfm, no-gcn, no-iden.
    #[arg(long = "ablate")]
    pub ablate: Vec<Ablation>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Base learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for initialisation and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest written by simulate-ldct.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Validation manifest; the training set is used when omitted.
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Continue from the state saved in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image files or directories of images.
    #[arg(long, conflicts_with = "manifest")]
    pub input: Vec<PathBuf>,
    /// Denoise the low-dose images of a manifest, in manifest order.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Output format: raw or pgm.
    #[arg(long, default_value = "raw")]
    pub format: String,
    /// Also write side-by-side montages (low-dose | denoised | reference).
    #[arg(long)]
    pub montage: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted images.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of reference images, paired with predictions by file stem.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Report CSV path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub range: f64,
    /// Another method's report; adds a Wilcoxon signed-rank test on PSNR.
    #[arg(long)]
    pub compare: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Restrict to these modules (repeatable).
    #[arg(long = "module")]
    pub modules: Vec<SuiteModule>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Sampled parameter coordinates for the end-to-end network check.
    #[arg(long, default_value_t = 64)]
    pub coords: usize,
    /// Test hook: scale one backward rule to prove failures are caught.
    #[arg(long, hide = true)]
    pub inject_fault: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Variants to train (repeatable); all when omitted.
    #[arg(long = "variant")]
    pub variants: Vec<Ablation>,
}
