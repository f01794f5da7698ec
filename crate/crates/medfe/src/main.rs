use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use medfe::commands;
use medfe::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "medfe",
    about = "Mutual encoder-decoder inpainting with feature equalization",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Run-configuration flags; each mirrors a config-file field and wins
/// over it.
#[derive(Args, Clone, Default)]
struct ConfigFlags {
    /// Flat JSON config file mirroring these flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model/training preset: desk or full
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Square image size (multiple of 32)
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to resume from
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset manifest (image<TAB>structure<TAB>mask per line)
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    adam_beta1: Option<f64>,
    #[arg(long)]
    adam_beta2: Option<f64>,
    #[arg(long)]
    lambda_r: Option<f64>,
    #[arg(long)]
    lambda_p: Option<f64>,
    #[arg(long)]
    lambda_s: Option<f64>,
    #[arg(long)]
    lambda_adv: Option<f64>,
    #[arg(long)]
    lambda_st: Option<f64>,
    #[arg(long)]
    lambda_te: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Pretrained feature-extractor weights (checkpoint container)
    #[arg(long)]
    extractor_weights: Option<PathBuf>,
}

impl ConfigFlags {
    fn resolve(&self) -> Result<RunConfig, medfe::CliError> {
        let overrides = Overrides {
            preset: self.preset.clone(),
            image_size: self.size,
            batch_size: self.batch_size,
            steps: self.steps,
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            seed: self.seed,
            lambda_r: self.lambda_r,
            lambda_p: self.lambda_p,
            lambda_s: self.lambda_s,
            lambda_adv: self.lambda_adv,
            lambda_st: self.lambda_st,
            lambda_te: self.lambda_te,
            manifest: self.manifest.clone(),
            checkpoint: self.checkpoint.clone(),
            out_dir: self.out.clone(),
            checkpoint_every: self.checkpoint_every,
            extractor_weights: self.extractor_weights.clone(),
        };
        RunConfig::resolve(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on a manifest corpus; logs per-step losses, checkpoints
    /// periodically and at the end
    Train {
        #[command(flatten)]
        flags: ConfigFlags,
        /// Suppress the per-step stdout log (the file log is always written)
        #[arg(long)]
        quiet: bool,
    },
    /// Inpaint one image with a trained checkpoint
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write the branch color maps
        #[arg(long)]
        emit_branches: bool,
    },
    /// Per-bucket PSNR/SSIM over a manifest
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Bucket labels to report (default: all five)
        #[arg(long)]
        bucket: Vec<String>,
    },
    /// Generate mask files
    MakeMasks {
        /// center or irregular
        #[arg(long, default_value = "irregular")]
        kind: String,
        /// Hole-ratio bucket label, e.g. "10-20%"
        #[arg(long)]
        bucket: Option<String>,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "masks")]
        out: PathBuf,
    },
    /// Generate a synthetic dataset plus its manifest
    MakeDataset {
        #[arg(long, default_value_t = 512)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// center, mixed, or a bucket label
        #[arg(long, default_value = "center")]
        mask: String,
        #[arg(long, default_value = "dataset")]
        out: PathBuf,
    },
    /// Render the intermediate feature maps of one sample
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the oracle-equivalence and gradient-check suites
    Selftest,
}

fn run(cmd: Cmd) -> Result<(), medfe::CliError> {
    match cmd {
        Cmd::Train { flags, quiet } => {
            let cfg = flags.resolve()?;
            commands::train::run(&cfg, quiet)
        }
        Cmd::Infer {
            checkpoint,
            image,
            mask,
            out,
            emit_branches,
        } => commands::infer::run(&checkpoint, &image, &mask, &out, emit_branches),
        Cmd::Evaluate {
            checkpoint,
            manifest,
            bucket,
        } => {
            let report = commands::evaluate::run(&checkpoint, &manifest, &bucket)?;
            print!("{}", report.render());
            Ok(())
        }
        Cmd::MakeMasks {
            kind,
            bucket,
            count,
            size,
            seed,
            out,
        } => commands::masks::run(&kind, bucket.as_deref(), count, size, seed, &out),
        Cmd::MakeDataset {
            count,
            size,
            seed,
            mask,
            out,
        } => {
            let choice = commands::dataset::MaskChoice::parse(&mask)?;
            commands::dataset::run(count, size, seed, choice, &out)
        }
        Cmd::Visualize {
            checkpoint,
            image,
            mask,
            out,
        } => commands::visualize::run(&checkpoint, &image, &mask, &out),
        Cmd::Selftest => commands::selftest::run(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
