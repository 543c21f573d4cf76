use chemmap_core::pipeline::{
    run_analyze, run_pls_predict, run_pls_train, run_report, run_split, run_synth, run_unet_predict, run_unet_train,
    PipelineConfig,
};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "chemmap", version, about = "Chemical maps from hyperspectral cubes with bulk references")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a batch of synthetic phantoms with a manifest
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// DUPLEX split of bellies into folds and a test set
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Cross-validated PLS calibration on mean belly spectra
    PlsTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        folds: PathBuf,
    },
    /// Pixel-wise PLS maps and belly predictions
    PlsPredict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Train one U-Net per development fold
    UnetTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        folds: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Ensemble U-Net maps and belly predictions
    UnetPredict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ensemble: PathBuf,
    },
    /// Semi-variogram statistics of a chemical map
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Also write a Gaussian-smoothed copy with this sigma (pixels)
        #[arg(long)]
        smooth_sigma: Option<f64>,
    },
    /// RMSE, bias line and per-group errors of a predictions file
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
    },
}

fn load(config: &Option<PathBuf>) -> chemmap_core::Result<PipelineConfig> {
    match config {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn run(cli: Cli) -> chemmap_core::Result<PathBuf> {
    match cli.command {
        Command::Synth { common, seed } => run_synth(&load(&common.config)?, &common.out, seed),
        Command::Split { common, manifest } => run_split(&load(&common.config)?, &manifest, &common.out),
        Command::PlsTrain { common, manifest, folds } => {
            run_pls_train(&load(&common.config)?, &manifest, &folds, &common.out)
        }
        Command::PlsPredict { common, manifest, model } => {
            run_pls_predict(&load(&common.config)?, &model, &manifest, &common.out)
        }
        Command::UnetTrain { common, manifest, folds, seed } => {
            run_unet_train(&load(&common.config)?, &manifest, &folds, &common.out, seed, |m| eprintln!("{m}"))
        }
        Command::UnetPredict { common, manifest, ensemble } => {
            run_unet_predict(&load(&common.config)?, &ensemble, &manifest, &common.out)
        }
        Command::Analyze { common, map, mask, smooth_sigma } => {
            load(&common.config)?;
            run_analyze(&map, &mask, smooth_sigma, &common.out)
        }
        Command::Report { common, predictions } => {
            load(&common.config)?;
            run_report(&predictions, &common.out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
