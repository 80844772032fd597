//! `gst-vqa`: feature extraction, training, prediction and evaluation.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gst_vqa::eval::EvalOptions;
use gst_vqa::fusion::default_grid;
use gst_vqa::manifest::DatasetManifest;
use gst_vqa::{Error, Fps, Result, SpatialModel};

use artifacts::*;
use commands::*;

#[derive(Parser)]
#[command(name = "gst-vqa", version, about = "Frame-rate aware full-reference video quality assessment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract the fused feature vector for one pair or every manifest row.
    Features(FeaturesArgs),
    /// Split by content, select hyperparameters and fit a regressor.
    Train(TrainArgs),
    /// Score one feature file with a trained model.
    Predict(PredictArgs),
    /// Repeated content-disjoint trials with median reporting.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct VideoArgs {
    /// Luma width for headerless YUV input.
    #[arg(long)]
    width: Option<usize>,
    /// Luma height for headerless YUV input.
    #[arg(long)]
    height: Option<usize>,
    /// Reference frame rate (required for headerless YUV), e.g. 120 or 30000/1001.
    #[arg(long)]
    fps: Option<Fps>,
    /// Distorted frame rate for headerless YUV; defaults to --fps.
    #[arg(long)]
    dist_fps: Option<Fps>,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long, requires = "dist", conflicts_with = "manifest")]
    r#ref: Option<PathBuf>,
    #[arg(long, requires = "ref")]
    dist: Option<PathBuf>,
    /// Output file for a single pair.
    #[arg(long, requires = "ref")]
    out: Option<PathBuf>,
    /// Manifest CSV; writes <features-dir>/<pair_id>.json per row.
    #[arg(long, requires = "features_dir")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    features_dir: Option<PathBuf>,
    #[command(flatten)]
    video: VideoArgs,
    /// Block-average frames by 2^SCALE before the spatial metric.
    #[arg(long, default_value_t = 0)]
    scale: u32,
    /// ssim, msssim, or external:<name> for scores computed elsewhere.
    #[arg(long, default_value = "ssim")]
    spatial_model: SpatialModel,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    features_dir: PathBuf,
    /// CSV of ref_id,dist_id,model_name,score for external spatial models.
    #[arg(long)]
    external_scores: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train/validation/test fractions of the contents.
    #[arg(long, value_parser = parse_fractions, default_value = "0.7,0.15,0.15")]
    fractions: [f64; 3],
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model JSON to write.
    #[arg(long)]
    model: PathBuf,
    /// Training report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Feature JSON written by `features`.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    external_scores: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Report PLCC/RMSE on raw predictions instead of after logistic mapping.
    #[arg(long)]
    no_logistic: bool,
    /// Report JSON; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_fractions(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts.as_slice() {
        [a, b, c] => Ok([*a, *b, *c]),
        [a, c] => Ok([*a, 0.0, *c]),
        _ => Err("expected train,val,test or train,test".into()),
    }
}

/// Process exit status per error kind.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::Format(_) => 4,
        Error::Parse { .. } => 5,
        Error::Dimension(_) => 6,
        Error::Argument(_) => 7,
        Error::Degenerate(_) => 8,
        Error::Shape(_) => 9,
        Error::Data(_) => 10,
        Error::Fit(_) => 11,
        Error::Json(_) => 12,
    }
}

fn load_data(args: &DataArgs) -> Result<(DatasetManifest, LoadedFeatures)> {
    let manifest = DatasetManifest::read(&args.manifest).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", args.manifest.display()),
        },
        other => other,
    })?;
    let scores = load_scores(args.external_scores.as_deref())?;
    let loaded = load_features(&manifest, &args.features_dir, scores.as_ref())?;
    Ok((manifest, loaded))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Features(a) => {
            let config = FeatureConfig::new(a.spatial_model, a.scale);
            let inputs = InputOptions {
                width: a.video.width,
                height: a.video.height,
                fps: a.video.fps,
                dist_fps: a.video.dist_fps,
            };
            match (a.r#ref, a.dist, a.manifest) {
                (Some(r), Some(d), None) => {
                    let out = a
                        .out
                        .ok_or_else(|| Error::Argument("--out is required with --ref/--dist".into()))?;
                    cmd_features_single(&r, &d, &inputs, &config, &out)?;
                }
                (None, None, Some(m)) => {
                    let manifest = DatasetManifest::read(&m)?;
                    let dir = a.features_dir.expect("clap requires --features-dir");
                    let n = cmd_features_manifest(&manifest, &inputs, &config, &dir)?;
                    eprintln!("wrote {n} feature files to {}", dir.display());
                }
                _ => return Err(Error::Argument("give either --ref and --dist, or --manifest".into())),
            }
        }
        Command::Train(a) => {
            let (manifest, loaded) = load_data(&a.data)?;
            let out = cmd_train(&manifest, &loaded, a.data.seed, a.data.fractions)?;
            write_json(&a.model, &out.model)?;
            if let Some(path) = a.out {
                write_json(&path, &out.report)?;
            }
        }
        Command::Predict(a) => {
            let model: ModelArtifact = read_json(&a.model, MODEL_FORMAT)?;
            let features: FeatureArtifact = read_json(&a.features, FEATURES_FORMAT)?;
            let scores = load_scores(a.external_scores.as_deref())?;
            println!("{}", cmd_predict(&model, &features, scores.as_ref())?);
        }
        Command::Evaluate(a) => {
            let (manifest, loaded) = load_data(&a.data)?;
            let opts = EvalOptions {
                n_trials: a.trials,
                seed: a.data.seed,
                fractions: a.data.fractions,
                grid: default_grid(),
                logistic: !a.no_logistic,
                ..EvalOptions::default()
            };
            let report = cmd_evaluate(&manifest, &loaded, &opts)?;
            match a.out {
                Some(path) => write_json(&path, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
