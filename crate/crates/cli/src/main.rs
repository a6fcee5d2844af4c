use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use spinekpt_core::dataset::{DatasetSpec, SplitCounts};
use spinekpt_core::io::Split;
use spinekpt_core::losses::LossWeights;
use spinekpt_core::net::adam::DEFAULT_LR;
use spinekpt_core::net::AdamConfig;
use spinekpt_core::pipeline::{run_decode, run_eval, run_gen, run_plot, run_train, EvalMode};
use spinekpt_core::synth::{AugmentConfig, SpineGenConfig};
use spinekpt_core::train::{TrainConfig, DEFAULT_EPOCHS};

#[derive(Parser)]
#[command(name = "spinekpt", version, about = "Vertebra landmark detection on synthetic spine images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a train/val/test manifest.
    Gen(GenArgs),
    /// Train the network on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a split and write the report and decoded annotations.
    Eval(EvalArgs),
    /// Decode landmarks from a single image.
    Decode(DecodeArgs),
    /// Draw an annotation or decoded result over its image as SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Base seed; sample i uses seed + i.
    #[arg(long, env = "SPINEKPT_SEED", default_value_t = 0)]
    seed: u64,
    /// Explicit train,val,test counts instead of 60/20/20.
    #[arg(long, value_parser = parse_splits)]
    splits: Option<SplitCounts>,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    vertebra_width: Option<f64>,
    #[arg(long)]
    vertebra_height: Option<f64>,
    #[arg(long)]
    vertebra_gap: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data_dir: PathBuf,
    /// Where the best checkpoint is written.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Loss log path; defaults to `<checkpoint>.loss.txt`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_LR)]
    lr: f64,
    #[arg(long, env = "SPINEKPT_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Disable expand/crop/contrast/brightness augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Largest canvas expansion per axis, as a fraction.
    #[arg(long)]
    max_expand: Option<f64>,
    /// Smallest retained crop fraction per axis.
    #[arg(long)]
    min_crop: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    heatmap_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    center_weight: f64,
    #[arg(long, default_value_t = 0.1)]
    corner_weight: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data_dir: PathBuf,
    /// Required in model mode.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// model, oracle (ground truth against itself) or codec (encode→decode).
    #[arg(long, default_value = "model", value_parser = parse_mode)]
    mode: EvalMode,
    /// Directory for report.txt and decoded annotations.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output annotation file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    annotation: PathBuf,
    /// Output SVG file.
    #[arg(long)]
    out: PathBuf,
}

fn parse_splits(s: &str) -> Result<SplitCounts, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [train, val, test] => Ok(SplitCounts { train, val, test }),
        _ => Err("expected three comma-separated counts: train,val,test".into()),
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: spinekpt_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<EvalMode, String> {
    s.parse().map_err(|e: spinekpt_core::Error| e.to_string())
}

fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        bail!("data directory {} does not exist", path.display());
    }
    Ok(())
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("{} is not a readable file", path.display());
    }
    Ok(())
}

fn gen(args: GenArgs) -> Result<()> {
    let mut base = SpineGenConfig {
        width: args.width,
        height: args.height,
        ..SpineGenConfig::default()
    };
    if let Some(v) = args.noise_std {
        base.noise_std = v;
    }
    if let Some(v) = args.vertebra_width {
        base.vertebra_width = v;
    }
    if let Some(v) = args.vertebra_height {
        base.vertebra_height = v;
    }
    if let Some(v) = args.vertebra_gap {
        base.vertebra_gap = v;
    }
    let spec = DatasetSpec {
        base,
        splits: args.splits,
        ..DatasetSpec::new(args.count, args.seed)
    };
    let manifest = run_gen(&args.out, &spec)?;
    println!(
        "wrote {} samples to {} (train {}, val {}, test {})",
        manifest.entries.len(),
        args.out.display(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test)
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    require_dir(&args.data_dir)?;
    let log = args.log.clone().unwrap_or_else(|| {
        let mut name = args.checkpoint.clone().into_os_string();
        name.push(".loss.txt");
        PathBuf::from(name)
    });
    let cfg = TrainConfig {
        epochs: args.epochs,
        adam: AdamConfig {
            lr: args.lr,
            ..AdamConfig::default()
        },
        weights: LossWeights {
            heatmap: args.heatmap_weight,
            center_offset: args.center_weight,
            corner_offset: args.corner_weight,
        },
        seed: args.seed,
        augment: (!args.no_augment).then(|| {
            let d = AugmentConfig::default();
            AugmentConfig {
                max_expand: args.max_expand.unwrap_or(d.max_expand),
                min_crop: args.min_crop.unwrap_or(d.min_crop),
                ..d
            }
        }),
        patience: args.patience,
        ..TrainConfig::default()
    };
    let outcome = run_train(&args.data_dir, &cfg, &args.checkpoint, &log)?;
    println!(
        "trained {} epochs{}; best epoch {} with val loss {:.6}",
        outcome.log.len(),
        if outcome.stopped_early { " (early stop)" } else { "" },
        outcome.best_epoch,
        outcome.best_val_loss
    );
    println!("checkpoint: {}", args.checkpoint.display());
    println!("loss log: {}", log.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    require_dir(&args.data_dir)?;
    if let Some(c) = &args.checkpoint {
        require_file(c)?;
    }
    let report = run_eval(
        &args.data_dir,
        args.split,
        args.mode,
        args.checkpoint.as_deref(),
        &args.out,
    )?;
    print!("{}", report.render());
    Ok(())
}

fn decode(args: DecodeArgs) -> Result<()> {
    require_file(&args.image)?;
    require_file(&args.checkpoint)?;
    let file = run_decode(&args.image, &args.checkpoint, &args.out)?;
    println!(
        "decoded {} vertebrae to {}",
        file.landmarks.len() / 4,
        args.out.display()
    );
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    require_file(&args.annotation)?;
    run_plot(&args.image, &args.annotation, &args.out)
        .with_context(|| format!("plotting {}", args.annotation.display()))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Decode(a) => decode(a),
        Command::Plot(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
