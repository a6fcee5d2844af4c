//! File-level commands: generate a dataset, train from it, evaluate a split
//! and plot an annotation. Each reads and writes only the paths it is given.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::{generate_dataset, DatasetSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, Predictor};
use crate::io::{ensure_dir, load_split, AnnotationFile, Manifest, Split};
use crate::net::{load_checkpoint, save_checkpoint};
use crate::plot::render_svg;
use crate::train::{render_log, train, TrainConfig, TrainOutcome};

pub const REPORT_FILE: &str = "report.txt";

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(Error::invalid(format!(
            "directory {} does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

pub fn run_gen(out_dir: &Path, spec: &DatasetSpec) -> Result<Manifest> {
    generate_dataset(out_dir, spec)
}

/// Trains on the `train` split, validates on `val`, then writes the best
/// checkpoint and the loss log.
pub fn run_train(
    data_dir: &Path,
    cfg: &TrainConfig,
    checkpoint: &Path,
    log: &Path,
) -> Result<TrainOutcome> {
    require_parent(checkpoint)?;
    require_parent(log)?;
    let train_set = load_split(data_dir, Split::Train)?;
    if train_set.is_empty() {
        return Err(Error::invalid(format!(
            "{} has no training samples",
            data_dir.display()
        )));
    }
    let val_set = load_split(data_dir, Split::Val)?;
    let outcome = train(&train_set, &val_set, cfg)?;
    save_checkpoint(&outcome.checkpoint, checkpoint)?;
    write_text(log, &render_log(&outcome.log))?;
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Model,
    Oracle,
    Codec,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Model => "model",
            EvalMode::Oracle => "oracle",
            EvalMode::Codec => "codec",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(EvalMode::Model),
            "oracle" => Ok(EvalMode::Oracle),
            "codec" => Ok(EvalMode::Codec),
            other => Err(Error::invalid(format!(
                "unknown mode `{other}` (expected model, oracle or codec)"
            ))),
        }
    }
}

/// Evaluates one split and writes `report.txt` plus one decoded annotation
/// per image into `out_dir`.
pub fn run_eval(
    data_dir: &Path,
    split: Split,
    mode: EvalMode,
    checkpoint: Option<&Path>,
    out_dir: &Path,
) -> Result<EvalReport> {
    let samples = load_split(data_dir, split)?;
    if samples.is_empty() {
        return Err(Error::invalid(format!(
            "split `{split}` of {} is empty",
            data_dir.display()
        )));
    }
    let report = match mode {
        EvalMode::Oracle => evaluate(&samples, Predictor::Oracle)?,
        EvalMode::Codec => {
            let codec = crate::train::codec_for(&samples)?;
            evaluate(&samples, Predictor::Codec(&codec))?
        }
        EvalMode::Model => {
            let path =
                checkpoint.ok_or_else(|| Error::invalid("model mode needs a checkpoint"))?;
            let ckpt = load_checkpoint(path)?;
            evaluate(
                &samples,
                Predictor::Model {
                    net: &ckpt.net,
                    codec: &ckpt.codec,
                },
            )?
        }
    };
    ensure_dir(out_dir)?;
    for row in &report.rows {
        row.decoded.write(&out_dir.join(format!("{}.json", row.name)))?;
    }
    write_text(&out_dir.join(REPORT_FILE), &report.render())?;
    Ok(report)
}

/// Decodes a single image with a trained model.
pub fn run_decode(image: &Path, checkpoint: &Path, out: &Path) -> Result<AnnotationFile> {
    require_parent(out)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let tensor = crate::io::read_pgm(image)?;
    let (_, h, w) = tensor.chw()?;
    if (w, h) != (ckpt.codec.input_width(), ckpt.codec.input_height()) {
        return Err(Error::invalid(format!(
            "model expects {}x{} images but {} is {w}x{h}",
            ckpt.codec.input_width(),
            ckpt.codec.input_height(),
            image.display()
        )));
    }
    let spine = crate::codec::decode_landmarks(&ckpt.net.predict(&tensor)?, &ckpt.codec)?;
    let name = image
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = AnnotationFile {
        centers: Some(spine.centers.iter().map(|p| [p.x, p.y]).collect()),
        scores: Some(spine.scores()),
        ..AnnotationFile::new(name, &spine.annotation)
    };
    file.write(out)?;
    Ok(file)
}

pub fn run_plot(image: &Path, annotation: &Path, out: &Path) -> Result<PathBuf> {
    require_parent(out)?;
    let file = AnnotationFile::read(annotation)?;
    write_text(out, &render_svg(&file, &image.to_string_lossy()))?;
    Ok(out.to_path_buf())
}
