//! Split evaluation: decode each image, compare Cobb angles and landmarks
//! with ground truth and render the plain-text report.

use std::fmt::Write as _;

use crate::codec::{decode_landmarks, encode_targets, CodecConfig, DecodedSpine};
use crate::error::{Error, Result};
use crate::io::{AnnotationFile, Sample};
use crate::metrics::{cobb_angles, error_dec, smape, smape_region, AngleTriple, Region};
use crate::net::TinyNet;
use crate::types::{Point2, SpineAnnotation, VERTEBRA_COUNT};

/// Where the landmark estimates come from.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Model { net: &'a TinyNet, codec: &'a CodecConfig },
    /// Ground truth compared with itself.
    Oracle,
    /// Ground truth encoded to targets and decoded again, no network.
    Codec(&'a CodecConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub name: String,
    pub estimate: AngleTriple,
    pub truth: AngleTriple,
    pub error_dec: f64,
    pub decoded: AnnotationFile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ImageResult>,
    pub smape: f64,
    pub smape_pt: f64,
    pub smape_mt: f64,
    pub smape_tl: f64,
    pub error_dec: f64,
}

pub const SUMMARY_COLUMNS: [&str; 5] = ["SMAPE", "SMAPE_PT", "SMAPE_MT", "SMAPE_TL", "Error_dec"];

impl EvalReport {
    pub fn render(&self) -> String {
        let mut s = String::from("# image PT_est PT_true MT_est MT_true TL_est TL_true Error_dec\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
                r.name,
                r.estimate.pt,
                r.truth.pt,
                r.estimate.mt,
                r.truth.mt,
                r.estimate.tl,
                r.truth.tl,
                r.error_dec
            );
        }
        let _ = writeln!(s, "{}", SUMMARY_COLUMNS.join(" "));
        let _ = writeln!(
            s,
            "{:.6} {:.6} {:.6} {:.6} {:.6}",
            self.smape, self.smape_pt, self.smape_mt, self.smape_tl, self.error_dec
        );
        s
    }
}

fn decoded_file(image: &str, spine: &DecodedSpine) -> AnnotationFile {
    AnnotationFile {
        centers: Some(spine.centers.iter().map(|p| [p.x, p.y]).collect()),
        scores: Some(spine.scores()),
        ..AnnotationFile::new(image, &spine.annotation)
    }
}

fn require_codec(codec: &CodecConfig, ann: &SpineAnnotation, name: &str) -> Result<()> {
    if (codec.input_width(), codec.input_height()) != (ann.image_width, ann.image_height) {
        return Err(Error::invalid(format!(
            "model expects {}x{} images but {name} is {}x{}",
            codec.input_width(),
            codec.input_height(),
            ann.image_width,
            ann.image_height
        )));
    }
    Ok(())
}

/// Produces the estimated landmarks for one sample.
pub fn predict_sample(sample: &Sample, predictor: Predictor<'_>) -> Result<AnnotationFile> {
    let image = format!("{}.pgm", sample.name);
    let spine = match predictor {
        Predictor::Oracle => return Ok(AnnotationFile::new(image, &sample.annotation)),
        Predictor::Codec(codec) => {
            require_codec(codec, &sample.annotation, &sample.name)?;
            let targets = encode_targets(&sample.annotation, codec)?;
            decode_landmarks(&targets.as_prediction(), codec)?
        }
        Predictor::Model { net, codec } => {
            require_codec(codec, &sample.annotation, &sample.name)?;
            decode_landmarks(&net.predict(&sample.image)?, codec)?
        }
    };
    if !spine.is_complete() {
        return Err(Error::invalid(format!(
            "{}: decoded {} of {VERTEBRA_COUNT} vertebrae",
            sample.name,
            spine.found()
        )));
    }
    Ok(decoded_file(&image, &spine))
}

pub fn evaluate(samples: &[Sample], predictor: Predictor<'_>) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let mut rows = Vec::with_capacity(samples.len());
    let mut detected: Vec<Point2> = Vec::new();
    let mut truth: Vec<Point2> = Vec::new();
    for sample in samples {
        let decoded = predict_sample(sample, predictor)?;
        let est = decoded.annotation();
        let (d, t) = (est.landmarks(), sample.annotation.landmarks());
        rows.push(ImageResult {
            name: sample.name.clone(),
            estimate: cobb_angles(&est)?.angles(),
            truth: cobb_angles(&sample.annotation)?.angles(),
            error_dec: error_dec(&d, &t)?,
            decoded,
        });
        detected.extend(d);
        truth.extend(t);
    }
    let est: Vec<AngleTriple> = rows.iter().map(|r| r.estimate).collect();
    let tru: Vec<AngleTriple> = rows.iter().map(|r| r.truth).collect();
    Ok(EvalReport {
        smape: smape(&est, &tru)?,
        smape_pt: smape_region(&est, &tru, Region::Pt)?,
        smape_mt: smape_region(&est, &tru, Region::Mt)?,
        smape_tl: smape_region(&est, &tru, Region::Tl)?,
        error_dec: error_dec(&detected, &truth)?,
        rows,
    })
}
