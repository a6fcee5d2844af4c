//! On-disk formats: binary PGM images, JSON annotation files and the dataset
//! manifest.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::types::{Point2, SpineAnnotation, CORNERS_PER_VERTEBRA};

pub const MANIFEST_FILE: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "# spinekpt manifest v1\nsplit\timage\tannotation";

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Encodes a 1×H×W image with values in [0,1] as 8-bit binary PGM.
pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image.chw()?;
    if c != 1 {
        return Err(Error::invalid(format!("PGM needs one channel, got {c}")));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |reason: String| Error::Malformed {
        what: "PGM image",
        path: path.to_path_buf(),
        reason,
    };
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(bad(format!("magic `{}`, expected P5", fields[0])));
    }
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| bad(format!("{what} `{s}` is not a number")))
    };
    let (w, h, maxval) = (
        num(&fields[1], "width")?,
        num(&fields[2], "height")?,
        num(&fields[3], "maxval")?,
    );
    if w == 0 || h == 0 || maxval == 0 || maxval > 255 {
        return Err(bad(format!("unsupported geometry {w}x{h} maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != w * h {
        return Err(bad(format!(
            "raster has {} bytes, expected {}",
            raster.len(),
            w * h
        )));
    }
    let scale = maxval as f64;
    Tensor::from_vec(&[1, h, w], raster.iter().map(|&b| b as f64 / scale).collect())
}

pub fn write_pgm(path: &Path, image: &Tensor) -> Result<()> {
    write_bytes(path, &encode_pgm(image)?)
}

pub fn read_pgm(path: &Path) -> Result<Tensor> {
    decode_pgm(&read_bytes(path)?, path)
}

/// One annotation file. Decoded results also carry refined centers and peak
/// scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub landmarks: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

impl AnnotationFile {
    pub fn new(image: impl Into<String>, ann: &SpineAnnotation) -> Self {
        Self {
            image: image.into(),
            width: ann.image_width,
            height: ann.image_height,
            landmarks: ann.landmarks().iter().map(|p| [p.x, p.y]).collect(),
            centers: None,
            scores: None,
        }
    }

    pub fn annotation(&self) -> SpineAnnotation {
        let pts: Vec<Point2> = self.landmarks.iter().map(|&[x, y]| Point2::new(x, y)).collect();
        SpineAnnotation::from_landmarks(self.width, self.height, &pts)
    }

    pub fn centers(&self) -> Option<Vec<Point2>> {
        self.centers
            .as_ref()
            .map(|c| c.iter().map(|&[x, y]| Point2::new(x, y)).collect())
    }

    fn check(&self, path: &Path) -> Result<()> {
        let bad = |reason: String| Error::Malformed {
            what: "annotation",
            path: path.to_path_buf(),
            reason,
        };
        if self.landmarks.len() % CORNERS_PER_VERTEBRA != 0 {
            return Err(bad(format!(
                "{} landmarks is not a whole number of vertebrae",
                self.landmarks.len()
            )));
        }
        if self.landmarks.iter().flatten().any(|v| !v.is_finite()) {
            return Err(bad("non-finite coordinate".into()));
        }
        let vertebrae = self.landmarks.len() / CORNERS_PER_VERTEBRA;
        if let Some(c) = &self.centers {
            if c.len() != vertebrae {
                return Err(bad(format!("{} centers for {vertebrae} vertebrae", c.len())));
            }
        }
        if let Some(s) = &self.scores {
            if s.len() != vertebrae {
                return Err(bad(format!("{} scores for {vertebrae} vertebrae", s.len())));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data serializes");
        s.push('\n');
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let file: Self = serde_json::from_str(text).map_err(|e| Error::Malformed {
            what: "annotation",
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        file.check(path)?;
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path)?;
        let text = String::from_utf8(bytes).map_err(|e| Error::Malformed {
            what: "annotation",
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_json().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!(
                "unknown split `{other}` (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub image: String,
    pub annotation: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn render(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{}\n", e.split, e.image, e.annotation));
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, reason: String| Error::Malformed {
            what: "manifest",
            path: path.to_path_buf(),
            reason: format!("line {line}: {reason}"),
        };
        let mut lines = text.lines().enumerate();
        for expected in MANIFEST_HEADER.lines() {
            match lines.next() {
                Some((_, l)) if l == expected => {}
                Some((i, l)) => return Err(bad(i + 1, format!("expected `{expected}`, found `{l}`"))),
                None => return Err(bad(1, "missing header".into())),
            }
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [split, image, annotation] = cols[..] else {
                return Err(bad(i + 1, format!("expected 3 columns, found {}", cols.len())));
            };
            entries.push(ManifestEntry {
                split: split.parse().map_err(|e: Error| bad(i + 1, e.to_string()))?,
                image: image.to_owned(),
                annotation: annotation.to_owned(),
            });
        }
        Ok(Self { entries })
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = read_bytes(&path)?;
        Self::parse(&String::from_utf8_lossy(&bytes), &path)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_bytes(&dir.join(MANIFEST_FILE), self.render().as_bytes())
    }
}

/// An image with its ground truth, loaded from a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// File stem shared by the image and annotation files.
    pub name: String,
    pub image: Tensor,
    pub annotation: SpineAnnotation,
}

fn stem(file: &str) -> String {
    Path::new(file)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| file.to_owned())
}

pub fn load_sample(dir: &Path, entry: &ManifestEntry) -> Result<Sample> {
    let ann_path = dir.join(&entry.annotation);
    let file = AnnotationFile::read(&ann_path)?;
    let image = read_pgm(&dir.join(&entry.image))?;
    let (_, h, w) = image.chw()?;
    if (w, h) != (file.width, file.height) {
        return Err(Error::Malformed {
            what: "annotation",
            path: ann_path,
            reason: format!(
                "declares {}x{} but image is {w}x{h}",
                file.width, file.height
            ),
        });
    }
    Ok(Sample {
        name: stem(&entry.annotation),
        image,
        annotation: file.annotation(),
    })
}

pub fn load_split(dir: &Path, split: Split) -> Result<Vec<Sample>> {
    let manifest = Manifest::read(dir)?;
    manifest.split(split).map(|e| load_sample(dir, e)).collect()
}

/// Creates `dir` (and parents) if needed.
pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.to_path_buf())
}
