//! Versioned checkpoint files (`.ckpt`).
//!
//! Layout: text header lines (magic + version, codec settings, the layer
//! graph, optimizer hyperparameters, tensor count), then for every tensor a
//! name line, a shape line of space-separated dimensions, and exactly
//! `8 × product(shape)` bytes of little-endian `f64`.

use std::fmt::Write as _;
use std::path::Path;

use super::adam::{AdamConfig, AdamState};
use super::model::{Architecture, Branch, LayerSpec, ModelParams, TinyNet};
use crate::codec::CodecConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "spinekpt-checkpoint";
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub net: TinyNet,
    pub adam: Option<AdamState>,
    pub codec: CodecConfig,
}

fn codec_line(c: &CodecConfig) -> String {
    format!(
        "codec n={} out_height={} out_width={} min_overlap={} sigma_floor={} topk={} \
         score_threshold={} nms_radius_x={} nms_radius_y={}",
        c.n,
        c.out_height,
        c.out_width,
        c.min_overlap,
        c.sigma_floor,
        c.topk,
        c.score_threshold,
        c.nms_radius_x,
        c.nms_radius_y
    )
}

pub fn encode_checkpoint(ckpt: &ModelCheckpoint) -> Vec<u8> {
    let mut header = String::new();
    let _ = writeln!(header, "{MAGIC} {CHECKPOINT_VERSION}");
    let _ = writeln!(header, "{}", codec_line(&ckpt.codec));
    let _ = writeln!(header, "branches {}", ckpt.net.arch.branches.len());
    for branch in &ckpt.net.arch.branches {
        let _ = writeln!(header, "branch {} {}", branch.name, branch.layers.len());
        for layer in &branch.layers {
            let _ = writeln!(header, "{layer}");
        }
    }
    let mut tensors: Vec<(String, &Tensor)> = ckpt
        .net
        .params
        .iter()
        .map(|(k, t)| (k.clone(), t))
        .collect();
    match &ckpt.adam {
        Some(state) => {
            let c = state.config;
            let _ = writeln!(
                header,
                "adam t={} lr={} beta1={} beta2={} eps={}",
                state.t, c.lr, c.beta1, c.beta2, c.eps
            );
            tensors.extend(state.m.iter().map(|(k, t)| (format!("{ADAM_M}{k}"), t)));
            tensors.extend(state.v.iter().map(|(k, t)| (format!("{ADAM_V}{k}"), t)));
        }
        None => header.push_str("adam none\n"),
    }
    let _ = writeln!(header, "tensors {}", tensors.len());

    let mut bytes = header.into_bytes();
    for (name, t) in tensors {
        bytes.extend_from_slice(name.as_bytes());
        bytes.push(b'\n');
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        bytes.extend_from_slice(dims.join(" ").as_bytes());
        bytes.push(b'\n');
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self, what: &str) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::CheckpointTruncated(format!("missing {what} line")))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::CheckpointInconsistent(format!("{what} line is not UTF-8")))
    }

    fn blob(&mut self, len: usize, name: &str) -> Result<Vec<f64>> {
        let need = len
            .checked_mul(8)
            .ok_or_else(|| Error::CheckpointInconsistent(format!("`{name}` is too large")))?;
        let rest = &self.bytes[self.pos..];
        if rest.len() < need {
            return Err(Error::CheckpointTruncated(format!(
                "`{name}` needs {need} bytes, {} remain",
                rest.len()
            )));
        }
        self.pos += need;
        Ok(rest[..need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

fn inconsistent(msg: impl Into<String>) -> Error {
    Error::CheckpointInconsistent(msg.into())
}

/// Parses `key=value` fields after a leading keyword.
fn fields<'a>(line: &'a str, keyword: &str) -> Result<Vec<(&'a str, &'a str)>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(keyword) {
        return Err(inconsistent(format!("expected `{keyword}` line, got `{line}`")));
    }
    parts
        .map(|f| {
            f.split_once('=')
                .ok_or_else(|| inconsistent(format!("bad field `{f}` in `{keyword}` line")))
        })
        .collect()
}

fn value<T: std::str::FromStr>(fields: &[(&str, &str)], key: &str) -> Result<T> {
    let raw = fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| inconsistent(format!("missing `{key}`")))?;
    raw.parse()
        .map_err(|_| inconsistent(format!("bad value `{raw}` for `{key}`")))
}

fn counted(line: &str, keyword: &str) -> Result<usize> {
    match line.split_once(' ') {
        Some((k, n)) if k == keyword => n
            .trim()
            .parse()
            .map_err(|_| inconsistent(format!("bad count in `{line}`"))),
        _ => Err(inconsistent(format!("expected `{keyword} <count>`, got `{line}`"))),
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelCheckpoint> {
    let mut cur = Cursor { bytes, pos: 0 };

    let magic = cur.line("header")?;
    match magic.split_once(' ') {
        Some((MAGIC, v)) if v == CHECKPOINT_VERSION.to_string() => {}
        Some((MAGIC, v)) => {
            return Err(Error::CheckpointVersion {
                expected: CHECKPOINT_VERSION,
                found: v.to_string(),
            })
        }
        _ => return Err(inconsistent("not a spinekpt checkpoint")),
    }

    let f = fields(cur.line("codec")?, "codec")?;
    let codec = CodecConfig {
        n: value(&f, "n")?,
        out_height: value(&f, "out_height")?,
        out_width: value(&f, "out_width")?,
        min_overlap: value(&f, "min_overlap")?,
        sigma_floor: value(&f, "sigma_floor")?,
        topk: value(&f, "topk")?,
        score_threshold: value(&f, "score_threshold")?,
        nms_radius_x: value(&f, "nms_radius_x")?,
        nms_radius_y: value(&f, "nms_radius_y")?,
    };
    codec.validate().map_err(|e| inconsistent(e.to_string()))?;

    let branch_count = counted(cur.line("branches")?, "branches")?;
    let mut branches = Vec::with_capacity(branch_count.min(16));
    for _ in 0..branch_count {
        let line = cur.line("branch")?;
        let mut parts = line.split_whitespace();
        let (Some("branch"), Some(name), Some(count), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(inconsistent(format!("bad branch line `{line}`")));
        };
        let count: usize = count
            .parse()
            .map_err(|_| inconsistent(format!("bad layer count in `{line}`")))?;
        let mut layers = Vec::with_capacity(count.min(256));
        for _ in 0..count {
            let spec: LayerSpec = cur
                .line("layer")?
                .parse()
                .map_err(|e: Error| inconsistent(e.to_string()))?;
            layers.push(spec);
        }
        branches.push(Branch {
            name: name.to_string(),
            layers,
        });
    }
    let arch = Architecture { branches };

    let adam_line = cur.line("adam")?;
    let adam_config = if adam_line == "adam none" {
        None
    } else {
        let f = fields(adam_line, "adam")?;
        let t: u64 = value(&f, "t")?;
        let config = AdamConfig {
            lr: value(&f, "lr")?,
            beta1: value(&f, "beta1")?,
            beta2: value(&f, "beta2")?,
            eps: value(&f, "eps")?,
        };
        Some((t, config))
    };

    let tensor_count = counted(cur.line("tensors")?, "tensors")?;
    let mut params = ModelParams::new();
    let mut m = ModelParams::new();
    let mut v = ModelParams::new();
    for _ in 0..tensor_count {
        let name = cur.line("tensor name")?.to_string();
        let shape_line = cur.line("tensor shape")?;
        let shape = shape_line
            .split_whitespace()
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| inconsistent(format!("bad shape `{shape_line}` for `{name}`")))?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| inconsistent(format!("shape of `{name}` overflows")))?;
        let data = cur.blob(len, &name)?;
        let tensor = Tensor::from_vec(&shape, data)?;
        let (map, key) = if let Some(k) = name.strip_prefix(ADAM_M) {
            (&mut m, k.to_string())
        } else if let Some(k) = name.strip_prefix(ADAM_V) {
            (&mut v, k.to_string())
        } else {
            (&mut params, name.clone())
        };
        if map.insert(key, tensor).is_some() {
            return Err(inconsistent(format!("duplicate tensor `{name}`")));
        }
    }
    if cur.pos != bytes.len() {
        return Err(inconsistent(format!(
            "{} unexpected trailing bytes",
            bytes.len() - cur.pos
        )));
    }

    let net = TinyNet::from_parts(arch, params).map_err(|e| inconsistent(e.to_string()))?;
    let adam = match adam_config {
        Some((t, config)) => {
            for (moments, label) in [(&m, "first"), (&v, "second")] {
                let matches = moments.len() == net.params.len()
                    && net
                        .params
                        .iter()
                        .all(|(k, p)| moments.get(k).is_some_and(|t| t.shape() == p.shape()));
                if !matches {
                    return Err(inconsistent(format!(
                        "{label}-moment tensors do not match the parameters"
                    )));
                }
            }
            Some(AdamState { config, t, m, v })
        }
        None if m.is_empty() && v.is_empty() => None,
        None => return Err(inconsistent("moment tensors without optimizer header")),
    };
    if net.arch.output_stride() != codec.n {
        return Err(inconsistent(format!(
            "network stride {} does not match codec n = {}",
            net.arch.output_stride(),
            codec.n
        )));
    }
    Ok(ModelCheckpoint { net, adam, codec })
}
