use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{
    conv2d, conv2d_backward, relu, relu_backward, sigmoid, sigmoid_backward, upsample2x,
    upsample2x_backward,
};
use crate::codec::{PredictionMaps, CENTER_OFFSET_CHANNELS, CORNER_OFFSET_CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named parameter (or gradient) tensors, ordered by name.
pub type ModelParams = BTreeMap<String, Tensor>;

/// Initial heatmap-head bias; sigmoid(−2.19) ≈ 0.1.
pub const HEATMAP_PRIOR_BIAS: f64 = -2.19;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv3x3,
    Conv1x1,
    Relu,
    Sigmoid,
    Upsample2xNearest,
    AddSkip,
}

impl LayerKind {
    fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv3x3 => "conv3x3",
            LayerKind::Conv1x1 => "conv1x1",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Upsample2xNearest => "upsample2x_nearest",
            LayerKind::AddSkip => "add_skip",
        }
    }

    fn kernel_size(self) -> Option<usize> {
        match self {
            LayerKind::Conv3x3 => Some(3),
            LayerKind::Conv1x1 => Some(1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// For `AddSkip`: index of the earlier layer in the same branch whose
    /// output is added.
    pub skip_from: Option<usize>,
}

impl LayerSpec {
    pub fn conv3x3(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self::conv(LayerKind::Conv3x3, in_channels, out_channels, stride)
    }

    pub fn conv1x1(in_channels: usize, out_channels: usize) -> Self {
        Self::conv(LayerKind::Conv1x1, in_channels, out_channels, 1)
    }

    fn conv(kind: LayerKind, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            kind,
            in_channels,
            out_channels,
            stride,
            skip_from: None,
        }
    }

    fn elementwise(kind: LayerKind, channels: usize) -> Self {
        Self {
            kind,
            in_channels: channels,
            out_channels: channels,
            stride: 1,
            skip_from: None,
        }
    }

    pub fn relu(channels: usize) -> Self {
        Self::elementwise(LayerKind::Relu, channels)
    }

    pub fn sigmoid(channels: usize) -> Self {
        Self::elementwise(LayerKind::Sigmoid, channels)
    }

    pub fn upsample2x(channels: usize) -> Self {
        Self::elementwise(LayerKind::Upsample2xNearest, channels)
    }

    pub fn add_skip(channels: usize, from: usize) -> Self {
        Self {
            skip_from: Some(from),
            ..Self::elementwise(LayerKind::AddSkip, channels)
        }
    }

    pub fn is_conv(&self) -> bool {
        self.kind.kernel_size().is_some()
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} in={} out={} stride={}",
            self.kind.as_str(),
            self.in_channels,
            self.out_channels,
            self.stride
        )?;
        if let Some(from) = self.skip_from {
            write!(f, " from={from}")?;
        }
        Ok(())
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let kind = match parts.next() {
            Some("conv3x3") => LayerKind::Conv3x3,
            Some("conv1x1") => LayerKind::Conv1x1,
            Some("relu") => LayerKind::Relu,
            Some("sigmoid") => LayerKind::Sigmoid,
            Some("upsample2x_nearest") => LayerKind::Upsample2xNearest,
            Some("add_skip") => LayerKind::AddSkip,
            other => return Err(Error::invalid(format!("unknown layer kind {other:?}"))),
        };
        let mut spec = LayerSpec::elementwise(kind, 0);
        let mut seen_in = false;
        let mut seen_out = false;
        for field in parts {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("bad layer field `{field}`")))?;
            let value: usize = value
                .parse()
                .map_err(|_| Error::invalid(format!("bad layer value `{field}`")))?;
            match key {
                "in" => (spec.in_channels, seen_in) = (value, true),
                "out" => (spec.out_channels, seen_out) = (value, true),
                "stride" => spec.stride = value,
                "from" => spec.skip_from = Some(value),
                _ => return Err(Error::invalid(format!("unknown layer field `{key}`"))),
            }
        }
        if !(seen_in && seen_out) {
            return Err(Error::invalid(format!("layer `{s}` lacks channel counts")));
        }
        Ok(spec)
    }
}

/// A named chain of layers. The first branch is the trunk and consumes the
/// image; every other branch is a head fed by the trunk's output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Branch {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

pub const TRUNK: &str = "trunk";
pub const HEATMAP_HEAD: &str = "heatmap";
pub const CENTER_HEAD: &str = "center_offset";
pub const CORNER_HEAD: &str = "corner_offset";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub branches: Vec<Branch>,
}

impl Architecture {
    /// The desk-scale encoder-decoder: three stride-2 stages down to 1/8,
    /// one nearest upsample back to 1/4, and a skip from the 1/4 encoder stage.
    pub fn desk_scale() -> Self {
        let trunk = vec![
            LayerSpec::conv3x3(1, 16, 2),
            LayerSpec::relu(16),
            LayerSpec::conv3x3(16, 32, 2),
            LayerSpec::relu(32), // skip tap, stride 4
            LayerSpec::conv3x3(32, 64, 2),
            LayerSpec::relu(64),
            LayerSpec::conv3x3(64, 64, 1),
            LayerSpec::relu(64),
            LayerSpec::upsample2x(64),
            LayerSpec::conv1x1(64, 32),
            LayerSpec::add_skip(32, 3),
            LayerSpec::relu(32),
        ];
        let head = |name: &str, layers| Branch {
            name: name.to_string(),
            layers,
        };
        Self {
            branches: vec![
                head(TRUNK, trunk),
                head(
                    HEATMAP_HEAD,
                    vec![LayerSpec::conv1x1(32, 1), LayerSpec::sigmoid(1)],
                ),
                head(
                    CENTER_HEAD,
                    vec![LayerSpec::conv1x1(32, CENTER_OFFSET_CHANNELS)],
                ),
                head(
                    CORNER_HEAD,
                    vec![LayerSpec::conv1x1(32, CORNER_OFFSET_CHANNELS)],
                ),
            ],
        }
    }

    fn branch(&self, name: &str) -> Result<&Branch> {
        self.branches
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::invalid(format!("architecture has no `{name}` branch")))
    }

    /// Checks channel flow, skip references and head widths.
    pub fn validate(&self) -> Result<()> {
        let trunk = self.branches.first().filter(|b| b.name == TRUNK).ok_or_else(|| {
            Error::invalid("architecture must start with the trunk branch")
        })?;
        let trunk_out = validate_branch(trunk, 1)?;
        for (name, channels) in [
            (HEATMAP_HEAD, 1),
            (CENTER_HEAD, CENTER_OFFSET_CHANNELS),
            (CORNER_HEAD, CORNER_OFFSET_CHANNELS),
        ] {
            let head = self.branch(name)?;
            if head.layers.iter().any(|l| l.kind == LayerKind::AddSkip || l.stride != 1) {
                return Err(Error::invalid(format!("head `{name}` must be stride-1 without skips")));
            }
            let out = validate_branch(head, trunk_out)?;
            if out != channels {
                return Err(Error::invalid(format!(
                    "head `{name}` yields {out} channels, expected {channels}"
                )));
            }
        }
        if self.branches.len() != 4 {
            return Err(Error::invalid("architecture must have a trunk and three heads"));
        }
        if self.output_stride() == 0 {
            return Err(Error::invalid("trunk upsamples more than it downsamples"));
        }
        Ok(())
    }

    /// Input-to-output resolution ratio of the trunk.
    pub fn output_stride(&self) -> usize {
        let mut down = 1usize;
        let mut up = 1usize;
        for l in &self.branches[0].layers {
            down *= l.stride;
            if l.kind == LayerKind::Upsample2xNearest {
                up *= 2;
            }
        }
        if down % up == 0 {
            down / up
        } else {
            0
        }
    }

    /// Input dims must be divisible by this so every stride-2 stage sees even
    /// sizes.
    pub fn required_divisor(&self) -> usize {
        let mut cur = 1usize;
        let mut best = 1usize;
        for l in &self.branches[0].layers {
            cur *= l.stride;
            best = best.max(cur);
            if l.kind == LayerKind::Upsample2xNearest {
                cur /= 2;
            }
        }
        best
    }

    /// Parameter names and shapes in graph order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for branch in &self.branches {
            for (i, l) in branch.layers.iter().enumerate() {
                if let Some(k) = l.kind.kernel_size() {
                    out.push((
                        weight_name(&branch.name, i),
                        vec![l.out_channels, l.in_channels, k, k],
                    ));
                    out.push((bias_name(&branch.name, i), vec![l.out_channels]));
                }
            }
        }
        out
    }
}

fn validate_branch(branch: &Branch, input_channels: usize) -> Result<usize> {
    let mut outputs: Vec<usize> = Vec::with_capacity(branch.layers.len());
    let mut current = input_channels;
    for (i, l) in branch.layers.iter().enumerate() {
        let bad = |why: String| Error::invalid(format!("{} layer {i} ({l}): {why}", branch.name));
        if l.in_channels != current {
            return Err(bad(format!("expects {} channels, receives {current}", l.in_channels)));
        }
        if l.in_channels == 0 || l.out_channels == 0 {
            return Err(bad("zero channels".into()));
        }
        match l.kind {
            LayerKind::Conv3x3 | LayerKind::Conv1x1 => {
                if l.stride != 1 && l.stride != 2 {
                    return Err(bad("conv stride must be 1 or 2".into()));
                }
            }
            _ => {
                if l.stride != 1 || l.in_channels != l.out_channels {
                    return Err(bad("non-conv layers keep channels and stride 1".into()));
                }
            }
        }
        match (l.kind, l.skip_from) {
            (LayerKind::AddSkip, Some(from)) => {
                if from >= i || outputs[from] != current {
                    return Err(bad(format!("invalid skip source {from}")));
                }
            }
            (LayerKind::AddSkip, None) => return Err(bad("add_skip without source".into())),
            (_, Some(_)) => return Err(bad("only add_skip takes a source".into())),
            _ => {}
        }
        current = l.out_channels;
        outputs.push(current);
    }
    Ok(current)
}

pub fn weight_name(branch: &str, layer: usize) -> String {
    format!("{branch}.{layer}.weight")
}

pub fn bias_name(branch: &str, layer: usize) -> String {
    format!("{branch}.{layer}.bias")
}

/// He-normal kernels (std √(2 / fan_in)), zero biases, and a heatmap-head
/// bias of [`HEATMAP_PRIOR_BIAS`].
pub fn init_params(arch: &Architecture, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new();
    for branch in &arch.branches {
        for (i, l) in branch.layers.iter().enumerate() {
            let Some(k) = l.kind.kernel_size() else {
                continue;
            };
            let fan_in = (l.in_channels * k * k) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt())
                .map_err(|e| Error::Internal(e.to_string()))?;
            let shape = [l.out_channels, l.in_channels, k, k];
            let len = shape.iter().product();
            let data = (0..len).map(|_| normal.sample(&mut rng)).collect();
            params.insert(weight_name(&branch.name, i), Tensor::from_vec(&shape, data)?);
            let bias = if branch.name == HEATMAP_HEAD {
                HEATMAP_PRIOR_BIAS
            } else {
                0.0
            };
            params.insert(bias_name(&branch.name, i), Tensor::full(&[l.out_channels], bias));
        }
    }
    Ok(params)
}

/// Activations recorded by [`TinyNet::forward`]; `acts[b][i]` is the input
/// of layer `i` of branch `b`, and the last entry is the branch output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    acts: Vec<Vec<Tensor>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyNet {
    pub arch: Architecture,
    pub params: ModelParams,
}

impl TinyNet {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let params = init_params(&arch, seed)?;
        Ok(Self { arch, params })
    }

    pub fn desk_scale(seed: u64) -> Result<Self> {
        Self::new(Architecture::desk_scale(), seed)
    }

    /// Wraps existing parameters after checking them against the graph.
    pub fn from_parts(arch: Architecture, params: ModelParams) -> Result<Self> {
        arch.validate()?;
        let expected = arch.parameter_shapes();
        if expected.len() != params.len() {
            return Err(Error::invalid(format!(
                "architecture needs {} tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in expected {
            match params.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::invalid(format!(
                        "`{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::invalid(format!("missing parameter `{name}`"))),
            }
        }
        Ok(Self { arch, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Internal(format!("missing parameter `{name}`")))
    }

    pub fn forward(&self, image: &Tensor) -> Result<(PredictionMaps, ForwardCache)> {
        let (c, h, w) = image.chw()?;
        let div = self.arch.required_divisor();
        if c != 1 || h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::invalid(format!(
                "input must be 1×H×W with H, W divisible by {div}; got {:?}",
                image.shape()
            )));
        }
        let mut acts = Vec::with_capacity(self.arch.branches.len());
        let trunk = self.run_branch(&self.arch.branches[0], image.clone())?;
        let features = trunk.last().cloned().expect("branch output");
        acts.push(trunk);
        for branch in &self.arch.branches[1..] {
            acts.push(self.run_branch(branch, features.clone())?);
        }

        let output = |name: &str| -> Result<Tensor> {
            let idx = self
                .arch
                .branches
                .iter()
                .position(|b| b.name == name)
                .ok_or_else(|| Error::Internal(format!("no `{name}` head")))?;
            Ok(acts[idx].last().cloned().expect("branch output"))
        };
        let maps = PredictionMaps {
            heatmap: output(HEATMAP_HEAD)?,
            center_offset: output(CENTER_HEAD)?,
            corner_offset: output(CORNER_HEAD)?,
        };
        Ok((maps, ForwardCache { acts }))
    }

    /// Predicts without keeping the activation cache.
    pub fn predict(&self, image: &Tensor) -> Result<PredictionMaps> {
        Ok(self.forward(image)?.0)
    }

    fn run_branch(&self, branch: &Branch, input: Tensor) -> Result<Vec<Tensor>> {
        let mut acts = Vec::with_capacity(branch.layers.len() + 1);
        acts.push(input);
        for (i, l) in branch.layers.iter().enumerate() {
            let x = &acts[i];
            let y = match l.kind {
                LayerKind::Conv3x3 | LayerKind::Conv1x1 => conv2d(
                    x,
                    self.param(&weight_name(&branch.name, i))?,
                    self.param(&bias_name(&branch.name, i))?,
                    l.stride,
                )?,
                LayerKind::Relu => relu(x),
                LayerKind::Sigmoid => sigmoid(x),
                LayerKind::Upsample2xNearest => upsample2x(x)?,
                LayerKind::AddSkip => {
                    let from = l.skip_from.expect("validated skip");
                    let mut sum = x.clone();
                    sum.add_assign(&acts[from + 1])?;
                    sum
                }
            };
            acts.push(y);
        }
        Ok(acts)
    }

    /// Reverse-mode gradients of every parameter given the loss gradients on
    /// the three output maps.
    pub fn backward(&self, grads: &PredictionMaps, cache: &ForwardCache) -> Result<ModelParams> {
        let branches = &self.arch.branches;
        if cache.acts.len() != branches.len()
            || cache
                .acts
                .iter()
                .zip(branches)
                .any(|(a, b)| a.len() != b.layers.len() + 1)
        {
            return Err(Error::Internal(
                "forward cache does not match the network graph".into(),
            ));
        }

        let mut out = ModelParams::new();
        let mut grad_features: Option<Tensor> = None;
        for (b, branch) in branches.iter().enumerate().skip(1) {
            let upstream = match branch.name.as_str() {
                HEATMAP_HEAD => &grads.heatmap,
                CENTER_HEAD => &grads.center_offset,
                CORNER_HEAD => &grads.corner_offset,
                other => return Err(Error::Internal(format!("unexpected head `{other}`"))),
            };
            let g = self.backward_branch(branch, &cache.acts[b], upstream.clone(), &mut out)?;
            match grad_features.as_mut() {
                Some(acc) => acc.add_assign(&g)?,
                None => grad_features = Some(g),
            }
        }
        let g = grad_features.ok_or_else(|| Error::Internal("network has no heads".into()))?;
        self.backward_branch(&branches[0], &cache.acts[0], g, &mut out)?;
        Ok(out)
    }

    fn backward_branch(
        &self,
        branch: &Branch,
        acts: &[Tensor],
        grad_out: Tensor,
        out: &mut ModelParams,
    ) -> Result<Tensor> {
        let last = acts.last().expect("branch output");
        if grad_out.shape() != last.shape() {
            return Err(Error::Internal(format!(
                "{} gradient shape {:?} does not match output {:?}",
                branch.name,
                grad_out.shape(),
                last.shape()
            )));
        }
        // Extra gradient reaching a layer's output through a skip edge.
        let mut pending: Vec<Option<Tensor>> = vec![None; branch.layers.len()];
        let mut g = grad_out;
        for (i, l) in branch.layers.iter().enumerate().rev() {
            if let Some(extra) = pending[i].take() {
                g.add_assign(&extra)?;
            }
            g = match l.kind {
                LayerKind::Conv3x3 | LayerKind::Conv1x1 => {
                    let wname = weight_name(&branch.name, i);
                    let cg = conv2d_backward(&acts[i], self.param(&wname)?, l.stride, &g)?;
                    out.insert(wname, cg.kernel);
                    out.insert(bias_name(&branch.name, i), cg.bias);
                    cg.input
                }
                LayerKind::Relu => relu_backward(&acts[i], &g)?,
                LayerKind::Sigmoid => sigmoid_backward(&acts[i + 1], &g)?,
                LayerKind::Upsample2xNearest => upsample2x_backward(&g)?,
                LayerKind::AddSkip => {
                    let from = l.skip_from.expect("validated skip");
                    match pending[from].as_mut() {
                        Some(acc) => acc.add_assign(&g)?,
                        None => pending[from] = Some(g.clone()),
                    }
                    g
                }
            };
        }
        Ok(g)
    }
}
