//! Heatmap focal loss and masked L1 offset loss, each returned together with
//! its analytic gradient with respect to the prediction.

use crate::codec::{PredictionMaps, TargetMaps};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub beta: f64,
    /// Lower clamp applied to both log arguments.
    pub epsilon: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 4.0,
            epsilon: 1e-12,
        }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::invalid("focal alpha and beta must be nonnegative"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1e-6) {
            return Err(Error::invalid("focal epsilon must lie in (0, 1e-6)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBundle {
    pub value: f64,
    pub grad: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub heatmap: f64,
    pub center_offset: f64,
    pub corner_offset: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            heatmap: 1.0,
            center_offset: 1.0,
            corner_offset: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for w in [self.heatmap, self.center_offset, self.corner_offset] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(format!(
                    "loss weights must be finite and nonnegative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

fn check_inputs(pred: &Tensor, target: &Tensor, what: &str) -> Result<()> {
    pred.require_same_shape(target, what)?;
    if pred.data().iter().chain(target.data()).any(|v| v.is_nan()) {
        return Err(Error::invalid(format!("{what}: NaN in inputs")));
    }
    Ok(())
}

/// Penalty-reduced focal loss on a post-sigmoid heatmap, normalized by the
/// number of cells. Cells whose target is exactly 1.0 are positives.
pub fn focal_loss(pred: &Tensor, target: &Tensor, params: &FocalParams) -> Result<LossBundle> {
    check_inputs(pred, target, "focal loss")?;
    params.validate()?;
    let FocalParams {
        alpha,
        beta,
        epsilon,
    } = *params;
    let inv_n = 1.0 / pred.len().max(1) as f64;

    let mut value = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &y) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
    {
        if y == 1.0 {
            // −(1−p)^α log p
            let q = 1.0 - p;
            let (log_p, dlog_p) = if p > epsilon {
                (p.ln(), 1.0 / p)
            } else {
                (epsilon.ln(), 0.0)
            };
            value -= q.powf(alpha) * log_p;
            let dq_alpha = if alpha == 0.0 {
                0.0
            } else {
                alpha * q.powf(alpha - 1.0)
            };
            *g = -(-dq_alpha * log_p + q.powf(alpha) * dlog_p) * inv_n;
        } else {
            // −(1−y)^β p^α log(1−p)
            let w = (1.0 - y).powf(beta);
            let q = 1.0 - p;
            let (log_q, dlog_q) = if q > epsilon {
                (q.ln(), -1.0 / q)
            } else {
                (epsilon.ln(), 0.0)
            };
            value -= w * p.powf(alpha) * log_q;
            let dp_alpha = if alpha == 0.0 {
                0.0
            } else {
                alpha * p.powf(alpha - 1.0)
            };
            *g = -w * (dp_alpha * log_q + p.powf(alpha) * dlog_q) * inv_n;
        }
    }
    Ok(LossBundle {
        value: value * inv_n,
        grad,
    })
}

/// L1 distance over the masked cells (all channels), divided by the number
/// of masked cells. An empty mask yields zero loss and zero gradient.
pub fn masked_l1(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<LossBundle> {
    check_inputs(pred, target, "masked L1")?;
    let (c, h, w) = pred.chw()?;
    if mask.shape() != [1, h, w] {
        return Err(Error::invalid(format!(
            "masked L1: mask shape {:?} does not broadcast over {:?}",
            mask.shape(),
            pred.shape()
        )));
    }
    let mut grad = Tensor::zeros(pred.shape());
    let count = mask.sum();
    if count <= 0.0 {
        return Ok(LossBundle { value: 0.0, grad });
    }

    let plane = h * w;
    let mut value = 0.0;
    let (p, t, m) = (pred.data(), target.data(), mask.data());
    let g = grad.data_mut();
    for ch in 0..c {
        for i in 0..plane {
            let weight = m[i];
            if weight == 0.0 {
                continue;
            }
            let k = ch * plane + i;
            let diff = p[k] - t[k];
            value += weight * diff.abs();
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            g[k] = weight * sign / count;
        }
    }
    Ok(LossBundle {
        value: value / count,
        grad,
    })
}

/// Weighted training objective with per-map gradients (already scaled by the
/// weights).
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub heatmap: f64,
    pub center_offset: f64,
    pub corner_offset: f64,
    pub grads: PredictionMaps,
}

pub fn total_loss(
    pred: &PredictionMaps,
    tgt: &TargetMaps,
    weights: &LossWeights,
    params: &FocalParams,
) -> Result<TotalLoss> {
    weights.validate()?;
    let hm = focal_loss(&pred.heatmap, &tgt.heatmap, params)?;
    let co = masked_l1(&pred.center_offset, &tgt.center_offset, &tgt.center_mask)?;
    let cr = masked_l1(&pred.corner_offset, &tgt.corner_offset, &tgt.center_mask)?;
    let value =
        weights.heatmap * hm.value + weights.center_offset * co.value + weights.corner_offset * cr.value;
    Ok(TotalLoss {
        value,
        heatmap: hm.value,
        center_offset: co.value,
        corner_offset: cr.value,
        grads: PredictionMaps {
            heatmap: hm.grad.scale(weights.heatmap),
            center_offset: co.grad.scale(weights.center_offset),
            corner_offset: cr.grad.scale(weights.corner_offset),
        },
    })
}
