//! Layer primitives with hand-written backward passes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

struct ConvGeometry {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

fn conv_geometry(input: &Tensor, kernel: &Tensor, stride: usize) -> Result<ConvGeometry> {
    let (c_in, h, w) = input.chw()?;
    let &[c_out, k_in, kh, kw] = kernel.shape() else {
        return Err(Error::invalid(format!(
            "kernel must be out×in×kh×kw, got {:?}",
            kernel.shape()
        )));
    };
    if k_in != c_in {
        return Err(Error::invalid(format!(
            "kernel expects {k_in} input channels, input has {c_in}"
        )));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::invalid(format!("kernel must be square and odd, got {kh}×{kw}")));
    }
    if stride != 1 && stride != 2 {
        return Err(Error::invalid(format!("stride must be 1 or 2, got {stride}")));
    }
    if stride == 2 && (h % 2 != 0 || w % 2 != 0) {
        return Err(Error::invalid(format!("stride 2 needs even dims, got {h}×{w}")));
    }
    let pad = kh / 2;
    Ok(ConvGeometry {
        c_in,
        c_out,
        h,
        w,
        k: kh,
        pad,
        stride,
        oh: (h + 2 * pad - kh) / stride + 1,
        ow: (w + 2 * pad - kw) / stride + 1,
    })
}

/// Output positions `o` for which `o·stride + tap − pad` lands inside `0..len`.
fn valid_range(len: usize, out_len: usize, tap: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if tap >= pad {
        0
    } else {
        (pad - tap).div_ceil(stride)
    };
    // o·stride + tap − pad ≤ len − 1
    let hi = if len + pad > tap {
        ((len - 1 + pad - tap) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Zero-padded cross-correlation. Square odd kernels pad by `k / 2`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let g = conv_geometry(input, kernel, stride)?;
    if bias.len() != g.c_out {
        return Err(Error::invalid(format!(
            "bias has {} entries, kernel has {} outputs",
            bias.len(),
            g.c_out
        )));
    }
    let mut out = Tensor::zeros(&[g.c_out, g.oh, g.ow]);
    let (x, wt, b) = (input.data(), kernel.data(), bias.data());
    let o = out.data_mut();
    let plane_out = g.oh * g.ow;

    for oc in 0..g.c_out {
        let dst = &mut o[oc * plane_out..(oc + 1) * plane_out];
        dst.fill(b[oc]);
        for ic in 0..g.c_in {
            let src = &x[ic * g.h * g.w..(ic + 1) * g.h * g.w];
            for ky in 0..g.k {
                let (y0, y1) = valid_range(g.h, g.oh, ky, g.pad, g.stride);
                for kx in 0..g.k {
                    let weight = wt[((oc * g.c_in + ic) * g.k + ky) * g.k + kx];
                    let (x0, x1) = valid_range(g.w, g.ow, kx, g.pad, g.stride);
                    for oy in y0..y1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let row_in = &src[iy * g.w..(iy + 1) * g.w];
                        let row_out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                        for ox in x0..x1 {
                            row_out[ox] += weight * row_in[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let g = conv_geometry(input, kernel, stride)?;
    if grad_out.shape() != [g.c_out, g.oh, g.ow] {
        return Err(Error::invalid(format!(
            "conv backward: grad shape {:?}, expected {:?}",
            grad_out.shape(),
            [g.c_out, g.oh, g.ow]
        )));
    }
    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_kernel = Tensor::zeros(kernel.shape());
    let mut grad_bias = Tensor::zeros(&[g.c_out]);
    let (x, wt, go) = (input.data(), kernel.data(), grad_out.data());
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;

    for oc in 0..g.c_out {
        let gsrc = &go[oc * plane_out..(oc + 1) * plane_out];
        grad_bias.data_mut()[oc] = gsrc.iter().sum();
        for ic in 0..g.c_in {
            let src = &x[ic * plane_in..(ic + 1) * plane_in];
            let gin = &mut grad_input.data_mut()[ic * plane_in..(ic + 1) * plane_in];
            for ky in 0..g.k {
                let (y0, y1) = valid_range(g.h, g.oh, ky, g.pad, g.stride);
                for kx in 0..g.k {
                    let widx = ((oc * g.c_in + ic) * g.k + ky) * g.k + kx;
                    let weight = wt[widx];
                    let (x0, x1) = valid_range(g.w, g.ow, kx, g.pad, g.stride);
                    let mut acc = 0.0;
                    for oy in y0..y1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let row_g = &gsrc[oy * g.ow..(oy + 1) * g.ow];
                        for ox in x0..x1 {
                            let ix = iy * g.w + ox * g.stride + kx - g.pad;
                            acc += src[ix] * row_g[ox];
                            gin[ix] += weight * row_g[ox];
                        }
                    }
                    grad_kernel.data_mut()[widx] += acc;
                }
            }
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        kernel: grad_kernel,
        bias: grad_bias,
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient through ReLU given the forward input; the subgradient at 0 is 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    input.require_same_shape(grad_out, "relu backward")?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Gradient through the sigmoid given its forward output.
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    output.require_same_shape(grad_out, "sigmoid backward")?;
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();
    Tensor::from_vec(output.shape(), data)
}

/// Nearest-neighbour 2× upsampling of a C×H×W map.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    let mut out = Tensor::zeros(&[c, 2 * h, 2 * w]);
    for ch in 0..c {
        for y in 0..2 * h {
            for xo in 0..2 * w {
                out.set3(ch, y, xo, x.at3(ch, y / 2, xo / 2));
            }
        }
    }
    Ok(out)
}

/// Sums each 2×2 block of the upstream gradient.
pub fn upsample2x_backward(grad_out: &Tensor) -> Result<Tensor> {
    let (c, h2, w2) = grad_out.chw()?;
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(Error::invalid(format!(
            "upsample backward needs even dims, got {h2}×{w2}"
        )));
    }
    let mut out = Tensor::zeros(&[c, h2 / 2, w2 / 2]);
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                let cur = out.at3(ch, y / 2, x / 2);
                out.set3(ch, y / 2, x / 2, cur + grad_out.at3(ch, y, x));
            }
        }
    }
    Ok(out)
}
