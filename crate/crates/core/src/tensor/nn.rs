//! Forward/backward kernels for the layer primitives recorded on the tape:
//! batch normalization, grid average pooling, row bias and cross-entropy.

use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::error::{Error, Result};

/// `[B, C, rest...]` viewed as `(B, C, S)` with `S = Π rest`.
pub(crate) fn channel_view(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    let s = t.shape();
    if s.len() < 2 {
        return Err(Error::dim(op, "[B, C, ...]", s));
    }
    Ok((s[0], s[1], s[2..].iter().product()))
}

pub(crate) struct BatchNormForward {
    pub output: Tensor,
    pub normalized: Tensor,
    pub mean: Vec<f64>,
    /// Biased (population) variance of the batch.
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn batch_norm_forward(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<BatchNormForward> {
    let (b, c, s) = channel_view(x, "batch_norm")?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::dim("batch_norm", [c], gamma.shape()));
    }
    let count = (b * s) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    let xd = x.data();
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * s;
            mean[ch] += xd[base..base + s].iter().sum::<f64>();
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * s;
            let m = mean[ch];
            var[ch] += xd[base..base + s].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
    }
    for v in &mut var {
        *v /= count;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
    let mut normalized = Tensor::zeros(x.shape());
    let mut output = Tensor::zeros(x.shape());
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * s;
            let (m, is, g, bt) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in base..base + s {
                let n = (xd[i] - m) * is;
                normalized.data_mut()[i] = n;
                output.data_mut()[i] = g * n + bt;
            }
        }
    }
    Ok(BatchNormForward {
        output,
        normalized,
        mean,
        var,
        inv_std,
    })
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn batch_norm_backward(
    grad: &Tensor,
    normalized: &Tensor,
    inv_std: &[f64],
    gamma: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (b, c, s) = channel_view(grad, "batch_norm").expect("validated in forward");
    let count = (b * s) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let (g, n) = (grad.data(), normalized.data());
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * s;
            for i in base..base + s {
                dbeta[ch] += g[i];
                dgamma[ch] += g[i] * n[i];
            }
        }
    }
    let mut dx = Tensor::zeros(grad.shape());
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * s;
            let scale = gamma.data()[ch] * inv_std[ch] / count;
            for i in base..base + s {
                dx.data_mut()[i] = scale * (count * g[i] - dbeta[ch] - n[i] * dgamma[ch]);
            }
        }
    }
    (
        dx,
        Tensor::new(&[c], dgamma).expect("c > 0"),
        Tensor::new(&[c], dbeta).expect("c > 0"),
    )
}

/// `y = (x - mean) * inv_std * gamma + beta` per channel, with fixed statistics.
pub(crate) fn channel_affine(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f64],
    inv_std: &[f64],
) -> Result<Tensor> {
    let (b, c, s) = channel_view(x, "channel_affine")?;
    if gamma.shape() != [c] || beta.shape() != [c] || mean.len() != c || inv_std.len() != c {
        return Err(Error::dim("channel_affine", [c], gamma.shape()));
    }
    let mut out = Tensor::zeros(x.shape());
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * s;
            let (m, is, g, bt) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in base..base + s {
                out.data_mut()[i] = (x.data()[i] - m) * is * g + bt;
            }
        }
    }
    Ok(out)
}

/// Adaptive bin `[start, end)` along an axis of length `n` split into `g` bins.
fn bin(i: usize, n: usize, g: usize) -> (usize, usize) {
    (i * n / g, ((i + 1) * n).div_ceil(g))
}

/// Average-pools `[B, C, H, W]` onto a `grid x grid` output per channel.
pub(crate) fn avg_pool_grid(x: &Tensor, grid: usize) -> Result<Tensor> {
    let &[b, c, h, w] = x.shape() else {
        return Err(Error::dim("avg_pool_grid", "[B, C, H, W]", x.shape()));
    };
    if grid == 0 || grid > h || grid > w {
        return Err(Error::arg(
            "avg_pool_grid",
            alloc::format!("grid {grid} does not fit {h}x{w}"),
        ));
    }
    let mut out = Tensor::zeros(&[b, c, grid, grid]);
    for plane in 0..b * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        for gy in 0..grid {
            let (y0, y1) = bin(gy, h, grid);
            for gx in 0..grid {
                let (x0, x1) = bin(gx, w, grid);
                let mut acc = 0.0;
                for yy in y0..y1 {
                    acc += src[yy * w + x0..yy * w + x1].iter().sum::<f64>();
                }
                out.data_mut()[(plane * grid + gy) * grid + gx] = acc / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    Ok(out)
}

pub(crate) fn avg_pool_grid_backward(grad: &Tensor, input_shape: &[usize]) -> Tensor {
    let &[b, c, h, w] = input_shape else {
        unreachable!("validated in forward")
    };
    let grid = grad.shape()[2];
    let mut dx = Tensor::zeros(input_shape);
    for plane in 0..b * c {
        let dst = &mut dx.data_mut()[plane * h * w..(plane + 1) * h * w];
        for gy in 0..grid {
            let (y0, y1) = bin(gy, h, grid);
            for gx in 0..grid {
                let (x0, x1) = bin(gx, w, grid);
                let g = grad.data()[(plane * grid + gy) * grid + gx] / ((y1 - y0) * (x1 - x0)) as f64;
                for yy in y0..y1 {
                    for v in &mut dst[yy * w + x0..yy * w + x1] {
                        *v += g;
                    }
                }
            }
        }
    }
    dx
}

/// `[B, K] + [K]` broadcast over rows.
pub(crate) fn add_row_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let &[_, k] = x.shape() else {
        return Err(Error::dim("add_bias", "[B, K]", x.shape()));
    };
    if bias.shape() != [k] {
        return Err(Error::dim("add_bias", [k], bias.shape()));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(k) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(out)
}

pub(crate) fn column_sums(g: &Tensor) -> Tensor {
    let k = g.shape()[1];
    let mut out = vec![0.0; k];
    for row in g.data().chunks(k) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::new(&[k], out).expect("k > 0")
}

/// Row-wise softmax of `[B, K]` logits.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let &[_, k] = logits.shape() else {
        return Err(Error::dim("softmax", "[B, K]", logits.shape()));
    };
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Mean cross-entropy of `[B, K]` logits against integer labels. Returns the
/// loss together with the softmax probabilities.
pub(crate) fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let &[b, k] = logits.shape() else {
        return Err(Error::dim("cross_entropy", "[B, K]", logits.shape()));
    };
    if labels.len() != b {
        return Err(Error::dim("cross_entropy", b, labels.len()));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, num_classes: k });
    }
    let probs = softmax(logits)?;
    let mut loss = 0.0;
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
        loss += lse - row[label];
    }
    Ok((loss / b as f64, probs))
}
