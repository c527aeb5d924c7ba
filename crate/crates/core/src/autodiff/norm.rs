//! Batch and group normalization over NCHW tensors.
//!
//! Both share the same per-slice math: `xhat = (x - mean) / sqrt(var + eps)`
//! with the biased variance, followed by a per-channel affine map.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

fn nchw<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<[usize; 4]> {
    match *t.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        ref s => Err(shape_err(op, format!("expected NCHW, got {s:?}"))),
    }
}

fn check_affine<T: Real>(op: &'static str, gamma: &Tensor<T>, beta: &Tensor<T>, c: usize) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err(
            op,
            format!("scale {:?} / shift {:?} must be [{c}]", gamma.shape(), beta.shape()),
        ));
    }
    Ok(())
}

/// Saved state for the backward pass of a normalization.
#[derive(Debug, Clone)]
pub struct NormCache<T: Real> {
    pub xhat: Tensor<T>,
    /// One entry per normalized slice (channel for batch norm, (sample, group) for group norm).
    pub inv_std: Vec<T>,
}

/// Batch statistics observed during a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats<T: Real> {
    pub mean: Vec<T>,
    /// Unbiased per-channel variance (used for the running estimate).
    pub var_unbiased: Vec<T>,
}

/// Training-mode batch norm: normalizes each channel over `(B, H, W)`.
pub fn batch_norm_train<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, NormCache<T>, BatchStats<T>)> {
    let [b, c, h, w] = nchw("batch_norm", x)?;
    check_affine("batch_norm", gamma, beta, c)?;
    let plane = h * w;
    let count = b * plane;
    if count < 2 {
        return Err(Error::InvalidArgument(format!(
            "batch_norm in train mode needs at least 2 values per channel, got {count}"
        )));
    }
    let n = T::from_usize(count).unwrap();
    let eps = T::lit(NORM_EPS);
    let xd = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for bi in 0..b {
            let off = (bi * c + ch) * plane;
            s += xd[off..off + plane].iter().copied().sum::<T>();
        }
        let m = s / n;
        let mut v = T::zero();
        for bi in 0..b {
            let off = (bi * c + ch) * plane;
            for &val in &xd[off..off + plane] {
                v += (val - m) * (val - m);
            }
        }
        mean[ch] = m;
        var[ch] = v;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v / n + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * plane;
            let (m, is, g, bt) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in off..off + plane {
                let xh = (xd[i] - m) * is;
                xhat[i] = xh;
                y[i] = g * xh + bt;
            }
        }
    }
    let nm1 = T::from_usize(count - 1).unwrap();
    let stats = BatchStats {
        mean,
        var_unbiased: var.iter().map(|&v| v / nm1).collect(),
    };
    Ok((
        Tensor::new(x.shape(), y)?,
        NormCache {
            xhat: Tensor::new(x.shape(), xhat)?,
            inv_std,
        },
        stats,
    ))
}

/// Eval-mode batch norm with frozen running statistics.
pub fn batch_norm_eval<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let [b, c, h, w] = nchw("batch_norm", x)?;
    check_affine("batch_norm", gamma, beta, c)?;
    check_affine("batch_norm", running_mean, running_var, c)?;
    let plane = h * w;
    let eps = T::lit(NORM_EPS);
    let inv_std: Vec<T> = running_var
        .data()
        .iter()
        .map(|&v| T::one() / (v + eps).sqrt())
        .collect();
    let xd = x.data();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * plane;
            let (m, is) = (running_mean.data()[ch], inv_std[ch]);
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            for i in off..off + plane {
                let xh = (xd[i] - m) * is;
                xhat[i] = xh;
                y[i] = g * xh + bt;
            }
        }
    }
    Ok((
        Tensor::new(x.shape(), y)?,
        NormCache {
            xhat: Tensor::new(x.shape(), xhat)?,
            inv_std,
        },
    ))
}

/// Sums of `g` and `g * xhat` per channel, i.e. the shift and scale gradients.
fn affine_grads<T: Real>(g: &[T], xhat: &[T], b: usize, c: usize, plane: usize) -> (Vec<T>, Vec<T>) {
    let mut d_gamma = vec![T::zero(); c];
    let mut d_beta = vec![T::zero(); c];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * plane;
            for i in off..off + plane {
                d_gamma[ch] += g[i] * xhat[i];
                d_beta[ch] += g[i];
            }
        }
    }
    (d_gamma, d_beta)
}

/// Returns `(d_x, d_gamma, d_beta)` for [`batch_norm_train`].
pub fn batch_norm_train_backward<T: Real>(
    grad_out: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &NormCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [b, c, h, w] = nchw("batch_norm_backward", grad_out)?;
    let plane = h * w;
    let n = T::from_usize(b * plane).unwrap();
    let g = grad_out.data();
    let xh = cache.xhat.data();
    let (d_gamma, d_beta) = affine_grads(g, xh, b, c, plane);
    let mut dx = vec![T::zero(); g.len()];
    for ch in 0..c {
        // d_xhat = g * gamma; sums below are over the channel's (B, H, W) slice.
        let gm = gamma.data()[ch];
        let sum_dxh = d_beta[ch] * gm;
        let sum_dxh_xh = d_gamma[ch] * gm;
        let k = cache.inv_std[ch] / n;
        for bi in 0..b {
            let off = (bi * c + ch) * plane;
            for i in off..off + plane {
                dx[i] = k * (n * g[i] * gm - sum_dxh - xh[i] * sum_dxh_xh);
            }
        }
    }
    Ok((
        Tensor::new(grad_out.shape(), dx)?,
        Tensor::new(&[c], d_gamma)?,
        Tensor::new(&[c], d_beta)?,
    ))
}

/// Returns `(d_x, d_gamma, d_beta)` for [`batch_norm_eval`].
pub fn batch_norm_eval_backward<T: Real>(
    grad_out: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &NormCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [b, c, h, w] = nchw("batch_norm_backward", grad_out)?;
    let plane = h * w;
    let g = grad_out.data();
    let (d_gamma, d_beta) = affine_grads(g, cache.xhat.data(), b, c, plane);
    let mut dx = vec![T::zero(); g.len()];
    for bi in 0..b {
        for ch in 0..c {
            let s = gamma.data()[ch] * cache.inv_std[ch];
            let off = (bi * c + ch) * plane;
            for i in off..off + plane {
                dx[i] = g[i] * s;
            }
        }
    }
    Ok((
        Tensor::new(grad_out.shape(), dx)?,
        Tensor::new(&[c], d_gamma)?,
        Tensor::new(&[c], d_beta)?,
    ))
}

/// Group norm: for every sample, channels are split into `groups` contiguous
/// groups and each `(C/groups) x H x W` slice is normalized.
pub fn group_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    groups: usize,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let [b, c, h, w] = nchw("group_norm", x)?;
    check_affine("group_norm", gamma, beta, c)?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::InvalidArgument(format!(
            "group_norm: {c} channels not divisible into {groups} groups"
        )));
    }
    let plane = h * w;
    let cpg = c / groups;
    let len = cpg * plane;
    let n = T::from_usize(len).unwrap();
    let eps = T::lit(NORM_EPS);
    let xd = x.data();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    let mut inv_std = Vec::with_capacity(b * groups);
    for bi in 0..b {
        for gi in 0..groups {
            let off = (bi * c + gi * cpg) * plane;
            let slice = &xd[off..off + len];
            let m = slice.iter().copied().sum::<T>() / n;
            let v = slice.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / n;
            let is = T::one() / (v + eps).sqrt();
            inv_std.push(is);
            for (j, &val) in slice.iter().enumerate() {
                let ch = gi * cpg + j / plane;
                let xh = (val - m) * is;
                xhat[off + j] = xh;
                y[off + j] = gamma.data()[ch] * xh + beta.data()[ch];
            }
        }
    }
    Ok((
        Tensor::new(x.shape(), y)?,
        NormCache {
            xhat: Tensor::new(x.shape(), xhat)?,
            inv_std,
        },
    ))
}

/// Returns `(d_x, d_gamma, d_beta)` for [`group_norm`].
pub fn group_norm_backward<T: Real>(
    grad_out: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &NormCache<T>,
    groups: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [b, c, h, w] = nchw("group_norm_backward", grad_out)?;
    let plane = h * w;
    let cpg = c / groups;
    let len = cpg * plane;
    let n = T::from_usize(len).unwrap();
    let g = grad_out.data();
    let xh = cache.xhat.data();
    let (d_gamma, d_beta) = affine_grads(g, xh, b, c, plane);
    let mut dx = vec![T::zero(); g.len()];
    let mut dxh = vec![T::zero(); len];
    for bi in 0..b {
        for gi in 0..groups {
            let off = (bi * c + gi * cpg) * plane;
            let mut s1 = T::zero();
            let mut s2 = T::zero();
            for j in 0..len {
                let ch = gi * cpg + j / plane;
                let d = g[off + j] * gamma.data()[ch];
                dxh[j] = d;
                s1 += d;
                s2 += d * xh[off + j];
            }
            let k = cache.inv_std[bi * groups + gi] / n;
            for j in 0..len {
                dx[off + j] = k * (n * dxh[j] - s1 - xh[off + j] * s2);
            }
        }
    }
    Ok((
        Tensor::new(grad_out.shape(), dx)?,
        Tensor::new(&[c], d_gamma)?,
        Tensor::new(&[c], d_beta)?,
    ))
}
