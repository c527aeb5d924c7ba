//! Axis-oriented kernels: concat, narrow, axis sums and softmax.
//!
//! Each works on the `(outer, axis, inner)` factorization of a row-major shape.

use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(shape_err(op, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok(())
}

pub fn concat<T: Real>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| shape_err("concat", "no inputs"))?;
    check_axis("concat", first.shape(), axis)?;
    let mut shape = first.shape().to_vec();
    let mut total = 0;
    for p in parts {
        let s = p.shape();
        let same = s.len() == shape.len()
            && s.iter().zip(&shape).enumerate().all(|(d, (a, b))| d == axis || a == b);
        if !same {
            return Err(shape_err(
                "concat",
                format!("non-axis extents differ: {:?} vs {:?} (axis {axis})", s, first.shape()),
            ));
        }
        total += s[axis];
    }
    shape[axis] = total;
    let (outer, _, inner) = split_at_axis(&shape, axis);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let len = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * len..(o + 1) * len]);
        }
    }
    Tensor::new(&shape, data)
}

/// The sub-range `[start, start + len)` of `axis`.
pub fn narrow<T: Real>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    check_axis("narrow", x.shape(), axis)?;
    let (outer, extent, inner) = split_at_axis(x.shape(), axis);
    if len == 0 || start + len > extent {
        return Err(shape_err(
            "narrow",
            format!("range {start}..{} exceeds extent {extent}", start + len),
        ));
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        data.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    Tensor::new(&shape, data)
}

/// Adjoint of [`narrow`]: embeds `g` into zeros of `full_shape`.
pub fn narrow_backward<T: Real>(g: &Tensor<T>, full_shape: &[usize], axis: usize, start: usize) -> Tensor<T> {
    let (outer, extent, inner) = split_at_axis(full_shape, axis);
    let len = g.shape()[axis];
    let mut out = Tensor::zeros(full_shape);
    let d = out.data_mut();
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        d[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
    }
    out
}

/// Sums over `axis`, removing it from the shape.
pub fn sum_axis<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    check_axis("sum_axis", x.shape(), axis)?;
    let (outer, extent, inner) = split_at_axis(x.shape(), axis);
    let mut data = vec![T::zero(); outer * inner];
    let xd = x.data();
    for o in 0..outer {
        let dst = &mut data[o * inner..(o + 1) * inner];
        for a in 0..extent {
            let src = &xd[(o * extent + a) * inner..(o * extent + a + 1) * inner];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    if shape.is_empty() {
        return Ok(Tensor::scalar(data[0]));
    }
    Tensor::new(&shape, data)
}

pub fn sum_axis_backward<T: Real>(g: &Tensor<T>, full_shape: &[usize], axis: usize) -> Tensor<T> {
    let (outer, extent, inner) = split_at_axis(full_shape, axis);
    let mut out = Tensor::zeros(full_shape);
    let d = out.data_mut();
    let gd = g.data();
    for o in 0..outer {
        for a in 0..extent {
            d[(o * extent + a) * inner..(o * extent + a + 1) * inner]
                .copy_from_slice(&gd[o * inner..(o + 1) * inner]);
        }
    }
    out
}

/// Softmax along `axis`, stabilized by subtracting the per-slice maximum.
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    check_axis("softmax", x.shape(), axis)?;
    let (outer, extent, inner) = split_at_axis(x.shape(), axis);
    let xd = x.data();
    let mut y = vec![T::zero(); xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * extent + a) * inner + i;
            let m = (0..extent).map(|a| xd[at(a)]).fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for a in 0..extent {
                let e = (xd[at(a)] - m).exp();
                y[at(a)] = e;
                s += e;
            }
            for a in 0..extent {
                y[at(a)] = y[at(a)] / s;
            }
        }
    }
    Tensor::new(x.shape(), y)
}

/// `dx = y * (g - sum_axis(g * y))`.
pub fn softmax_backward<T: Real>(y: &Tensor<T>, g: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, extent, inner) = split_at_axis(y.shape(), axis);
    let (yd, gd) = (y.data(), g.data());
    let mut dx = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * extent + a) * inner + i;
            let dot: T = (0..extent).map(|a| yd[at(a)] * gd[at(a)]).sum();
            for a in 0..extent {
                dx[at(a)] = yd[at(a)] * (gd[at(a)] - dot);
            }
        }
    }
    Tensor::new(y.shape(), dx).expect("shape preserved")
}
