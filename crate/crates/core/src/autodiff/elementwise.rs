//! Value-wise kernels and equal-rank broadcasting.
//!
//! Two operands broadcast when they have the same rank and every axis either
//! matches or is 1 on one side (e.g. `(h, w, 1)` against `(h, w, d)`).

use crate::error::{shape_err, Result};
use crate::tensor::{numel_of, Real, Tensor};

pub const LEAKY_SLOPE: f64 = 0.01;

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(shape_err(
            "broadcast",
            format!("rank mismatch {a:?} vs {b:?}"),
        ));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(shape_err("broadcast", format!("{a:?} vs {b:?}"))),
        })
        .collect()
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        s[d] = acc;
        acc *= shape[d];
    }
    s
}

/// Strides of `shape` viewed inside `out`, zero on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    contiguous_strides(shape)
        .into_iter()
        .zip(shape.iter().zip(out))
        .map(|(s, (&d, &o))| if d == 1 && o != 1 { 0 } else { s })
        .collect()
}

/// Calls `f(out_index, a_index, b_index)` for every element of `out`.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let total = numel_of(out);
    let last = rank - 1;
    let inner = out[last];
    let (la, lb) = (sa[last], sb[last]);
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut o = 0;
    while o < total {
        for k in 0..inner {
            f(o + k, ia + k * la, ib + k * lb);
        }
        o += inner;
        let mut d = last;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub fn broadcast_binary<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out = broadcast_shape(a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut data = vec![T::zero(); numel_of(&out)];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&out, &sa, &sb, |o, i, j| data[o] = f(ad[i], bd[j]));
    Tensor::new(&out, data)
}

/// Sums a broadcast result back down to `shape` (the adjoint of broadcasting).
pub fn sum_to_shape<T: Real>(t: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if t.shape() == shape {
        return Ok(t.clone());
    }
    let out = t.shape();
    let st = contiguous_strides(out);
    let sr = broadcast_strides(shape, out);
    let mut data = vec![T::zero(); numel_of(shape)];
    let td = t.data();
    for_each_broadcast(out, &st, &sr, |_, i, j| data[j] += td[i]);
    Tensor::new(shape, data)
}

/// `sum_to_shape(a * b)`, the gradient of one factor of a broadcast product.
pub(crate) fn mul_sum_to_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    sum_to_shape(&broadcast_binary(a, b, |x, y| x * y)?, shape)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Relu,
    LeakyRelu,
    Exp,
    Abs,
    Pow(f64),
    Scale(f64),
}

pub fn unary<T: Real>(x: &Tensor<T>, op: Unary) -> Tensor<T> {
    match op {
        Unary::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
        Unary::LeakyRelu => {
            let s = T::lit(LEAKY_SLOPE);
            x.map(|v| if v > T::zero() { v } else { v * s })
        }
        Unary::Exp => x.map(T::exp),
        Unary::Abs => x.map(T::abs),
        Unary::Pow(p) => {
            if p == 2.0 {
                x.map(|v| v * v)
            } else {
                let p = T::lit(p);
                x.map(|v| v.powf(p))
            }
        }
        Unary::Scale(c) => {
            let c = T::lit(c);
            x.map(|v| v * c)
        }
    }
}

/// Gradient of a unary op given its input `x`, output `y` and upstream `g`.
pub fn unary_backward<T: Real>(x: &Tensor<T>, y: &Tensor<T>, g: &Tensor<T>, op: Unary) -> Tensor<T> {
    let zero = T::zero();
    let data: Vec<T> = match op {
        Unary::Relu => x
            .data()
            .iter()
            .zip(g.data())
            .map(|(&v, &gv)| if v > zero { gv } else { zero })
            .collect(),
        Unary::LeakyRelu => {
            let s = T::lit(LEAKY_SLOPE);
            x.data()
                .iter()
                .zip(g.data())
                .map(|(&v, &gv)| if v > zero { gv } else { gv * s })
                .collect()
        }
        Unary::Exp => y.data().iter().zip(g.data()).map(|(&e, &gv)| e * gv).collect(),
        Unary::Abs => x
            .data()
            .iter()
            .zip(g.data())
            .map(|(&v, &gv)| gv * sign(v))
            .collect(),
        Unary::Pow(p) => {
            if p == 2.0 {
                let two = T::lit(2.0);
                x.data().iter().zip(g.data()).map(|(&v, &gv)| two * v * gv).collect()
            } else {
                let (pp, pm1) = (T::lit(p), T::lit(p - 1.0));
                x.data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| gv * pp * v.powf(pm1))
                    .collect()
            }
        }
        Unary::Scale(c) => {
            let c = T::lit(c);
            g.data().iter().map(|&gv| gv * c).collect()
        }
    };
    Tensor::new(x.shape(), data).expect("shape preserved")
}

/// Element-wise sign with `sign(0) = 0`.
pub fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
