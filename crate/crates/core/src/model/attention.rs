use crate::autodiff::Var;
use crate::error::{shape_err, Result};
use crate::tensor::Real;

/// Multi-head learnable convolutional attention.
///
/// `q`, `k`, `v` are `[n*s, d, h, w]` where `s` is the number of positions per
/// cube. Each head owns a scoring conv `F` with kernel `[1, 2*d/H, 3, 3]` that
/// sees the channel concatenation of a query map and a key map. The score map
/// for the pair (i, j) is `leaky(F(concat(Q_i, K_j)))`, softmax-normalized over
/// `j` per pixel; head output `i` is `sum_j A_i^j * V_j` with the single score
/// channel broadcast across the head's value channels. Heads are concatenated
/// along channels with no output projection.
///
/// A conv over a channel concatenation is the sum of the convs over each part,
/// so `F(concat(Q_i, K_j)) = F_q(Q_i) + F_k(K_j) + b`: each part is evaluated
/// once per position instead of once per pair.
pub fn multi_head_attention<'g, T: Real>(
    q: Var<'g, T>,
    k: Var<'g, T>,
    v: Var<'g, T>,
    heads: &[(Var<'g, T>, Var<'g, T>)],
    s: usize,
) -> Result<Var<'g, T>> {
    let shape = q.shape();
    if shape.len() != 4 || k.shape() != shape || v.shape() != shape {
        return Err(shape_err(
            "attention",
            format!("q {:?}, k {:?}, v {:?} must match", shape, k.shape(), v.shape()),
        ));
    }
    let (bsz, d, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if heads.is_empty() || d % heads.len() != 0 || s == 0 || bsz % s != 0 {
        return Err(shape_err(
            "attention",
            format!("{} heads over d={d}, {s} positions over batch {bsz}", heads.len()),
        ));
    }
    let n = bsz / s;
    let dh = d / heads.len();
    let hw = h * w;
    let mut outs = Vec::with_capacity(heads.len());
    for (hi, &(kernel, bias)) in heads.iter().enumerate() {
        let a = head_scores(q, k, kernel, bias, hi, heads.len(), s)?;
        let vh = v.narrow(1, hi * dh, dh)?;
        let mixed = a
            .reshape(&[n, s, s, 1, hw])?
            .mul(vh.reshape(&[n, 1, s, dh, hw])?)?
            .sum_axis(2)?;
        outs.push(mixed.reshape(&[bsz, dh, h, w])?);
    }
    q.graph().concat(&outs, 1)
}

/// Softmax-normalized weights `[n, s(query i), s(key j), h*w]` of one head.
pub fn head_scores<'g, T: Real>(
    q: Var<'g, T>,
    k: Var<'g, T>,
    kernel: Var<'g, T>,
    bias: Var<'g, T>,
    head: usize,
    n_heads: usize,
    s: usize,
) -> Result<Var<'g, T>> {
    let shape = q.shape();
    let (bsz, d, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (n, dh, hw) = (bsz / s, d / n_heads, h * w);
    if kernel.shape() != [1, 2 * dh, 3, 3] {
        return Err(shape_err(
            "attention",
            format!("head kernel {:?}, expected [1, {}, 3, 3]", kernel.shape(), 2 * dh),
        ));
    }
    let qh = q.narrow(1, head * dh, dh)?;
    let kh = k.narrow(1, head * dh, dh)?;
    let sq = qh.conv2d(kernel.narrow(1, 0, dh)?, Some(bias), 1, 1)?.reshape(&[n, s, 1, hw])?;
    let sk = kh.conv2d(kernel.narrow(1, dh, dh)?, None, 1, 1)?.reshape(&[n, 1, s, hw])?;
    sq.add(sk)?.leaky_relu().softmax(2)
}
