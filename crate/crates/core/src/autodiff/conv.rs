//! 2-D convolution and transposed convolution on NCHW tensors via im2col + GEMM.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{gemm, Real, Tensor};

/// Geometry of a strided, zero-padded cross-correlation from `(c, h, w)` to
/// `(h_out, w_out)` with a square `k x k` window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if k == 0 || stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv needs k >= 1 and stride >= 1 (k={k}, stride={stride})"
            )));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(shape_err(
                "conv2d",
                format!("window {k} exceeds padded input {h}x{w} (pad {pad})"),
            ));
        }
        Ok(Self {
            c,
            h,
            w,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Output columns `ox` whose input column `ox*stride + kj - pad` is in bounds.
fn valid_cols(g: &ConvGeometry, kj: usize) -> (usize, usize) {
    let lo = if g.pad > kj { (g.pad - kj).div_ceil(g.stride) } else { 0 };
    let hi = if g.w + g.pad > kj {
        ((g.w - 1 + g.pad - kj) / g.stride + 1).min(g.w_out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfolds one `(c, h, w)` image into a `(c*k*k, h_out*w_out)` matrix.
fn im2col<T: Real>(x: &[T], g: &ConvGeometry, col: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let out = &mut col[row * cols..(row + 1) * cols];
                let (lo, hi) = valid_cols(g, kj);
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut out[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    let first = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        dst[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (d, &v) in dst[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *d = v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters (accumulates) columns back into an image.
fn col2im<T: Real>(col: &[T], g: &ConvGeometry, x: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src_row = &col[row * cols..(row + 1) * cols];
                let (lo, hi) = valid_cols(g, kj);
                if lo == hi {
                    continue;
                }
                let first = lo * g.stride + kj - g.pad;
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let src = &src_row[oy * g.w_out + lo..oy * g.w_out + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst[first..first + hi - lo].iter_mut().zip(src) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[first..].iter_mut().step_by(g.stride).zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_nchw<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<[usize; 4]> {
    match *t.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        ref s => Err(shape_err(op, format!("expected a rank-4 NCHW tensor, got {s:?}"))),
    }
}

fn check_bias<T: Real>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(shape_err(
                op,
                format!("bias shape {:?} does not match {channels} output channels", b.shape()),
            ));
        }
    }
    Ok(())
}

fn conv_dims<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, ConvGeometry)> {
    let [b, c_in, h, w] = check_nchw("conv2d", input)?;
    let [c_out, kc_in, kh, kw] = check_nchw("conv2d", kernel)?;
    if kc_in != c_in {
        return Err(shape_err(
            "conv2d",
            format!("kernel expects C_in={kc_in} but input has C_in={c_in}"),
        ));
    }
    if kh != kw {
        return Err(shape_err("conv2d", format!("kernel must be square, got {kh}x{kw}")));
    }
    Ok((b, c_out, ConvGeometry::new(c_in, h, w, kh, stride, pad)?))
}

/// Cross-correlation of `input[B, C_in, H, W]` with `kernel[C_out, C_in, k, k]`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (b, c_out, g) = conv_dims(input, kernel, stride, pad)?;
    check_bias("conv2d", bias, c_out)?;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_sz = g.c * g.h * g.w;
    let out_sz = c_out * cols;
    let mut out = vec![T::zero(); b * out_sz];
    let mut col = vec![T::zero(); rows * cols];
    for n in 0..b {
        let y = &mut out[n * out_sz..(n + 1) * out_sz];
        if let Some(bias) = bias {
            for (co, &bv) in bias.data().iter().enumerate() {
                y[co * cols..(co + 1) * cols].fill(bv);
            }
        }
        im2col(&input.data()[n * in_sz..(n + 1) * in_sz], &g, &mut col);
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        gemm(c_out, rows, cols, T::one(), kernel.data(), false, &col, false, beta, y);
    }
    Tensor::new(&[b, c_out, g.h_out, g.w_out], out)
}

/// Gradients of [`conv2d`]. Returns `(d_input, d_kernel, d_bias)`; the input
/// gradient is only formed when `need_input` is set.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_input: bool,
    need_kernel: bool,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>)> {
    let (b, c_out, g) = conv_dims(input, kernel, stride, pad)?;
    if grad_out.shape() != [b, c_out, g.h_out, g.w_out] {
        return Err(shape_err("conv2d_backward", format!("grad shape {:?}", grad_out.shape())));
    }
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_sz = g.c * g.h * g.w;
    let out_sz = c_out * cols;
    let mut d_in = need_input.then(|| vec![T::zero(); b * in_sz]);
    let mut d_k = need_kernel.then(|| vec![T::zero(); kernel.numel()]);
    let mut d_b = vec![T::zero(); c_out];
    let mut col = vec![T::zero(); rows * cols];
    for n in 0..b {
        let gy = &grad_out.data()[n * out_sz..(n + 1) * out_sz];
        for (co, db) in d_b.iter_mut().enumerate() {
            *db += gy[co * cols..(co + 1) * cols].iter().copied().sum::<T>();
        }
        if let Some(dk) = d_k.as_mut() {
            im2col(&input.data()[n * in_sz..(n + 1) * in_sz], &g, &mut col);
            gemm(c_out, cols, rows, T::one(), gy, false, &col, true, T::one(), dk);
        }
        if let Some(dx) = d_in.as_mut() {
            gemm(rows, c_out, cols, T::one(), kernel.data(), true, gy, false, T::zero(), &mut col);
            col2im(&col, &g, &mut dx[n * in_sz..(n + 1) * in_sz]);
        }
    }
    Ok((
        d_in.map(|d| Tensor::new(input.shape(), d)).transpose()?,
        d_k.map(|d| Tensor::new(kernel.shape(), d)).transpose()?,
        Tensor::new(&[c_out], d_b)?,
    ))
}

fn conv_transpose_dims<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, ConvGeometry)> {
    let [b, c_in, h, w] = check_nchw("conv_transpose2d", input)?;
    let [kc_in, c_out, kh, kw] = check_nchw("conv_transpose2d", kernel)?;
    if kc_in != c_in {
        return Err(shape_err(
            "conv_transpose2d",
            format!("kernel expects C_in={kc_in} but input has C_in={c_in}"),
        ));
    }
    if kh != kw {
        return Err(shape_err("conv_transpose2d", format!("kernel must be square, got {kh}x{kw}")));
    }
    if stride == 0 || kh == 0 || pad >= kh {
        return Err(Error::InvalidArgument(format!(
            "conv_transpose2d: non-invertible configuration (k={kh}, stride={stride}, pad={pad})"
        )));
    }
    let out_h = ((h - 1) * stride + kh) as isize - 2 * pad as isize;
    let out_w = ((w - 1) * stride + kh) as isize - 2 * pad as isize;
    if out_h < 1 || out_w < 1 {
        return Err(Error::InvalidArgument(format!(
            "conv_transpose2d: configuration yields empty output {out_h}x{out_w}"
        )));
    }
    // The adjoint conv maps (c_out, out_h, out_w) -> (c_in, h, w).
    let g = ConvGeometry::new(c_out, out_h as usize, out_w as usize, kh, stride, pad)?;
    if g.h_out != h || g.w_out != w {
        return Err(Error::InvalidArgument(
            "conv_transpose2d: configuration is not the adjoint of a conv2d".into(),
        ));
    }
    Ok((b, c_in, g))
}

/// Transposed convolution of `input[B, C_in, h, w]` with
/// `kernel[C_in, C_out, k, k]`; output extent `(h-1)*stride - 2*pad + k`.
///
/// Equals the input-gradient of the [`conv2d`] that maps `C_out -> C_in`
/// with the same kernel, stride and padding.
pub fn conv_transpose2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (b, c_in, g) = conv_transpose_dims(input, kernel, stride, pad)?;
    check_bias("conv_transpose2d", bias, g.c)?;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_sz = c_in * cols;
    let out_sz = g.c * g.h * g.w;
    let mut out = vec![T::zero(); b * out_sz];
    let mut col = vec![T::zero(); rows * cols];
    for n in 0..b {
        let x = &input.data()[n * in_sz..(n + 1) * in_sz];
        gemm(rows, c_in, cols, T::one(), kernel.data(), true, x, false, T::zero(), &mut col);
        let y = &mut out[n * out_sz..(n + 1) * out_sz];
        col2im(&col, &g, y);
        if let Some(bias) = bias {
            let plane = g.h * g.w;
            for (co, &bv) in bias.data().iter().enumerate() {
                for v in &mut y[co * plane..(co + 1) * plane] {
                    *v += bv;
                }
            }
        }
    }
    Tensor::new(&[b, g.c, g.h, g.w], out)
}

/// Gradients of [`conv_transpose2d`]: `(d_input, d_kernel, d_bias)`.
pub fn conv_transpose2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_input: bool,
    need_kernel: bool,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>)> {
    let (b, c_in, g) = conv_transpose_dims(input, kernel, stride, pad)?;
    if grad_out.shape() != [b, g.c, g.h, g.w] {
        return Err(shape_err(
            "conv_transpose2d_backward",
            format!("grad shape {:?}", grad_out.shape()),
        ));
    }
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_sz = c_in * cols;
    let out_sz = g.c * g.h * g.w;
    let plane = g.h * g.w;
    let mut d_in = need_input.then(|| vec![T::zero(); b * in_sz]);
    let mut d_k = need_kernel.then(|| vec![T::zero(); kernel.numel()]);
    let mut d_b = vec![T::zero(); g.c];
    let mut col = vec![T::zero(); rows * cols];
    for n in 0..b {
        let gy = &grad_out.data()[n * out_sz..(n + 1) * out_sz];
        for (co, db) in d_b.iter_mut().enumerate() {
            *db += gy[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
        }
        if d_in.is_none() && d_k.is_none() {
            continue;
        }
        im2col(gy, &g, &mut col);
        if let Some(dx) = d_in.as_mut() {
            gemm(
                c_in,
                rows,
                cols,
                T::one(),
                kernel.data(),
                false,
                &col,
                false,
                T::zero(),
                &mut dx[n * in_sz..(n + 1) * in_sz],
            );
        }
        if let Some(dk) = d_k.as_mut() {
            let x = &input.data()[n * in_sz..(n + 1) * in_sz];
            gemm(c_in, cols, rows, T::one(), x, false, &col, true, T::one(), dk);
        }
    }
    Ok((
        d_in.map(|d| Tensor::new(input.shape(), d)).transpose()?,
        d_k.map(|d| Tensor::new(kernel.shape(), d)).transpose()?,
        Tensor::new(&[g.c], d_b)?,
    ))
}
