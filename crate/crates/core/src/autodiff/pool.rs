use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// 2x2 / stride-2 max pooling. Returns the pooled tensor and, for every
/// output element, the flat input index that won (first row-major maximum).
pub fn maxpool2d<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [b, c, h, w] = match *input.shape() {
        [b, c, h, w] => [b, c, h, w],
        ref s => return Err(shape_err("maxpool2d", format!("expected NCHW, got {s:?}"))),
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err("maxpool2d", format!("spatial extent {h}x{w} must be even")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * ho * wo);
    let mut arg = Vec::with_capacity(b * c * ho * wo);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(&[b, c, ho, wo], out)?, arg))
}

pub fn maxpool2d_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(dx)
}
