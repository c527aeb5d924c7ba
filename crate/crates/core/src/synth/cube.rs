use serde::{Deserialize, Serialize};

use super::{BoxPx, Clip};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Where a cube came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CubeSource {
    pub clip: usize,
    pub object_id: usize,
    pub t: usize,
    pub bbox: BoxPx,
}

/// A spatio-temporal context cube and its motion target.
#[derive(Debug, Clone, PartialEq)]
pub struct Stcc {
    /// `[2T+1, 3, h, w]`.
    pub patches: Tensor<f32>,
    /// `[2T+1, 2, h, w]` in patch pixels per frame.
    pub flows: Tensor<f32>,
    pub source: CubeSource,
}

/// Bilinear resize of `[C, a, b]` to `[C, out_h, out_w]` with corner-aligned
/// sampling: output corners coincide with input corners.
pub fn resize_bilinear(patch: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let &[c, a, b] = patch.shape() else {
        return Err(Error::InvalidArgument(format!(
            "resize expects [C, H, W], got {:?}",
            patch.shape()
        )));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("resize target must be non-empty".into()));
    }
    let src = patch.data();
    let ys = sample_grid(a, out_h);
    let xs = sample_grid(b, out_w);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * a * b..(ch + 1) * a * b];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * b + x0] * (1.0 - fx) + plane[y0 * b + x1] * fx;
                let bot = plane[y1 * b + x0] * (1.0 - fx) + plane[y1 * b + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// For each output index: the two neighbouring source indices and the
/// weight of the second.
fn sample_grid(n_in: usize, n_out: usize) -> Vec<(usize, usize, f32)> {
    (0..n_out)
        .map(|i| {
            if n_in == 1 || n_out == 1 {
                return (0, 0, 0.0);
            }
            if n_in == n_out {
                return (i, i, 0.0);
            }
            let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
            let lo = (pos.floor() as usize).min(n_in - 2);
            (lo, lo + 1, (pos - lo as f64) as f32)
        })
        .collect()
}

fn crop(frames: &Tensor<f32>, t: usize, b: &BoxPx) -> Tensor<f32> {
    let s = frames.shape();
    let (h, w) = (s[2], s[3]);
    let frame = &frames.data()[t * 3 * h * w..(t + 1) * 3 * h * w];
    let (bh, bw) = (b.height(), b.width());
    Tensor::from_fn(&[3, bh, bw], |i| {
        let (c, r) = (i / (bh * bw), i % (bh * bw));
        frame[(c * h + b.y0 + r / bw) * w + b.x0 + r % bw]
    })
}

fn flow_crop(clip: &Clip, t: usize, b: &BoxPx) -> Tensor<f32> {
    let (bh, bw) = (b.height(), b.width());
    let mut out = Tensor::zeros(&[2, bh, bw]);
    let d = out.data_mut();
    for y in 0..bh {
        for x in 0..bw {
            let (fx, fy) = clip.flow_at(t, b.x0 + x, b.y0 + y);
            d[y * bw + x] = fx;
            d[bh * bw + y * bw + x] = fy;
        }
    }
    out
}

/// Crops the same box from frames `t-T..=t+T` (indices clamped to the clip)
/// and resizes every crop to `patch = (h, w)`. Flow crops are resized the
/// same way with `dx`, `dy` scaled by the horizontal and vertical ratios.
pub fn build_stcc(clip: &Clip, clip_index: usize, object_id: usize, bbox: BoxPx, t: usize, context: usize, patch: (usize, usize)) -> Result<Stcc> {
    let (fh, fw) = clip.frame_size();
    if bbox.width() == 0 || bbox.height() == 0 {
        return Err(Error::InvalidArgument(format!("degenerate box {bbox:?}")));
    }
    if bbox.x1 > fw || bbox.y1 > fh {
        return Err(Error::InvalidArgument(format!("box {bbox:?} outside {fh}x{fw} frame")));
    }
    if t >= clip.len() {
        return Err(Error::InvalidArgument(format!("frame {t} of {}", clip.len())));
    }
    let (ph, pw) = patch;
    let sx = pw as f32 / bbox.width() as f32;
    let sy = ph as f32 / bbox.height() as f32;
    let mut patches = Vec::with_capacity(2 * context + 1);
    let mut flows = Vec::with_capacity(2 * context + 1);
    for j in 0..=2 * context {
        let tj = (t + j).saturating_sub(context).min(clip.len() - 1);
        patches.push(resize_bilinear(&crop(&clip.frames, tj, &bbox), ph, pw)?);
        let mut f = resize_bilinear(&flow_crop(clip, tj, &bbox), ph, pw)?;
        let (dx, dy) = f.data_mut().split_at_mut(ph * pw);
        dx.iter_mut().for_each(|v| *v *= sx);
        dy.iter_mut().for_each(|v| *v *= sy);
        flows.push(f);
    }
    Ok(Stcc {
        patches: Tensor::stack(&patches.iter().collect::<Vec<_>>())?,
        flows: Tensor::stack(&flows.iter().collect::<Vec<_>>())?,
        source: CubeSource {
            clip: clip_index,
            object_id,
            t,
            bbox,
        },
    })
}

/// One entry per (frame, visible object) of `clip`, taking every
/// `frame_stride`-th frame.
pub fn cube_sources(clip: &Clip, clip_index: usize, frame_stride: usize) -> Vec<CubeSource> {
    (0..clip.len())
        .step_by(frame_stride.max(1))
        .flat_map(|t| {
            clip.boxes(t).into_iter().map(move |(object_id, bbox)| CubeSource {
                clip: clip_index,
                object_id,
                t,
                bbox,
            })
        })
        .collect()
}

impl CubeSource {
    pub fn build(&self, clip: &Clip, context: usize, patch: (usize, usize)) -> Result<Stcc> {
        build_stcc(clip, self.clip, self.object_id, self.bbox, self.t, context, patch)
    }
}

/// Cubes held in memory, e.g. a training set.
#[derive(Debug, Clone, Default)]
pub struct CubeSet {
    pub patches: Vec<Tensor<f32>>,
    pub flows: Vec<Tensor<f32>>,
    pub sources: Vec<CubeSource>,
}

impl CubeSet {
    /// Every `frame_stride`-th frame of every clip, one cube per visible object.
    pub fn from_clips(clips: &[Clip], context: usize, patch: (usize, usize), frame_stride: usize) -> Result<Self> {
        let mut set = CubeSet::default();
        for (i, clip) in clips.iter().enumerate() {
            for src in cube_sources(clip, i, frame_stride) {
                let s = src.build(clip, context, patch)?;
                set.patches.push(s.patches);
                set.flows.push(s.flows);
                set.sources.push(src);
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::super::{generate_clip, GenConfig, Split};
    use super::*;

    #[test]
    fn resize_identity_and_constant() {
        let p = Tensor::from_fn(&[2, 32, 32], |i| (i % 17) as f32 / 17.0);
        assert_eq!(resize_bilinear(&p, 32, 32).unwrap(), p);
        let c = Tensor::full(&[1, 7, 13], 0.3f32);
        let r = resize_bilinear(&c, 32, 32).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn checkerboard_center_is_half() {
        let p = Tensor::new(&[1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = resize_bilinear(&p, 3, 3).unwrap();
        assert_eq!(r.at(&[0, 1, 1]), 0.5);
        assert_eq!(r.at(&[0, 0, 0]), 0.0);
        assert_eq!(r.at(&[0, 0, 2]), 1.0);
    }

    #[test]
    fn stcc_shapes_and_clamp() {
        let cfg = GenConfig {
            clip_len: 10,
            ..GenConfig::default()
        };
        let clip = generate_clip(&cfg, 0, Split::Train, 0).unwrap();
        let (id, b) = clip.boxes(0)[0];
        let s = build_stcc(&clip, 0, id, b, 0, 3, (32, 32)).unwrap();
        assert_eq!(s.patches.shape(), [7, 3, 32, 32]);
        assert_eq!(s.flows.shape(), [7, 2, 32, 32]);
        assert!(s.patches.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // positions 0..=3 all show frame 0
        let n = 3 * 32 * 32;
        for j in 1..4 {
            assert_eq!(s.patches.data()[j * n..(j + 1) * n], s.patches.data()[..n]);
        }
    }

    #[test]
    fn degenerate_box_rejected() {
        let clip = generate_clip(&GenConfig::default(), 0, Split::Train, 0).unwrap();
        let b = BoxPx {
            x0: 5,
            y0: 5,
            x1: 5,
            y1: 9,
        };
        assert!(build_stcc(&clip, 0, 0, b, 3, 3, (32, 32)).is_err());
    }
}
