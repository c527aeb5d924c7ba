//! Synthetic surveillance-style video with exact object boxes and flow.
//!
//! Every clip is a static textured background with a few sprites moving at
//! integer velocities and bouncing off the frame edges. Normal sprites are
//! slow squares and circles. Test clips may additionally contain one
//! anomalous sprite for a window of frames: either a fast mover or a
//! triangle, a shape never seen in training.

mod cube;
mod io;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use cube::{build_stcc, cube_sources, resize_bilinear, CubeSet, CubeSource, Stcc};
pub use io::{load_split, read_manifest, write_dataset, DatasetManifest, DATASET_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sprite {
    Square,
    Circle,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// A normal-looking sprite moving at `fast_speed`.
    FastMover,
    /// A triangle moving at normal speed.
    Triangle,
}

/// Generator settings. Sizes and speeds are inclusive `[min, max]` ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub frame_height: usize,
    pub frame_width: usize,
    pub clip_len: usize,
    pub train_clips: usize,
    pub test_clips: usize,
    pub objects_per_clip: [usize; 2],
    pub object_size: [usize; 2],
    /// Normal speed in px/frame along the dominant axis.
    pub normal_speed: [i32; 2],
    pub fast_speed: [i32; 2],
    pub anomaly_kinds: Vec<AnomalyKind>,
    /// Share of test clips that contain an anomalous sprite.
    pub anomalous_clip_fraction: f64,
    /// Target share of anomalous frames over the whole test split.
    pub anomaly_fraction: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            frame_height: 128,
            frame_width: 128,
            clip_len: 48,
            train_clips: 60,
            test_clips: 40,
            objects_per_clip: [1, 2],
            object_size: [12, 20],
            normal_speed: [1, 2],
            fast_speed: [6, 8],
            anomaly_kinds: vec![AnomalyKind::FastMover, AnomalyKind::Triangle],
            anomalous_clip_fraction: 0.5,
            anomaly_fraction: 0.25,
        }
    }
}

impl GenConfig {
    pub fn anomalous_clips(&self) -> usize {
        (self.test_clips as f64 * self.anomalous_clip_fraction).round() as usize
    }

    /// Frames per anomalous clip during which the anomaly is visible.
    pub fn anomaly_window(&self) -> usize {
        let n = self.anomalous_clips();
        if n == 0 {
            return 0;
        }
        let frames = self.anomaly_fraction * (self.test_clips * self.clip_len) as f64;
        (frames / n as f64).round() as usize
    }

    fn is_anomalous_clip(&self, index: usize) -> bool {
        let f = self.anomalous_clips() as f64 / self.test_clips.max(1) as f64;
        ((index + 1) as f64 * f).floor() > (index as f64 * f).floor()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let [s_lo, s_hi] = self.object_size;
        if s_lo == 0 || s_lo > s_hi {
            return bad(format!("object_size range {:?} is empty", self.object_size));
        }
        if s_hi >= self.frame_height || s_hi >= self.frame_width {
            return bad(format!(
                "objects up to {s_hi} px do not fit a {}x{} frame",
                self.frame_height, self.frame_width
            ));
        }
        if self.clip_len < 2 {
            return bad(format!("clip_len {} must be at least 2", self.clip_len));
        }
        let [o_lo, o_hi] = self.objects_per_clip;
        if o_lo == 0 || o_lo > o_hi {
            return bad(format!("objects_per_clip range {:?} is empty", self.objects_per_clip));
        }
        for (name, [lo, hi]) in [("normal_speed", self.normal_speed), ("fast_speed", self.fast_speed)] {
            if lo < 1 || lo > hi {
                return bad(format!("{name} range [{lo}, {hi}] must be positive and ordered"));
            }
            let room = (self.frame_height.min(self.frame_width) - s_hi) as i32;
            if hi > room {
                return bad(format!("{name} {hi} exceeds the free space {room} px"));
            }
        }
        if !(0.0..=1.0).contains(&self.anomalous_clip_fraction) || !(0.0..=1.0).contains(&self.anomaly_fraction) {
            return bad("anomaly fractions must lie in [0, 1]".into());
        }
        if self.anomalous_clips() > 0 {
            if self.anomaly_kinds.is_empty() {
                return bad("anomalous clips requested but anomaly_kinds is empty".into());
            }
            if self.anomaly_window() > self.clip_len {
                return bad(format!(
                    "anomaly_fraction {} needs {} anomalous frames per clip, clips have {}",
                    self.anomaly_fraction,
                    self.anomaly_window(),
                    self.clip_len
                ));
            }
        }
        Ok(())
    }
}

/// Axis-aligned box in pixels, `x1`/`y1` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxPx {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoxPx {
    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }
}

/// One sprite's life in a clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub object_id: usize,
    pub sprite: Sprite,
    pub size: usize,
    pub color: [f32; 3],
    pub anomalous: bool,
    /// First frame in which the sprite is drawn.
    pub start: usize,
    /// Top-left corner per visible frame, starting at `start`.
    pub positions: Vec<(usize, usize)>,
    /// Displacement `(dx, dy)` from each visible frame to the next.
    pub displacements: Vec<(i32, i32)>,
    /// Velocity the sprite was launched with.
    pub velocity: (i32, i32),
}

impl Track {
    pub fn visible(&self, t: usize) -> bool {
        t >= self.start && t < self.start + self.positions.len()
    }

    pub fn bbox(&self, t: usize) -> Option<BoxPx> {
        if !self.visible(t) {
            return None;
        }
        let (x, y) = self.positions[t - self.start];
        Some(BoxPx {
            x0: x,
            y0: y,
            x1: x + self.size,
            y1: y + self.size,
        })
    }

    /// Whether the sprite covers pixel `(x, y)` at frame `t` (pixel centers).
    pub fn covers(&self, t: usize, x: usize, y: usize) -> bool {
        let Some(b) = self.bbox(t) else { return false };
        if x < b.x0 || x >= b.x1 || y < b.y0 || y >= b.y1 {
            return false;
        }
        let s = self.size as f64;
        let u = (x - b.x0) as f64 + 0.5;
        let v = (y - b.y0) as f64 + 0.5;
        match self.sprite {
            Sprite::Square => true,
            Sprite::Circle => {
                let r = s / 2.0;
                (u - r).powi(2) + (v - r).powi(2) <= r * r
            }
            // apex at top center, base along the bottom edge
            Sprite::Triangle => (u - s / 2.0).abs() <= v / 2.0,
        }
    }
}

/// A rendered clip with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: String,
    /// `[L, 3, H, W]`, values in `[0, 1]`.
    pub frames: Tensor<f32>,
    pub tracks: Vec<Track>,
    /// 1 iff an anomalous sprite is visible in the frame.
    pub labels: Vec<u8>,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn frame_size(&self) -> (usize, usize) {
        let s = self.frames.shape();
        (s[2], s[3])
    }

    /// `(object_id, box)` of every sprite visible at frame `t`.
    pub fn boxes(&self, t: usize) -> Vec<(usize, BoxPx)> {
        self.tracks
            .iter()
            .filter_map(|tr| tr.bbox(t).map(|b| (tr.object_id, b)))
            .collect()
    }

    /// Topmost sprite covering `(x, y)` at frame `t`.
    fn top_track(&self, t: usize, x: usize, y: usize) -> Option<&Track> {
        self.tracks.iter().rev().find(|tr| tr.covers(t, x, y))
    }

    /// Flow `(dx, dy)` of pixel `(x, y)` from frame `t` to `t + 1`; the last
    /// frame repeats the flow of the one before it.
    pub fn flow_at(&self, t: usize, x: usize, y: usize) -> (f32, f32) {
        let t = t.min(self.len() - 2);
        match self.top_track(t, x, y) {
            Some(tr) => {
                let (dx, dy) = tr.displacements[t - tr.start];
                (dx as f32, dy as f32)
            }
            None => (0.0, 0.0),
        }
    }
}

/// Dense flow `[2, H, W]` of frame `t` (channel 0 is dx, channel 1 is dy).
pub fn flow_oracle(clip: &Clip, t: usize) -> Tensor<f32> {
    let (h, w) = clip.frame_size();
    let mut out = Tensor::zeros(&[2, h, w]);
    let d = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = clip.flow_at(t, x, y);
            d[y * w + x] = fx;
            d[h * w + y * w + x] = fy;
        }
    }
    out
}

fn split_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split.stream() << 32) | index as u64);
    rng
}

fn sample_velocity<R: Rng>(rng: &mut R, [lo, hi]: [i32; 2]) -> (i32, i32) {
    const DIRS: [(i32, i32); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];
    let s = rng.gen_range(lo..=hi);
    let (dx, dy) = *DIRS.choose(rng).expect("non-empty");
    (dx * s, dy * s)
}

/// Advances one coordinate, reflecting off `[0, max]`.
fn bounce(pos: i32, vel: i32, max: i32) -> (i32, i32) {
    let p = pos + vel;
    if p < 0 {
        (-p, -vel)
    } else if p > max {
        (2 * max - p, -vel)
    } else {
        (p, vel)
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate<R: Rng>(
    rng: &mut R,
    cfg: &GenConfig,
    object_id: usize,
    sprite: Sprite,
    speed: [i32; 2],
    anomalous: bool,
    start: usize,
    len: usize,
) -> Track {
    let size = rng.gen_range(cfg.object_size[0]..=cfg.object_size[1]);
    let color = [0; 3].map(|_| rng.gen_range(0.45f32..0.95));
    let (max_x, max_y) = ((cfg.frame_width - size) as i32, (cfg.frame_height - size) as i32);
    let (mut x, mut y) = (rng.gen_range(0..=max_x), rng.gen_range(0..=max_y));
    let velocity = sample_velocity(rng, speed);
    let (mut vx, mut vy) = velocity;
    let mut positions = Vec::with_capacity(len);
    let mut displacements = Vec::with_capacity(len);
    for _ in 0..len {
        positions.push((x as usize, y as usize));
        let (nx, nvx) = bounce(x, vx, max_x);
        let (ny, nvy) = bounce(y, vy, max_y);
        displacements.push((nx - x, ny - y));
        (x, y, vx, vy) = (nx, ny, nvx, nvy);
    }
    Track {
        object_id,
        sprite,
        size,
        color,
        anomalous,
        start,
        positions,
        displacements,
        velocity,
    }
}

fn render(cfg: &GenConfig, rng: &mut ChaCha8Rng, tracks: &[Track]) -> Tensor<f32> {
    let (l, h, w) = (cfg.clip_len, cfg.frame_height, cfg.frame_width);
    let freq = [rng.gen_range(1.0f32..3.0), rng.gen_range(1.0f32..3.0)];
    let phase = [0; 3].map(|_| rng.gen_range(0.0f32..std::f32::consts::TAU));
    let mut bg = vec![0f32; 3 * h * w];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let a = std::f32::consts::TAU * (freq[0] * x as f32 / w as f32 + freq[1] * y as f32 / h as f32);
                bg[(c * h + y) * w + x] = 0.2 + 0.08 * (a + phase[c]).sin();
            }
        }
    }
    let mut frames = Tensor::zeros(&[l, 3, h, w]);
    let data = frames.data_mut();
    for t in 0..l {
        let frame = &mut data[t * 3 * h * w..(t + 1) * 3 * h * w];
        frame.copy_from_slice(&bg);
        for tr in tracks {
            let Some(b) = tr.bbox(t) else { continue };
            for y in b.y0..b.y1 {
                for x in b.x0..b.x1 {
                    if tr.covers(t, x, y) {
                        for c in 0..3 {
                            frame[(c * h + y) * w + x] = tr.color[c];
                        }
                    }
                }
            }
        }
    }
    frames
}

/// Generates clip `index` of `split`; a pure function of its arguments.
pub fn generate_clip(cfg: &GenConfig, seed: u64, split: Split, index: usize) -> Result<Clip> {
    cfg.validate()?;
    let mut rng = split_rng(seed, split, index);
    let n = rng.gen_range(cfg.objects_per_clip[0]..=cfg.objects_per_clip[1]);
    let mut tracks: Vec<Track> = (0..n)
        .map(|id| {
            let sprite = if rng.gen_bool(0.5) { Sprite::Square } else { Sprite::Circle };
            simulate(&mut rng, cfg, id, sprite, cfg.normal_speed, false, 0, cfg.clip_len)
        })
        .collect();
    let mut labels = vec![0u8; cfg.clip_len];
    if split == Split::Test && cfg.is_anomalous_clip(index) {
        let rank = (0..index).filter(|&i| cfg.is_anomalous_clip(i)).count();
        let kind = cfg.anomaly_kinds[rank % cfg.anomaly_kinds.len()];
        let window = cfg.anomaly_window();
        if window > 0 {
            let start = rng.gen_range(0..=cfg.clip_len - window);
            let (sprite, speed) = match kind {
                AnomalyKind::FastMover => {
                    let s = if rng.gen_bool(0.5) { Sprite::Square } else { Sprite::Circle };
                    (s, cfg.fast_speed)
                }
                AnomalyKind::Triangle => (Sprite::Triangle, cfg.normal_speed),
            };
            tracks.push(simulate(&mut rng, cfg, n, sprite, speed, true, start, window));
            labels[start..start + window].fill(1);
        }
    }
    let frames = render(cfg, &mut rng, &tracks);
    Ok(Clip {
        id: format!("{}_{index:04}", split.name()),
        frames,
        tracks,
        labels,
    })
}

/// All clips of one split, in index order.
pub fn generate_split(cfg: &GenConfig, seed: u64, split: Split) -> Result<Vec<Clip>> {
    let n = match split {
        Split::Train => cfg.train_clips,
        Split::Test => cfg.test_clips,
    };
    (0..n).map(|i| generate_clip(cfg, seed, split, i)).collect()
}

/// Training and test clips.
pub fn generate_dataset(cfg: &GenConfig, seed: u64) -> Result<(Vec<Clip>, Vec<Clip>)> {
    Ok((generate_split(cfg, seed, Split::Train)?, generate_split(cfg, seed, Split::Test)?))
}
