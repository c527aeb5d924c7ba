//! Test-time scoring: one sign-gradient step that lowers each cube's
//! reconstruction error, standardized per-cube scores, frame scores as the
//! maximum over a frame's cubes, and frame-level AUROC.

mod metrics;
mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::elementwise::sign;
use crate::autodiff::Graph;
use crate::error::{shape_err, Error, Result};
use crate::model::{stack_cubes, Mode, StateModel};
use crate::synth::{cube_sources, Clip, CubeSource};
use crate::tensor::Tensor;
use crate::train::{cube_errors, eval_errors, Checkpoint, ScoreStats};

pub use metrics::{auroc, paired_greater, roc_curve, roc_svg, welch_greater, PairedTest, WelchTest};
pub use report::{scores_csv, sweep_csv, EvalSummary, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    /// Step size in input-intensity units.
    pub eta: f64,
    pub w_r: f64,
    pub w_m: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            eta: 0.002,
            w_r: 0.3,
            w_m: 1.0,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("eta {} must be finite and >= 0", self.eta)));
        }
        if !self.w_r.is_finite() || !self.w_m.is_finite() {
            return Err(Error::Config("score weights must be finite".into()));
        }
        Ok(())
    }
}

/// Per-cube errors of an unperturbed batch together with the input gradient.
#[derive(Debug, Clone)]
pub struct GradientPass {
    /// `d loss / d input`, shaped like the stacked batch.
    pub grad: Tensor<f32>,
    pub s_r: Vec<f64>,
    pub s_m: Vec<f64>,
}

/// Gradient of `scale/M * sum_m (||Y_m - raw(Y_m)||_p^p + ||O_m - motion(Y_m)||_p^p)`
/// with respect to the stacked cubes `x`; `flows` are held constant.
pub fn input_gradient(
    raw: &StateModel<f32>,
    motion: &StateModel<f32>,
    x: &Tensor<f32>,
    flows: &Tensor<f32>,
    scale: f64,
) -> Result<GradientPass> {
    let s = raw.config().seq_len();
    if x.rank() != 4 || x.shape()[0] % s != 0 || flows.shape()[0] != x.shape()[0] {
        return Err(shape_err(
            "input_gradient",
            format!("cubes {:?} vs flows {:?}", x.shape(), flows.shape()),
        ));
    }
    let m = x.shape()[0] / s;
    let g = Graph::new();
    let br = raw.bind(&g, Mode::Eval, false);
    let bm = motion.bind(&g, Mode::Eval, false);
    let xv = g.leaf(x.clone(), true);
    let ov = g.constant(flows.clone());
    let yr = raw.forward(&br, xv)?;
    let ym = motion.forward(&bm, xv)?;
    let loss = xv
        .sub(yr)?
        .pnorm_pow(raw.config().p)
        .add(ov.sub(ym)?.pnorm_pow(motion.config().p))?
        .scale(scale / m as f64);
    let s_r = cube_errors(&yr.value(), x, s, raw.config().p)?;
    let s_m = cube_errors(&ym.value(), flows, s, motion.config().p)?;
    let mut grads = g.backward(loss)?;
    let grad = grads
        .take(xv)
        .ok_or_else(|| Error::Numerical("input received no gradient".into()))?;
    if !grad.is_finite() {
        return Err(Error::Numerical("non-finite input gradient".into()));
    }
    Ok(GradientPass { grad, s_r, s_m })
}

/// `x - eta * sign(grad)` with `sign(0) = 0`; no clamping.
pub fn apply_perturbation(x: &Tensor<f32>, grad: &Tensor<f32>, eta: f64) -> Result<Tensor<f32>> {
    let e = eta as f32;
    x.zip_map(grad, |v, g| v - e * sign(g))
}

/// Perturbs every cube of one frame; cubes are `[2T+1, C, H, W]`.
pub fn perturb_inputs(
    raw: &StateModel<f32>,
    motion: &StateModel<f32>,
    cubes: &[&Tensor<f32>],
    flows: &[&Tensor<f32>],
    eta: f64,
) -> Result<Vec<Tensor<f32>>> {
    if cubes.is_empty() {
        return Ok(Vec::new());
    }
    if eta == 0.0 {
        return Ok(cubes.iter().map(|&c| c.clone()).collect());
    }
    let x = stack_cubes(cubes)?;
    let pass = input_gradient(raw, motion, &x, &stack_cubes(flows)?, 1.0)?;
    let y = apply_perturbation(&x, &pass.grad, eta)?;
    let n = cubes.len();
    (0..n)
        .map(|i| y.slice_outer(i * cubes[0].shape()[0], cubes[0].shape()[0]))
        .collect()
}

/// Standardized score of one (already perturbed) cube. `S_r` compares the
/// raw reconstruction with the perturbed input, `S_m` compares the motion
/// reconstruction with the original flow target.
pub fn cube_score(
    raw: &StateModel<f32>,
    motion: &StateModel<f32>,
    perturbed: &Tensor<f32>,
    flow: &Tensor<f32>,
    stats: &ScoreStats,
    weights: &PerturbConfig,
) -> Result<f64> {
    let (s_r, s_m) = eval_errors(raw, motion, &[perturbed], &[flow])?;
    Ok(stats.standardize(s_r[0], s_m[0], weights.w_r, weights.w_m))
}

/// Maximum cube score of a frame; `None` when the frame has no cubes.
pub fn frame_score(cube_scores: &[f64]) -> Option<f64> {
    cube_scores.iter().copied().reduce(f64::max)
}

/// Replaces empty-frame markers by the lowest observed frame score minus 1;
/// if every frame is empty all scores are 0.
pub fn resolve_frame_scores(scores: &[Option<f64>]) -> Vec<f64> {
    let floor = scores.iter().flatten().copied().reduce(f64::min).map_or(0.0, |m| m - 1.0);
    scores.iter().map(|s| s.unwrap_or(floor)).collect()
}

/// Errors of one cube, unperturbed and for each evaluated eta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeRecord {
    pub source: CubeSource,
    /// Cube of an anomalous sprite.
    pub anomalous: bool,
    pub plain: (f64, f64),
    pub perturbed: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub clip_id: String,
    pub clip: usize,
    pub frame: usize,
    pub label: u8,
    /// Indices into [`Evaluation::cubes`].
    pub cubes: Vec<usize>,
}

/// Everything needed to score frames for any of the evaluated etas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub etas: Vec<f64>,
    pub weights: PerturbConfig,
    pub stats: ScoreStats,
    pub cubes: Vec<CubeRecord>,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub batch_size: usize,
    /// Worker threads for cube scoring; results do not depend on it.
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            batch_size: 16,
            threads: 1,
        }
    }
}

fn score_batch(
    ckpt: &Checkpoint,
    clips: &[Clip],
    batch: &[CubeSource],
    etas: &[f64],
) -> Result<Vec<CubeRecord>> {
    let cfg = ckpt.raw.config();
    let patch = (cfg.height, cfg.width);
    let mut patches = Vec::with_capacity(batch.len());
    let mut flows = Vec::with_capacity(batch.len());
    for src in batch {
        let s = src.build(&clips[src.clip], cfg.context, patch)?;
        patches.push(s.patches);
        flows.push(s.flows);
    }
    let x = stack_cubes(&patches.iter().collect::<Vec<_>>())?;
    let o = stack_cubes(&flows.iter().collect::<Vec<_>>())?;
    let s = cfg.seq_len();
    let (plain_r, plain_m, grad) = if etas.iter().any(|&e| e != 0.0) {
        let pass = input_gradient(&ckpt.raw, &ckpt.motion, &x, &o, 1.0)?;
        (pass.s_r, pass.s_m, Some(pass.grad))
    } else {
        let (r, m) = eval_errors(&ckpt.raw, &ckpt.motion, &patches.iter().collect::<Vec<_>>(), &flows.iter().collect::<Vec<_>>())?;
        (r, m, None)
    };
    let mut per_eta = Vec::with_capacity(etas.len());
    for &eta in etas {
        match &grad {
            Some(g) if eta != 0.0 => {
                let xp = apply_perturbation(&x, g, eta)?;
                let r = cube_errors(&ckpt.raw.reconstruct(&xp)?, &xp, s, cfg.p)?;
                let m = cube_errors(&ckpt.motion.reconstruct(&xp)?, &o, s, ckpt.motion.config().p)?;
                per_eta.push((r, m));
            }
            _ => per_eta.push((plain_r.clone(), plain_m.clone())),
        }
    }
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, src)| {
            let tr = clips[src.clip].tracks.iter().find(|t| t.object_id == src.object_id);
            CubeRecord {
                source: *src,
                anomalous: tr.is_some_and(|t| t.anomalous),
                plain: (plain_r[i], plain_m[i]),
                perturbed: per_eta.iter().map(|(r, m)| (r[i], m[i])).collect(),
            }
        })
        .collect())
}

/// Scores every (frame, object) cube of `clips` without perturbation and
/// with each of `etas`.
pub fn evaluate(
    ckpt: &Checkpoint,
    clips: &[Clip],
    etas: &[f64],
    weights: PerturbConfig,
    opts: EvalOptions,
) -> Result<Evaluation> {
    for &e in etas {
        PerturbConfig { eta: e, ..weights }.validate()?;
    }
    let mut frames = Vec::new();
    let mut sources = Vec::new();
    for (ci, clip) in clips.iter().enumerate() {
        let srcs = cube_sources(clip, ci, 1);
        let mut k = 0;
        for t in 0..clip.len() {
            let mut ids = Vec::new();
            while k < srcs.len() && srcs[k].t == t {
                ids.push(sources.len());
                sources.push(srcs[k]);
                k += 1;
            }
            frames.push(FrameRecord {
                clip_id: clip.id.clone(),
                clip: ci,
                frame: t,
                label: clip.labels[t],
                cubes: ids,
            });
        }
    }
    let batches: Vec<&[CubeSource]> = sources.chunks(opts.batch_size.max(1)).collect();
    let run = || -> Result<Vec<Vec<CubeRecord>>> {
        batches
            .par_iter()
            .map(|b| score_batch(ckpt, clips, b, etas))
            .collect()
    };
    let results = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?
        .install(run)?;
    Ok(Evaluation {
        etas: etas.to_vec(),
        weights,
        stats: ckpt.stats,
        cubes: results.into_iter().flatten().collect(),
        frames,
    })
}

impl Evaluation {
    fn check_eta(&self, eta_index: Option<usize>) -> Result<()> {
        match eta_index {
            Some(i) if i >= self.etas.len() => Err(Error::InvalidArgument(format!(
                "eta index {i} of {} evaluated etas",
                self.etas.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Standardized cube scores; `None` selects the unperturbed errors.
    pub fn cube_scores(&self, eta_index: Option<usize>) -> Result<Vec<f64>> {
        self.check_eta(eta_index)?;
        let w = &self.weights;
        Ok(self
            .cubes
            .iter()
            .map(|c| {
                let (r, m) = eta_index.map_or(c.plain, |i| c.perturbed[i]);
                self.stats.standardize(r, m, w.w_r, w.w_m)
            })
            .collect())
    }

    /// Frame scores with empty frames resolved to the sentinel.
    pub fn frame_scores(&self, eta_index: Option<usize>) -> Result<Vec<f64>> {
        let cs = self.cube_scores(eta_index)?;
        let raw: Vec<Option<f64>> = self
            .frames
            .iter()
            .map(|f| frame_score(&f.cubes.iter().map(|&i| cs[i]).collect::<Vec<_>>()))
            .collect();
        Ok(resolve_frame_scores(&raw))
    }

    pub fn labels(&self) -> Vec<u8> {
        self.frames.iter().map(|f| f.label).collect()
    }

    pub fn auroc(&self, eta_index: Option<usize>) -> Result<f64> {
        auroc(&self.frame_scores(eta_index)?, &self.labels())
    }

    /// Per-cube decrease of the standardized score caused by perturbation,
    /// split into (normal cubes, anomalous cubes).
    pub fn score_reductions(&self, eta_index: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let plain = self.cube_scores(None)?;
        let pert = self.cube_scores(Some(eta_index))?;
        let (mut normal, mut anomalous) = (Vec::new(), Vec::new());
        for (c, (a, b)) in self.cubes.iter().zip(plain.iter().zip(&pert)) {
            if c.anomalous {
                anomalous.push(a - b);
            } else {
                normal.push(a - b);
            }
        }
        Ok((normal, anomalous))
    }

    /// Whether normal cubes lose more score than anomalous ones (Welch).
    pub fn gap_test(&self, eta_index: usize) -> Result<WelchTest> {
        let (normal, anomalous) = self.score_reductions(eta_index)?;
        welch_greater(&normal, &anomalous)
    }

    /// Per-cube decrease of the raw reconstruction error caused by
    /// perturbation, split into (normal cubes, anomalous cubes).
    pub fn raw_reductions(&self, eta_index: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_eta(Some(eta_index))?;
        let (mut normal, mut anomalous) = (Vec::new(), Vec::new());
        for c in &self.cubes {
            let d = c.plain.0 - c.perturbed[eta_index].0;
            if c.anomalous {
                anomalous.push(d);
            } else {
                normal.push(d);
            }
        }
        Ok((normal, anomalous))
    }

    /// Whether normal cubes lose more raw reconstruction error than
    /// anomalous ones (Welch).
    pub fn raw_gap_test(&self, eta_index: usize) -> Result<WelchTest> {
        let (normal, anomalous) = self.raw_reductions(eta_index)?;
        welch_greater(&normal, &anomalous)
    }

    /// Whether perturbation lowers the raw error of normal cubes (paired).
    pub fn normal_raw_reduction_test(&self, eta_index: usize) -> Result<PairedTest> {
        self.check_eta(Some(eta_index))?;
        let d: Vec<f64> = self
            .cubes
            .iter()
            .filter(|c| !c.anomalous)
            .map(|c| c.plain.0 - c.perturbed[eta_index].0)
            .collect();
        paired_greater(&d)
    }

    /// Index of the eta with the highest AUROC (first on ties).
    pub fn best_eta(&self) -> Result<Option<usize>> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.etas.len() {
            let a = self.auroc(Some(i))?;
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((i, a));
            }
        }
        Ok(best.map(|(i, _)| i))
    }
}
