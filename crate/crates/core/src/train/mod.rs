//! Joint training of the raw-pixel and motion branches, and the training
//! error statistics used to standardize test scores.

mod checkpoint;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::model::{stack_cubes, Bound, Mode, ModelConfig, StateModel};
use crate::synth::CubeSet;
use crate::tensor::{Real, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

/// Lower bound applied to both standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Train on every `frame_stride`-th frame of each clip.
    pub frame_stride: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            frame_stride: 1,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.frame_stride == 0 {
            return Err(Error::Config(format!(
                "epochs ({}), batch_size ({}) and frame_stride ({}) must be positive",
                self.epochs, self.batch_size, self.frame_stride
            )));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.adam.lr)));
        }
        Ok(())
    }
}

/// Mean per-cube loss of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss_r: f64,
    pub loss_m: f64,
}

impl EpochLoss {
    pub fn total(&self) -> f64 {
        self.loss_r + self.loss_m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub config: TrainConfig,
    pub train_cubes: usize,
    pub steps: u64,
    pub loss_curve: Vec<EpochLoss>,
}

/// Writes the loss curve as `epoch,loss_r,loss_m` CSV.
pub fn loss_csv(curve: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,loss_r,loss_m\n");
    for e in curve {
        s.push_str(&format!("{},{},{}\n", e.epoch, e.loss_r, e.loss_m));
    }
    s
}

/// Means and standard deviations of per-cube training errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub mean_r: f64,
    pub std_r: f64,
    pub mean_m: f64,
    pub std_m: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt().max(STD_FLOOR))
}

impl ScoreStats {
    /// Population statistics of per-cube errors, standard deviations floored.
    pub fn from_errors(raw: &[f64], motion: &[f64]) -> Result<Self> {
        if raw.len() < 2 || motion.len() != raw.len() {
            return Err(Error::InvalidArgument(format!(
                "score statistics need at least 2 cubes per branch (got {} raw, {} motion)",
                raw.len(),
                motion.len()
            )));
        }
        let (mean_r, std_r) = mean_std(raw);
        let (mean_m, std_m) = mean_std(motion);
        Ok(Self {
            mean_r,
            std_r,
            mean_m,
            std_m,
        })
    }

    /// `w_r * z(s_r) + w_m * z(s_m)`.
    pub fn standardize(&self, s_r: f64, s_m: f64, w_r: f64, w_m: f64) -> f64 {
        w_r * (s_r - self.mean_r) / self.std_r + w_m * (s_m - self.mean_m) / self.std_m
    }
}

fn positions<T: Real>(model: &StateModel<T>, x: &[usize]) -> Result<usize> {
    let s = model.config().seq_len();
    match x.first() {
        Some(&b) if b % s == 0 && b > 0 => Ok(b / s),
        _ => Err(shape_err("loss", format!("batch {x:?} is not a whole number of cubes"))),
    }
}

/// `(1/n) * sum_i sum_j ||raw(X)_j - X_j||_p^p` over a batch of `n` cubes.
pub fn loss_raw<'g, T: Real>(model: &StateModel<T>, b: &Bound<'g, T>, cubes: Var<'g, T>) -> Result<Var<'g, T>> {
    let n = positions(model, &cubes.shape())?;
    let y = model.forward(b, cubes)?;
    Ok(y.sub(cubes)?.pnorm_pow(model.config().p).scale(1.0 / n as f64))
}

/// `(1/n) * sum_i sum_j ||motion(X)_j - O_j||_p^p`; `flows` is data.
pub fn loss_motion<'g, T: Real>(
    model: &StateModel<T>,
    b: &Bound<'g, T>,
    cubes: Var<'g, T>,
    flows: Var<'g, T>,
) -> Result<Var<'g, T>> {
    let n = positions(model, &cubes.shape())?;
    let y = model.forward(b, cubes)?;
    if flows.shape() != y.shape() {
        return Err(shape_err(
            "loss_motion",
            format!("flow target {:?} vs reconstruction {:?}", flows.shape(), y.shape()),
        ));
    }
    Ok(y.sub(flows)?.pnorm_pow(model.config().p).scale(1.0 / n as f64))
}

/// `sum |y - t|^p` per cube of `s` consecutive images, accumulated in f64.
pub fn cube_errors<T: Real>(y: &Tensor<T>, target: &Tensor<T>, s: usize, p: f64) -> Result<Vec<f64>> {
    if y.shape() != target.shape() || y.shape()[0] % s != 0 {
        return Err(shape_err(
            "cube_errors",
            format!("output {:?} vs target {:?} ({s} per cube)", y.shape(), target.shape()),
        ));
    }
    let per = y.numel() / (y.shape()[0] / s);
    Ok(y.data()
        .chunks(per)
        .zip(target.data().chunks(per))
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(&u, &v)| {
                    let d = (u.to_f64().unwrap_or(f64::NAN) - v.to_f64().unwrap_or(f64::NAN)).abs();
                    if p == 2.0 {
                        d * d
                    } else {
                        d.powf(p)
                    }
                })
                .sum()
        })
        .collect())
}

/// Eval-mode per-cube errors `(S_r, S_m)` of unperturbed cubes.
pub fn eval_errors(
    raw: &StateModel<f32>,
    motion: &StateModel<f32>,
    patches: &[&Tensor<f32>],
    flows: &[&Tensor<f32>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = stack_cubes(patches)?;
    let o = stack_cubes(flows)?;
    let s = raw.config().seq_len();
    let s_r = cube_errors(&raw.reconstruct(&x)?, &x, s, raw.config().p)?;
    let s_m = cube_errors(&motion.reconstruct(&x)?, &o, s, motion.config().p)?;
    Ok((s_r, s_m))
}

/// Training-set statistics in eval mode without any input perturbation.
pub fn compute_score_stats(
    raw: &StateModel<f32>,
    motion: &StateModel<f32>,
    cubes: &CubeSet,
    batch_size: usize,
) -> Result<ScoreStats> {
    let (mut all_r, mut all_m) = (Vec::with_capacity(cubes.len()), Vec::with_capacity(cubes.len()));
    for start in (0..cubes.len()).step_by(batch_size.max(1)) {
        let end = (start + batch_size.max(1)).min(cubes.len());
        let p: Vec<&Tensor<f32>> = cubes.patches[start..end].iter().collect();
        let f: Vec<&Tensor<f32>> = cubes.flows[start..end].iter().collect();
        let (r, m) = eval_errors(raw, motion, &p, &f)?;
        all_r.extend(r);
        all_m.extend(m);
    }
    ScoreStats::from_errors(&all_r, &all_m)
}

/// One training-mode Adam step on one branch: the raw branch when `flows` is
/// `None`, the motion branch otherwise. Returns the batch loss.
pub fn train_step(
    model: &mut StateModel<f32>,
    opt: &mut Adam<f32>,
    x: &Tensor<f32>,
    flows: Option<&Tensor<f32>>,
) -> Result<f64> {
    let g = Graph::new();
    let b = model.bind(&g, Mode::Train, true);
    let xv = g.constant(x.clone());
    let loss = match flows {
        None => loss_raw(model, &b, xv)?,
        Some(f) => loss_motion(model, &b, xv, g.constant(f.clone()))?,
    };
    let value = loss.value().item() as f64;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("loss is {value}")));
    }
    let mut grads = g.backward(loss)?;
    let gs: Vec<Tensor<f32>> = b
        .vars()
        .iter()
        .zip(model.params().tensors())
        .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    let stats = b.take_batch_stats();
    opt.step(model.params_mut().tensors_mut(), &gs)?;
    model.absorb_batch_stats(stats);
    Ok(value)
}

/// Initial models and the shuffling stream for `seed`.
fn init(model_cfg: &ModelConfig, seed: u64) -> Result<(StateModel<f32>, StateModel<f32>, ChaCha8Rng)> {
    let mut root = ChaCha8Rng::seed_from_u64(seed);
    let raw = StateModel::new(model_cfg.with_out_channels(model_cfg.in_channels), root.next_u64())?;
    let motion = StateModel::new(model_cfg.with_out_channels(2), root.next_u64())?;
    Ok((raw, motion, ChaCha8Rng::seed_from_u64(root.next_u64())))
}

pub fn train(cubes: &CubeSet, model_cfg: &ModelConfig, cfg: &TrainConfig, seed: u64) -> Result<Checkpoint> {
    train_with_progress(cubes, model_cfg, cfg, seed, |_| {})
}

/// Trains both branches for `cfg.epochs` epochs over seeded shuffles of
/// `cubes`, then computes the training error statistics.
pub fn train_with_progress(
    cubes: &CubeSet,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
    mut progress: impl FnMut(&EpochLoss),
) -> Result<Checkpoint> {
    cfg.validate()?;
    model_cfg.validate()?;
    if cubes.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 training cubes, got {}", cubes.len())));
    }
    let (mut raw, mut motion, mut rng) = init(model_cfg, seed)?;
    let mut opt_r = Adam::new(cfg.adam, raw.params().tensors());
    let mut opt_m = Adam::new(cfg.adam, motion.params().tensors());
    let mut order: Vec<usize> = (0..cubes.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum_r, mut sum_m) = (0.0, 0.0);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let p: Vec<&Tensor<f32>> = idx.iter().map(|&i| &cubes.patches[i]).collect();
            let f: Vec<&Tensor<f32>> = idx.iter().map(|&i| &cubes.flows[i]).collect();
            let x = stack_cubes(&p)?;
            let o = stack_cubes(&f)?;
            let step_no = opt_r.steps() + 1;
            let at = |branch: &str, e: Error| match e {
                Error::Numerical(m) => Error::Numerical(format!(
                    "{m} in the {branch} branch at epoch {epoch}, step {step_no}, batch {bi}"
                )),
                other => other,
            };
            let lr = train_step(&mut raw, &mut opt_r, &x, None).map_err(|e| at("raw", e))?;
            let lm = train_step(&mut motion, &mut opt_m, &x, Some(&o)).map_err(|e| at("motion", e))?;
            sum_r += lr * idx.len() as f64;
            sum_m += lm * idx.len() as f64;
        }
        let e = EpochLoss {
            epoch,
            loss_r: sum_r / cubes.len() as f64,
            loss_m: sum_m / cubes.len() as f64,
        };
        progress(&e);
        curve.push(e);
    }
    let stats = compute_score_stats(&raw, &motion, cubes, cfg.batch_size)?;
    Ok(Checkpoint {
        raw,
        motion,
        stats,
        meta: TrainMeta {
            seed,
            config: cfg.clone(),
            train_cubes: cubes.len(),
            steps: opt_r.steps(),
            loss_curve: curve,
        },
    })
}
