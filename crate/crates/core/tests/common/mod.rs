#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use state_vad::autodiff::{Graph, Var};
use state_vad::model::ModelConfig;
use state_vad::synth::{generate_dataset, Clip, CubeSet, GenConfig};
use state_vad::train::{train as train_model, Checkpoint, TrainConfig};
use state_vad::Tensor;

pub const FD_STEP: f64 = 1e-5;
/// Floor on the relative-error denominator; smaller entries compare absolutely.
pub const REL_FLOOR: f64 = 1e-3;

pub fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Maximum relative error between autodiff and central differences for the
/// scalar `sum(f(inputs) * R)` with a fixed random projection `R`.
pub fn grad_check<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
{
    let eval = |xs: &[Tensor<f64>]| -> Tensor<f64> {
        let g = Graph::new();
        let vars: Vec<_> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let y = f(&g, &vars);
        let v = y.value().as_ref().clone();
        v
    };
    let shape = eval(inputs).shape().to_vec();
    let proj = random(&shape, 991, -1.0, 1.0);
    let dot = |y: &Tensor<f64>| -> f64 { y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum() };

    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let y = f(&g, &vars);
    let loss = y.mul(g.constant(proj.clone())).unwrap().sum();
    let grads = g.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.shape()));
        for i in 0..x.numel() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += FD_STEP;
            let up = dot(&eval(&xs));
            xs[k].data_mut()[i] -= 2.0 * FD_STEP;
            let down = dot(&eval(&xs));
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    worst
}

/// Two-channel 8x8 configuration for finite-difference checks.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        height: 8,
        width: 8,
        in_channels: 2,
        out_channels: 2,
        context: 1,
        widths: [4, 4, 8],
        n_heads: 2,
        n_stacks: 2,
        groups: 2,
        p: 2.0,
    }
}

/// Small model used for fast training tests.
pub fn small_model() -> ModelConfig {
    ModelConfig {
        widths: [8, 16, 32],
        ..ModelConfig::default()
    }
}

/// A few short clips on small frames.
pub fn tiny_gen() -> GenConfig {
    GenConfig {
        frame_height: 64,
        frame_width: 64,
        clip_len: 12,
        train_clips: 3,
        test_clips: 4,
        object_size: [10, 14],
        anomaly_fraction: 0.25,
        ..GenConfig::default()
    }
}

/// Entries in `±[0.1, 1)`, kept clear of the kinks of relu and abs.
pub fn random_away(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Trains the small model on the tiny dataset; returns the checkpoint and
/// the test clips.
pub fn tiny_pipeline(seed: u64, epochs: usize) -> (Checkpoint, Vec<Clip>) {
    let gen = tiny_gen();
    let (train, test) = generate_dataset(&gen, seed).unwrap();
    let cfg = small_model();
    let cubes = CubeSet::from_clips(&train, cfg.context, (cfg.height, cfg.width), 1).unwrap();
    let tc = TrainConfig {
        epochs,
        batch_size: 8,
        ..TrainConfig::default()
    };
    (train_model(&cubes, &cfg, &tc, seed).unwrap(), test)
}

pub mod suites;
