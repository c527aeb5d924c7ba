//! Measurement routines shared by the unit-style tests and the acceptance
//! report. Each returns the measured quantity; callers apply thresholds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use state_vad::autodiff::{conv, pool, Graph};
use state_vad::detect::{apply_perturbation, auroc, cube_score, input_gradient, perturb_inputs, PerturbConfig};
use state_vad::model::{stack_cubes, Mode, ModelConfig, StateModel};
use state_vad::synth::{generate_clip, CubeSet, GenConfig, Split};
use state_vad::train::ScoreStats;
use state_vad::Tensor;

use super::{grad_check, micro_config, random, random_away, rel_err, small_model, FD_STEP};

/// Max relative finite-difference error of every differentiable op.
pub fn op_gradient_errors() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let a = random_away(&[2, 3, 4], 1);
    let b = random_away(&[2, 3, 4], 2);
    let row = random_away(&[1, 3, 1], 3);
    out.push(("add", grad_check(&[a.clone(), b.clone()], |_, v| v[0].add(v[1]).unwrap())));
    out.push(("sub", grad_check(&[a.clone(), b.clone()], |_, v| v[0].sub(v[1]).unwrap())));
    out.push(("mul", grad_check(&[a.clone(), b.clone()], |_, v| v[0].mul(v[1]).unwrap())));
    out.push(("add broadcast", grad_check(&[a.clone(), row.clone()], |_, v| v[0].add(v[1]).unwrap())));
    out.push(("mul broadcast", grad_check(&[row.clone(), a.clone()], |_, v| v[0].mul(v[1]).unwrap())));
    out.push(("relu", grad_check(&[a.clone()], |_, v| v[0].relu())));
    out.push(("leaky_relu", grad_check(&[a.clone()], |_, v| v[0].leaky_relu())));
    out.push(("exp", grad_check(&[a.clone()], |_, v| v[0].exp())));
    out.push(("abs", grad_check(&[a.clone()], |_, v| v[0].abs())));
    out.push(("pow 2", grad_check(&[a.clone()], |_, v| v[0].powf(2.0))));
    out.push(("pow 3", grad_check(&[a.clone()], |_, v| v[0].powf(3.0))));
    out.push(("scale", grad_check(&[a.clone()], |_, v| v[0].scale(-2.5))));

    let c = random(&[2, 3, 4], 4, -1.0, 1.0);
    let d = random(&[2, 2, 4], 5, -1.0, 1.0);
    out.push(("reshape", grad_check(&[c.clone()], |_, v| v[0].reshape(&[6, 4]).unwrap().exp())));
    out.push(("narrow", grad_check(&[c.clone()], |_, v| v[0].narrow(1, 1, 2).unwrap().exp())));
    out.push(("concat", grad_check(&[c.clone(), d], |g, v| g.concat(&[v[0], v[1]], 1).unwrap().exp())));
    out.push(("sum", grad_check(&[c.clone()], |_, v| v[0].exp().sum())));
    for axis in 0..3 {
        out.push(("sum_axis", grad_check(&[c.clone()], |_, v| v[0].sum_axis(axis).unwrap().exp())));
        out.push(("softmax", grad_check(&[c.clone()], |_, v| v[0].softmax(axis).unwrap())));
    }
    for p in [1.0, 2.0, 3.0] {
        out.push(("pnorm_pow", grad_check(&[random_away(&[3, 5], 6)], |_, v| v[0].pnorm_pow(p))));
    }

    let x = random(&[2, 3, 6, 5], 7, -1.0, 1.0);
    let k = random(&[4, 3, 3, 3], 8, -0.5, 0.5);
    let bias = random(&[4], 9, -0.5, 0.5);
    out.push((
        "conv2d s1 p1",
        grad_check(&[x.clone(), k.clone(), bias], |_, v| v[0].conv2d(v[1], Some(v[2]), 1, 1).unwrap()),
    ));
    out.push(("conv2d s2 p0", grad_check(&[x, k], |_, v| v[0].conv2d(v[1], None, 2, 0).unwrap())));
    let xt = random(&[2, 3, 3, 4], 10, -1.0, 1.0);
    let k2 = random(&[3, 2, 2, 2], 11, -0.5, 0.5);
    let b2 = random(&[2], 12, -0.5, 0.5);
    out.push((
        "conv_transpose k2 s2",
        grad_check(&[xt.clone(), k2, b2], |_, v| v[0].conv_transpose2d(v[1], Some(v[2]), 2, 0).unwrap()),
    ));
    let k3 = random(&[3, 2, 3, 3], 13, -0.5, 0.5);
    out.push((
        "conv_transpose k3 s1 p1",
        grad_check(&[xt, k3], |_, v| v[0].conv_transpose2d(v[1], None, 1, 1).unwrap()),
    ));

    let x = random(&[2, 3, 4, 6], 14, -1.0, 1.0);
    out.push(("maxpool", grad_check(&[x.clone()], |_, v| v[0].maxpool2d().unwrap())));
    let gamma = random(&[3], 15, 0.5, 1.5);
    let beta = random(&[3], 16, -0.5, 0.5);
    out.push((
        "batch_norm train",
        grad_check(&[x.clone(), gamma.clone(), beta.clone()], |_, v| {
            v[0].batch_norm_train(v[1], v[2]).unwrap().0
        }),
    ));
    let mean = random(&[3], 17, -0.3, 0.3);
    let var = random(&[3], 18, 0.5, 2.0);
    out.push((
        "batch_norm eval",
        grad_check(&[x, gamma, beta], |_, v| v[0].batch_norm_eval(v[1], v[2], &mean, &var).unwrap()),
    ));
    let x4 = random(&[2, 4, 3, 3], 19, -1.0, 1.0);
    let g4 = random(&[4], 20, 0.5, 1.5);
    let b4 = random(&[4], 21, -0.5, 0.5);
    out.push(("group_norm", grad_check(&[x4, g4, b4], |_, v| v[0].group_norm(v[1], v[2], 2).unwrap())));
    out
}

/// Micro model in f64 with non-trivial running statistics and positional
/// encoding, plus a two-cube input batch.
pub fn micro_inputs() -> (StateModel<f64>, Tensor<f64>) {
    let cfg = micro_config();
    let mut model = StateModel::<f32>::new(cfg.clone(), 3).unwrap().cast::<f64>();
    for (i, r) in model.running_stats_mut().iter_mut().enumerate() {
        r.mean = random(r.mean.shape(), 100 + i as u64, -0.2, 0.2);
        r.var = random(r.var.shape(), 200 + i as u64, 0.5, 1.5);
    }
    let pe_shape = model.positional_encoding().shape().to_vec();
    *model.positional_encoding_mut() = random(&pe_shape, 300, -0.5, 0.5);
    let x = random(&[2 * cfg.seq_len(), cfg.in_channels, cfg.height, cfg.width], 301, 0.0, 1.0);
    (model, x)
}

/// End-to-end input gradient of the eval-mode forward pass.
pub fn model_input_gradient_error() -> f64 {
    let (model, x) = micro_inputs();
    grad_check(&[x], |g, v| {
        let b = model.bind(g, Mode::Eval, false);
        model.forward(&b, v[0]).unwrap()
    })
}

/// Parameter gradients of the training-mode forward pass, on a strided
/// subset of every parameter tensor.
pub fn model_param_gradient_error() -> f64 {
    let (model, x) = micro_inputs();
    let proj = random(x.shape(), 302, -1.0, 1.0);
    let loss_of = |m: &StateModel<f64>| -> f64 {
        let g = Graph::new();
        let b = m.bind(&g, Mode::Train, false);
        let y = m.forward(&b, g.constant(x.clone())).unwrap();
        let v = y.value();
        v.data().iter().zip(proj.data()).map(|(a, r)| a * r).sum()
    };
    let g = Graph::new();
    let b = model.bind(&g, Mode::Train, true);
    let y = model.forward(&b, g.constant(x.clone())).unwrap();
    let loss = y.mul(g.constant(proj.clone())).unwrap().sum();
    let grads = g.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (pi, var) in b.vars().iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(&var.shape()));
        let n = analytic.numel();
        for i in (0..n).step_by((n / 6).max(1)) {
            let mut m = model.clone();
            m.params_mut().tensors_mut()[pi].data_mut()[i] += FD_STEP;
            let up = loss_of(&m);
            m.params_mut().tensors_mut()[pi].data_mut()[i] -= 2.0 * FD_STEP;
            let down = loss_of(&m);
            worst = worst.max(rel_err(analytic.data()[i], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

/// Checks default-config shapes; returns the largest deviation of an
/// attention row sum from 1.
pub fn default_shapes() -> f64 {
    let cfg = ModelConfig::raw();
    let model = StateModel::<f32>::new(cfg.clone(), 0).unwrap();
    let x: Tensor<f32> = random(&[7, 3, 32, 32], 1, 0.0, 1.0).cast();
    let g = Graph::new();
    let b = model.bind(&g, Mode::Eval, false);
    let mut z = model.encode(&b, g.constant(x.clone())).unwrap();
    assert_eq!(z.shape(), vec![7, 128, 8, 8], "encoder output");
    let mut worst = 0.0f64;
    for l in 0..cfg.n_stacks {
        let heads = model.attention_weights(&b, l, z).unwrap();
        assert_eq!(heads.len(), cfg.n_heads);
        for a in &heads {
            let a = a.value();
            assert_eq!(a.shape(), &[1, 7, 7, 64]);
            for i in 0..7 {
                for p in 0..64 {
                    let s: f64 = (0..7).map(|j| a.at(&[0, i, j, p]) as f64).sum();
                    worst = worst.max((s - 1.0).abs());
                }
            }
        }
        let next = model.attention_layer(&b, l, z).unwrap();
        assert_eq!(next.shape(), z.shape(), "attention layer {l}");
        z = next;
    }
    assert_eq!(model.decode(&b, z).unwrap().shape(), vec![7, 3, 32, 32], "raw decoder");
    let motion = StateModel::<f32>::new(ModelConfig::motion(), 0).unwrap();
    assert_eq!(motion.reconstruct(&x).unwrap().shape(), &[7, 2, 32, 32], "motion decoder");
    worst
}

pub fn conv_direct(x: &Tensor<f64>, k: &Tensor<f64>, bias: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let (b, ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, kh) = (k.shape()[0], k.shape()[2]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kh) / stride + 1;
    let mut out = Tensor::zeros(&[b, co, ho, wo]);
    for n in 0..b {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias[o];
                    for c in 0..ci {
                        for i in 0..kh {
                            for j in 0..kh {
                                let y = (oy * stride + i) as isize - pad as isize;
                                let xx = (ox * stride + j) as isize - pad as isize;
                                if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                    acc += x.at(&[n, c, y as usize, xx as usize]) * k.at(&[o, c, i, j]);
                                }
                            }
                        }
                    }
                    out.data_mut()[((n * co + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

/// Largest difference between the im2col convolution and direct summation.
pub fn conv_oracle_diff() -> f64 {
    let mut worst = 0.0f64;
    for (case, (stride, pad, k)) in [(1, 1, 3), (2, 0, 3), (2, 1, 3), (1, 0, 1), (2, 0, 2)].into_iter().enumerate() {
        let s = case as u64 * 10;
        let x = random(&[2, 3, 7, 6], s, -1.0, 1.0);
        let kern = random(&[4, 3, k, k], s + 1, -1.0, 1.0);
        let bias = random(&[4], s + 2, -1.0, 1.0);
        let got = conv::conv2d(&x, &kern, Some(&bias), stride, pad).unwrap();
        let want = conv_direct(&x, &kern, bias.data(), stride, pad);
        assert_eq!(got.shape(), want.shape());
        worst = worst.max(got.max_abs_diff(&want));
    }
    worst
}

/// Number of pooled outputs that differ from the exhaustive window maximum.
pub fn maxpool_oracle_mismatches() -> usize {
    let x = random(&[2, 3, 6, 8], 5, -1.0, 1.0);
    let (y, _) = pool::maxpool2d(&x).unwrap();
    assert_eq!(y.shape(), &[2, 3, 3, 4]);
    let mut bad = 0;
    for n in 0..2 {
        for c in 0..3 {
            for i in 0..3 {
                for j in 0..4 {
                    let mut m = f64::NEG_INFINITY;
                    for a in 0..2 {
                        for b in 0..2 {
                            m = m.max(x.at(&[n, c, 2 * i + a, 2 * j + b]));
                        }
                    }
                    bad += (y.at(&[n, c, i, j]) != m) as usize;
                }
            }
        }
    }
    bad
}

pub fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                if si > sj {
                    num += 1.0;
                } else if si == sj {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// Random score sets (half of them heavily tied) on which the rank-based
/// AUROC differs from the pair count; returns (sets, mismatches).
pub fn auroc_oracle_mismatches() -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut bad = 0;
    for set in 0..100 {
        let n = rng.gen_range(2..=100);
        let levels = if set % 2 == 0 { 5 } else { 1000 };
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.3) as u8).collect();
        labels[0] = 1;
        labels[1] = 0;
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| rng.gen_range(0..levels) as f64 + l as f64 * rng.gen_range(0..3) as f64)
            .collect();
        bad += (auroc(&scores, &labels).unwrap() != brute_auroc(&scores, &labels)) as usize;
    }
    (100, bad)
}

fn sq_err(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    a.data().iter().zip(b.data()).map(|(&u, &v)| (u as f64 - v as f64).powi(2)).sum()
}

/// Largest relative gap between `cube_score` and the score composed from
/// separately reconstructed errors.
pub fn standardized_score_diff() -> f64 {
    let cfg = micro_config();
    let raw = StateModel::<f32>::new(cfg.clone(), 1).unwrap();
    let motion = StateModel::<f32>::new(cfg.with_out_channels(2), 2).unwrap();
    let stats = ScoreStats {
        mean_r: 3.0,
        std_r: 1.5,
        mean_m: 7.0,
        std_m: 2.5,
    };
    let w = PerturbConfig {
        eta: 0.0,
        w_r: 0.3,
        w_m: 1.0,
    };
    let mut worst = 0.0f64;
    for seed in 0..4 {
        let x: Tensor<f32> = random(&[cfg.seq_len(), 2, 8, 8], 50 + seed, 0.0, 1.0).cast();
        let o: Tensor<f32> = random(&[cfg.seq_len(), 2, 8, 8], 60 + seed, -2.0, 2.0).cast();
        let got = cube_score(&raw, &motion, &x, &o, &stats, &w).unwrap();
        let s_r = sq_err(&raw.reconstruct(&x).unwrap(), &x);
        let s_m = sq_err(&motion.reconstruct(&x).unwrap(), &o);
        let want = 0.3 * (s_r - 3.0) / 1.5 + (s_m - 7.0) / 2.5;
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    worst
}

/// Cubes from generated test clips in the small model's geometry.
pub fn sample_cubes(n: usize) -> CubeSet {
    let gen = GenConfig::default();
    let cfg = small_model();
    let clips: Vec<_> = (0..2).map(|i| generate_clip(&gen, 8, Split::Test, i).unwrap()).collect();
    let mut set = CubeSet::from_clips(&clips, cfg.context, (cfg.height, cfg.width), 7).unwrap();
    set.patches.truncate(n);
    set.flows.truncate(n);
    set.sources.truncate(n);
    set
}

/// Outcome of the perturbation identity / sign-invariance checks.
pub struct SignReport {
    pub eta_zero_identical: bool,
    /// For each loss scale: whether signs and perturbed inputs are identical.
    pub scales: Vec<(f64, bool)>,
    pub perturbation_moves_input: bool,
}

pub fn sign_invariance(raw: &StateModel<f32>, motion: &StateModel<f32>, cubes: &CubeSet) -> SignReport {
    let p: Vec<&Tensor<f32>> = cubes.patches.iter().collect();
    let f: Vec<&Tensor<f32>> = cubes.flows.iter().collect();
    let same = perturb_inputs(raw, motion, &p, &f, 0.0).unwrap();
    let x = stack_cubes(&p).unwrap();
    let o = stack_cubes(&f).unwrap();
    let base = input_gradient(raw, motion, &x, &o, 1.0).unwrap();
    let eta_zero_identical = same.iter().zip(&p).all(|(a, b)| a.to_bytes() == b.to_bytes())
        && apply_perturbation(&x, &base.grad, 0.0).unwrap().to_bytes() == x.to_bytes();
    let reference = apply_perturbation(&x, &base.grad, 0.002).unwrap();
    let signs = |g: &[f32]| g.iter().map(|v| v.partial_cmp(&0.0)).collect::<Vec<_>>();
    let scales = [0.5, 2.0, 10.0]
        .into_iter()
        .map(|c| {
            let pass = input_gradient(raw, motion, &x, &o, c).unwrap();
            let ok = signs(pass.grad.data()) == signs(base.grad.data())
                && apply_perturbation(&x, &pass.grad, 0.002).unwrap().to_bytes() == reference.to_bytes();
            (c, ok)
        })
        .collect();
    SignReport {
        eta_zero_identical,
        scales,
        perturbation_moves_input: reference.to_bytes() != x.to_bytes(),
    }
}
