//! Acceptance report: one PASS/FAIL line per criterion, non-zero exit status
//! if any criterion fails. Run with `cargo test --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{small_model, suites, tiny_pipeline};
use state_vad::autodiff::Adam;
use state_vad::detect::{evaluate, scores_csv, EvalOptions, PerturbConfig};
use state_vad::model::{ModelConfig, StateModel};
use state_vad::synth::{build_stcc, generate_clip, generate_dataset, CubeSet, GenConfig, Split};
use state_vad::train::{load_checkpoint, save_checkpoint, train_step, train_with_progress, TrainConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, elapsed: Duration) -> String {
    format!("{:.1} s of {:.0} s budget", elapsed.as_secs_f64(), limit.as_secs_f64())
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let ops = suites::op_gradient_errors();
    let (worst_name, worst_op) = ops.iter().copied().fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    let input = suites::model_input_gradient_error();
    let params = suites::model_param_gradient_error();
    let limit = Duration::from_secs(300);
    let el = t.elapsed();
    check(
        worst_op < 1e-4 && input < 1e-3 && params < 1e-3 && el < limit,
        format!(
            "{} op checks, worst {worst_op:.2e} ({worst_name}); end-to-end input {input:.2e}, parameters {params:.2e}; {}",
            ops.len(),
            within(limit, el)
        ),
    )
}

fn shape_suite() -> Outcome {
    let t = Instant::now();
    let dev = suites::default_shapes();
    let limit = Duration::from_secs(60);
    let el = t.elapsed();
    check(
        dev <= 1e-6 && el < limit,
        format!(
            "encoder (7,128,8,8), decoders (7,3,32,32)/(7,2,32,32), attention row sums within {dev:.1e} of 1; {}",
            within(limit, el)
        ),
    )
}

fn oracle_suite() -> Outcome {
    let conv = suites::conv_oracle_diff();
    let pool = suites::maxpool_oracle_mismatches();
    let (sets, auroc_bad) = suites::auroc_oracle_mismatches();
    let score = suites::standardized_score_diff();
    check(
        conv < 1e-12 && pool == 0 && auroc_bad == 0 && score <= 1e-6,
        format!(
            "conv2d vs direct sum {conv:.1e}; maxpool mismatches {pool}; AUROC mismatches {auroc_bad}/{sets}; standardized score {score:.1e}"
        ),
    )
}

fn sign_invariance() -> Outcome {
    let cfg = small_model();
    let raw = StateModel::<f32>::new(cfg.clone(), 1).unwrap();
    let motion = StateModel::<f32>::new(cfg.with_out_channels(2), 2).unwrap();
    let r = suites::sign_invariance(&raw, &motion, &suites::sample_cubes(8));
    let scales: Vec<String> = r.scales.iter().map(|(c, ok)| format!("c={c}: {}", if *ok { "equal" } else { "DIFFERS" })).collect();
    check(
        r.eta_zero_identical && r.perturbation_moves_input && r.scales.iter().all(|s| s.1),
        format!(
            "eta=0 bit-identical: {}; perturbed inputs under loss scaling: {}",
            r.eta_zero_identical,
            scales.join(", ")
        ),
    )
}

fn micro_overfit() -> Outcome {
    let t = Instant::now();
    let gen = GenConfig::default();
    let clip = generate_clip(&gen, 1, Split::Train, 0).unwrap();
    let (id, b) = clip.boxes(10)[0];
    let cube = build_stcc(&clip, 0, id, b, 10, 3, (32, 32)).unwrap();
    let cfg = small_model();
    let mut model = StateModel::<f32>::new(cfg, 1).unwrap();
    let mut adam_cfg = TrainConfig::default().adam;
    adam_cfg.lr = 3e-3;
    let mut opt = Adam::new(adam_cfg, model.params().tensors());
    let pixels = cube.patches.numel() as f64;
    let mut reached = None;
    let mut mse = f64::NAN;
    for step in 1..=500 {
        mse = train_step(&mut model, &mut opt, &cube.patches, None).map_err(|e| e.to_string())? / pixels;
        if mse < 1e-3 {
            reached = Some(step);
            break;
        }
    }
    let limit = Duration::from_secs(120);
    let el = t.elapsed();
    check(
        reached.is_some() && el < limit,
        format!(
            "per-pixel MSE {mse:.2e} {}; {}",
            reached.map_or("not reached in 500 steps".to_string(), |s| format!("below 1e-3 at step {s}")),
            within(limit, el)
        ),
    )
}

/// Benchmark preset: compact widths, every 8th training frame.
const BENCH_SEED: u64 = 7;
const BENCH_WIDTHS: [usize; 3] = [8, 16, 32];
const BENCH_FRAME_STRIDE: usize = 8;
const BENCH_WEIGHTS: (f64, f64) = (0.3, 1.0);
const BENCH_ETAS: [f64; 5] = [0.0005, 0.001, 0.002, 0.005, 0.01];

fn benchmark() -> Outcome {
    let t = Instant::now();
    let gen = GenConfig::default();
    let (train, test) = generate_dataset(&gen, BENCH_SEED).unwrap();
    let model = ModelConfig {
        widths: BENCH_WIDTHS,
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        frame_stride: BENCH_FRAME_STRIDE,
        ..TrainConfig::default()
    };
    let cubes = CubeSet::from_clips(&train, model.context, (model.height, model.width), tc.frame_stride).unwrap();
    drop(train);
    let ckpt = train_with_progress(&cubes, &model, &tc, BENCH_SEED, |e| {
        eprintln!("  benchmark epoch {:>2}: raw {:.2} motion {:.2}", e.epoch, e.loss_r, e.loss_m)
    })
    .map_err(|e| e.to_string())?;
    let weights = PerturbConfig {
        w_r: BENCH_WEIGHTS.0,
        w_m: BENCH_WEIGHTS.1,
        ..PerturbConfig::default()
    };
    let eval = evaluate(&ckpt, &test, &BENCH_ETAS, weights, EvalOptions::default()).map_err(|e| e.to_string())?;
    let plain = eval.auroc(None).map_err(|e| e.to_string())?;
    let best = eval.best_eta().map_err(|e| e.to_string())?.expect("etas evaluated");
    let tuned = eval.auroc(Some(best)).map_err(|e| e.to_string())?;
    let (normal, anomalous) = eval.raw_reductions(best).map_err(|e| e.to_string())?;
    let gap = eval.raw_gap_test(best).map_err(|e| e.to_string())?;
    let score_gap = eval.gap_test(best).map_err(|e| e.to_string())?;
    let curve = &ckpt.meta.loss_curve;
    let ratio = curve.last().unwrap().total() / curve[0].total();
    let limit = Duration::from_secs(45 * 60);
    let el = t.elapsed();
    let ok = plain >= 0.90
        && tuned >= plain - 0.01
        && normal.len() >= 200
        && anomalous.len() >= 200
        && gap.p_value < 0.01
        && el < limit;
    check(
        ok,
        format!(
            "AUROC plain {plain:.4}, perturbed {tuned:.4} at tuned eta {}; raw error reduction normal {:.4} vs \
             anomalous {:.4} (Welch t {:.2}, p {:.2e}, {} / {} cubes); standardized score reduction normal {:.4} vs \
             anomalous {:.4} (p {:.2e}); loss epoch {} / epoch 1 = {ratio:.3}; {}",
            BENCH_ETAS[best],
            gap.mean_a,
            gap.mean_b,
            gap.t,
            gap.p_value,
            normal.len(),
            anomalous.len(),
            score_gap.mean_a,
            score_gap.mean_b,
            score_gap.p_value,
            curve.len(),
            within(limit, el)
        ),
    )
}

fn determinism() -> Outcome {
    let run = |threads: usize| {
        let (ckpt, test) = tiny_pipeline(31, 2);
        let opts = EvalOptions {
            batch_size: 8,
            threads,
        };
        let eval = evaluate(&ckpt, &test, &[0.002], PerturbConfig::default(), opts).unwrap();
        (scores_csv(&eval, None).unwrap(), scores_csv(&eval, Some(0)).unwrap())
    };
    let a = run(1);
    let b = run(1);
    let c = run(2);
    check(
        a == b && a == c,
        format!(
            "two seeded runs: plain CSV identical {}, perturbed CSV identical {}; 2 threads identical {}",
            a.0 == b.0,
            a.1 == b.1,
            a == c
        ),
    )
}

fn checkpoint_round_trip() -> Outcome {
    let (ckpt, test) = tiny_pipeline(32, 1);
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&ckpt, dir.path()).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(dir.path()).map_err(|e| e.to_string())?;
    let w = PerturbConfig::default();
    let before = evaluate(&ckpt, &test, &[0.002], w, EvalOptions::default()).unwrap();
    let after = evaluate(&loaded, &test, &[0.002], w, EvalOptions::default()).unwrap();
    let mut worst = 0.0f64;
    for i in [None, Some(0)] {
        let (x, y) = (before.frame_scores(i).unwrap(), after.frame_scores(i).unwrap());
        worst = x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(worst, f64::max);
    }
    check(
        worst <= 1e-7,
        format!("max frame-score difference {worst:.1e} over {} frames", before.frames.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient suite", gradient_suite),
        ("shape/normalization suite", shape_suite),
        ("oracle suite", oracle_suite),
        ("sign invariance and eta=0 identity", sign_invariance),
        ("micro-overfit", micro_overfit),
        ("synthetic benchmark", benchmark),
        ("determinism", determinism),
        ("checkpoint round-trip", checkpoint_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS [{}] {name}: {d} ({secs:.1} s)", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL [{}] {name}: {d} ({secs:.1} s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
