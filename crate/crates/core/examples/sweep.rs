//! AUROC and mean score reduction of normal and anomalous cubes across
//! perturbation magnitudes.
//!
//! `cargo run --release --example sweep -- [checkpoint_dir]`

use std::path::PathBuf;

use state_vad::detect::{evaluate, sweep_csv, EvalOptions, PerturbConfig, SweepRow};
use state_vad::synth::{generate_split, GenConfig, Split};
use state_vad::train::load_checkpoint;
use state_vad::Result;

fn main() -> Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example-checkpoint".into()));
    let ckpt = load_checkpoint(&dir)?;
    let gen = GenConfig {
        test_clips: 8,
        ..GenConfig::default()
    };
    let test = generate_split(&gen, 1, Split::Test)?;
    let etas = [0.0, 0.002, 0.005];
    let eval = evaluate(&ckpt, &test, &etas, PerturbConfig::default(), EvalOptions::default())?;
    print!("{}", sweep_csv(&SweepRow::rows(&eval)?));
    for (i, &eta) in etas.iter().enumerate().skip(1) {
        if let Ok(t) = eval.normal_raw_reduction_test(i) {
            println!("eta {eta}: normal raw error reduction {:.4} (paired p {:.2e})", t.mean_diff, t.p_value);
        }
    }
    Ok(())
}
