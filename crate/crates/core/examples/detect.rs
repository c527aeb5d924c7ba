//! Scores test clips with and without input perturbation, reports AUROC and
//! writes the ROC curve as SVG.
//!
//! `cargo run --release --example detect -- [checkpoint_dir] [eta]`
//! (train one first with the `train` example).

use std::path::PathBuf;

use state_vad::detect::{evaluate, roc_curve, roc_svg, EvalOptions, EvalSummary, PerturbConfig};
use state_vad::synth::{generate_split, GenConfig, Split};
use state_vad::train::load_checkpoint;
use state_vad::Result;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "target/example-checkpoint".into()));
    let eta = args.next().map_or(0.002, |s| s.parse().expect("eta"));
    let ckpt = load_checkpoint(&dir)?;
    let gen = GenConfig {
        test_clips: 8,
        ..GenConfig::default()
    };
    let test = generate_split(&gen, 1, Split::Test)?;
    let weights = PerturbConfig {
        eta,
        ..PerturbConfig::default()
    };
    let eval = evaluate(&ckpt, &test, &[eta], weights, EvalOptions::default())?;
    let summary = EvalSummary::new(&eval, 0, true)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    let roc = roc_curve(&eval.frame_scores(Some(0))?, &eval.labels())?;
    let svg = dir.join("roc.svg");
    std::fs::write(&svg, roc_svg(&roc, summary.auroc, &format!("eta = {eta}")))?;
    println!("ROC curve in {}", svg.display());
    Ok(())
}
