//! Trains both branches on a reduced dataset and writes a checkpoint.
//!
//! `cargo run --release --example train -- [checkpoint_dir] [epochs]`

use std::path::PathBuf;

use state_vad::model::ModelConfig;
use state_vad::synth::{generate_split, CubeSet, GenConfig, Split};
use state_vad::train::{loss_csv, save_checkpoint, train_with_progress, TrainConfig};
use state_vad::Result;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example-checkpoint".into()));
    let epochs = args.next().map_or(3, |s| s.parse().expect("epochs"));
    let gen = GenConfig {
        train_clips: 6,
        ..GenConfig::default()
    };
    let model = ModelConfig {
        widths: [8, 16, 32],
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        epochs,
        batch_size: 8,
        frame_stride: 4,
        ..TrainConfig::default()
    };
    let clips = generate_split(&gen, 1, Split::Train)?;
    let cubes = CubeSet::from_clips(&clips, model.context, (model.height, model.width), tc.frame_stride)?;
    println!("{} training cubes", cubes.len());
    let ckpt = train_with_progress(&cubes, &model, &tc, 1, |e| {
        println!("epoch {}: raw {:.2}, motion {:.2}", e.epoch, e.loss_r, e.loss_m)
    })?;
    println!("training error statistics {:?}", ckpt.stats);
    save_checkpoint(&ckpt, &out)?;
    std::fs::write(out.join("loss.csv"), loss_csv(&ckpt.meta.loss_curve))?;
    println!("checkpoint in {}", out.display());
    Ok(())
}
