//! Renders the synthetic dataset to disk and prints what it contains.
//!
//! `cargo run --release --example synth -- [out_dir] [seed]`

use std::path::PathBuf;

use state_vad::synth::{generate_dataset, write_dataset, AnomalyKind, GenConfig, Sprite};
use state_vad::Result;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example-data".into()));
    let seed = args.next().map_or(7, |s| s.parse().expect("seed"));
    let cfg = GenConfig::default();
    let (train, test) = generate_dataset(&cfg, seed)?;
    let m = write_dataset(&out, &cfg, seed, &train, &test)?;
    println!("wrote {} train and {} test clips to {}", m.train.len(), m.test.len(), out.display());
    println!(
        "test frames {}, anomalous {} ({:.3})",
        m.test_frames,
        m.test_anomalous_frames,
        m.test_anomalous_frames as f64 / m.test_frames as f64
    );
    for clip in test.iter().filter(|c| c.labels.contains(&1)).take(4) {
        let tr = clip.tracks.iter().find(|t| t.anomalous).expect("anomalous track");
        let kind = if tr.sprite == Sprite::Triangle { AnomalyKind::Triangle } else { AnomalyKind::FastMover };
        let first = clip.labels.iter().position(|&l| l == 1).unwrap_or(0);
        println!(
            "{}: {kind:?}, velocity {:?}, visible from frame {first} for {} frames",
            clip.id,
            tr.velocity,
            tr.positions.len()
        );
    }
    Ok(())
}
