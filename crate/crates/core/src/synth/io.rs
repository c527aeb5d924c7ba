//! Dataset directory layout:
//!
//! ```text
//! manifest.json            generator config, seed, clip ids per split
//! train/<id>.sten          frames [L, 3, H, W]
//! train/<id>.json          tracks and frame labels
//! test/...
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Clip, GenConfig, Split, Track};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub config: GenConfig,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub train_frames: usize,
    pub test_frames: usize,
    pub test_anomalous_frames: usize,
}

impl DatasetManifest {
    pub fn clip_ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ClipRecord {
    id: String,
    labels: Vec<u8>,
    tracks: Vec<Track>,
}

fn write_clip(dir: &Path, clip: &Clip) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(dir.join(format!("{}.sten", clip.id)))?);
    clip.frames.write_to(&mut w)?;
    w.flush()?;
    let rec = ClipRecord {
        id: clip.id.clone(),
        labels: clip.labels.clone(),
        tracks: clip.tracks.clone(),
    };
    fs::write(dir.join(format!("{}.json", clip.id)), serde_json::to_vec_pretty(&rec)?)?;
    Ok(())
}

/// Writes both splits and the manifest under `root` (created if needed).
pub fn write_dataset(root: &Path, config: &GenConfig, seed: u64, train: &[Clip], test: &[Clip]) -> Result<DatasetManifest> {
    for (split, clips) in [(Split::Train, train), (Split::Test, test)] {
        let dir = root.join(split.name());
        fs::create_dir_all(&dir)?;
        for clip in clips {
            write_clip(&dir, clip)?;
        }
    }
    let manifest = DatasetManifest {
        version: DATASET_VERSION,
        seed,
        config: config.clone(),
        train: train.iter().map(|c| c.id.clone()).collect(),
        test: test.iter().map(|c| c.id.clone()).collect(),
        train_frames: train.iter().map(Clip::len).sum(),
        test_frames: test.iter().map(Clip::len).sum(),
        test_anomalous_frames: test.iter().flat_map(|c| &c.labels).map(|&l| l as usize).sum(),
    };
    fs::write(root.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join("manifest.json");
    if !path.is_file() {
        return Err(Error::MissingArtifact(format!("dataset manifest {}", path.display())));
    }
    let m: DatasetManifest = serde_json::from_reader(BufReader::new(fs::File::open(&path)?))?;
    if m.version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "dataset version {} (expected {DATASET_VERSION})",
            m.version
        )));
    }
    Ok(m)
}

/// Reads every clip of `split` in manifest order.
pub fn load_split(root: &Path, split: Split) -> Result<Vec<Clip>> {
    let manifest = read_manifest(root)?;
    let dir = root.join(split.name());
    manifest
        .clip_ids(split)
        .iter()
        .map(|id| {
            let frames_path = dir.join(format!("{id}.sten"));
            let meta_path = dir.join(format!("{id}.json"));
            if !frames_path.is_file() || !meta_path.is_file() {
                return Err(Error::MissingArtifact(format!("clip {id} in {}", dir.display())));
            }
            let frames = Tensor::<f32>::read_from(BufReader::new(fs::File::open(frames_path)?))?;
            let rec: ClipRecord = serde_json::from_reader(BufReader::new(fs::File::open(meta_path)?))?;
            if frames.rank() != 4 || frames.shape()[0] != rec.labels.len() {
                return Err(Error::Format(format!(
                    "clip {id}: frames {:?} vs {} labels",
                    frames.shape(),
                    rec.labels.len()
                )));
            }
            Ok(Clip {
                id: rec.id,
                frames,
                tracks: rec.tracks,
                labels: rec.labels,
            })
        })
        .collect()
}
