//! Checkpoint directory: `manifest.json` (configuration, statistics,
//! training metadata, tensor index) and `tensors.bin` (the listed tensors as
//! consecutive STEN records).

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ScoreStats, TrainMeta};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, StateModel};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Both trained branches with the statistics needed to score.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub raw: StateModel<f32>,
    pub motion: StateModel<f32>,
    pub stats: ScoreStats,
    pub meta: TrainMeta,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    model: ModelConfig,
    stats: ScoreStats,
    meta: TrainMeta,
    tensors: Vec<TensorEntry>,
}

fn named_tensors<'a>(prefix: &str, m: &'a StateModel<f32>) -> Vec<(String, &'a Tensor<f32>)> {
    let mut out: Vec<(String, &Tensor<f32>)> = m
        .params()
        .iter()
        .map(|(n, t)| (format!("{prefix}/{n}"), t))
        .collect();
    for (name, r) in m.running_names().iter().zip(m.running_stats()) {
        out.push((format!("{prefix}/{name}.running_mean"), &r.mean));
        out.push((format!("{prefix}/{name}.running_var"), &r.var));
    }
    out
}

fn slots<'a>(prefix: &str, m: &'a mut StateModel<f32>) -> Vec<(String, &'a mut Tensor<f32>)> {
    let names: Vec<String> = named_tensors(prefix, m).into_iter().map(|(n, _)| n).collect();
    names.into_iter().zip(m.state_tensors_mut()).collect()
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tensors: Vec<(String, &Tensor<f32>)> = named_tensors("raw", &ckpt.raw)
        .into_iter()
        .chain(named_tensors("motion", &ckpt.motion))
        .collect();
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        model: ckpt.raw.config().clone(),
        stats: ckpt.stats,
        meta: ckpt.meta.clone(),
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mut w = BufWriter::new(fs::File::create(dir.join("tensors.bin"))?);
    for (_, t) in &tensors {
        t.write_to(&mut w)?;
    }
    w.flush()?;
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let mpath = dir.join("manifest.json");
    let tpath = dir.join("tensors.bin");
    if !mpath.is_file() || !tpath.is_file() {
        return Err(Error::MissingArtifact(format!("checkpoint {}", dir.display())));
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(&mpath)?)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {} (expected {CHECKPOINT_VERSION})",
            manifest.version
        )));
    }
    let mut raw = StateModel::new(manifest.model.clone(), 0)?;
    let mut motion = StateModel::new(manifest.model.with_out_channels(2), 0)?;
    let mut r = BufReader::new(fs::File::open(&tpath)?);
    {
        let mut targets = slots("raw", &mut raw);
        targets.extend(slots("motion", &mut motion));
        if targets.len() != manifest.tensors.len() {
            return Err(Error::Format(format!(
                "checkpoint lists {} tensors, the configured model has {}",
                manifest.tensors.len(),
                targets.len()
            )));
        }
        for ((name, slot), entry) in targets.into_iter().zip(&manifest.tensors) {
            let t = Tensor::<f32>::read_from(&mut r)
                .map_err(|e| Error::Format(format!("tensor {}: {e}", entry.name)))?;
            if entry.name != name || t.shape() != slot.shape() || t.shape() != entry.shape.as_slice() {
                return Err(Error::Format(format!(
                    "tensor {} {:?} does not fit slot {name} {:?}",
                    entry.name,
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after the last tensor".into()));
    }
    Ok(Checkpoint {
        raw,
        motion,
        stats: manifest.stats,
        meta: manifest.meta,
    })
}
