use serde::{Deserialize, Serialize};

use super::{Evaluation, PerturbConfig, WelchTest};
use crate::error::Result;

/// `clip_id,frame,label,score,n_cubes`, one row per frame.
pub fn scores_csv(eval: &Evaluation, eta_index: Option<usize>) -> Result<String> {
    let scores = eval.frame_scores(eta_index)?;
    let mut s = String::from("clip_id,frame,label,score,n_cubes\n");
    for (f, sc) in eval.frames.iter().zip(scores) {
        s.push_str(&format!("{},{},{},{},{}\n", f.clip_id, f.frame, f.label, sc, f.cubes.len()));
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub weights: PerturbConfig,
    pub frames: usize,
    pub anomalous_frames: usize,
    pub cubes: usize,
    /// Frame-level AUROC at `weights.eta`.
    pub auroc: f64,
    pub auroc_plain: Option<f64>,
    pub auroc_perturbed: Option<f64>,
    /// Normal vs anomalous raw reconstruction error reduction at `weights.eta`.
    pub raw_gap: Option<WelchTest>,
    /// Normal vs anomalous standardized score reduction at `weights.eta`.
    pub score_gap: Option<WelchTest>,
}

impl EvalSummary {
    /// Summary for evaluated eta `eta_index`; `compare` adds the unperturbed
    /// AUROC and the reduction gap tests.
    pub fn new(eval: &Evaluation, eta_index: usize, compare: bool) -> Result<Self> {
        let weights = PerturbConfig {
            eta: eval.etas.get(eta_index).copied().unwrap_or(f64::NAN),
            ..eval.weights
        };
        let auroc = eval.auroc(Some(eta_index))?;
        Ok(Self {
            weights,
            frames: eval.frames.len(),
            anomalous_frames: eval.frames.iter().filter(|f| f.label != 0).count(),
            cubes: eval.cubes.len(),
            auroc,
            auroc_plain: compare.then(|| eval.auroc(None)).transpose()?,
            auroc_perturbed: compare.then_some(auroc),
            raw_gap: if compare { eval.raw_gap_test(eta_index).ok() } else { None },
            score_gap: if compare { eval.gap_test(eta_index).ok() } else { None },
        })
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Per-eta AUROC and mean per-cube reductions, normal vs anomalous, of the
/// raw reconstruction error and of the standardized score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eta: f64,
    pub auroc: f64,
    pub normal_raw_reduction: f64,
    pub anomalous_raw_reduction: f64,
    /// One-sided Welch p-value for normal > anomalous raw error reduction.
    pub raw_gap_p_value: Option<f64>,
    pub normal_score_reduction: f64,
    pub anomalous_score_reduction: f64,
    pub score_gap_p_value: Option<f64>,
}

impl SweepRow {
    pub fn rows(eval: &Evaluation) -> Result<Vec<Self>> {
        (0..eval.etas.len())
            .map(|i| {
                let (rn, ra) = eval.raw_reductions(i)?;
                let (sn, sa) = eval.score_reductions(i)?;
                Ok(Self {
                    eta: eval.etas[i],
                    auroc: eval.auroc(Some(i))?,
                    normal_raw_reduction: mean(&rn),
                    anomalous_raw_reduction: mean(&ra),
                    raw_gap_p_value: eval.raw_gap_test(i).ok().map(|w| w.p_value),
                    normal_score_reduction: mean(&sn),
                    anomalous_score_reduction: mean(&sa),
                    score_gap_p_value: eval.gap_test(i).ok().map(|w| w.p_value),
                })
            })
            .collect()
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(
        "eta,auroc,normal_raw_reduction,anomalous_raw_reduction,raw_gap_p_value,\
         normal_score_reduction,anomalous_score_reduction,score_gap_p_value\n",
    );
    let opt = |p: Option<f64>| p.map_or(String::new(), |p| p.to_string());
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.eta,
            r.auroc,
            r.normal_raw_reduction,
            r.anomalous_raw_reduction,
            opt(r.raw_gap_p_value),
            r.normal_score_reduction,
            r.anomalous_score_reduction,
            opt(r.score_gap_p_value)
        ));
    }
    s
}
