//! Grounding accuracy evaluation.

use std::time::Instant;

use crate::autodiff::ParamStore;
use crate::error::Result;
use crate::head::iou3d;
use crate::pipeline::{infer, ModelConfig};
use crate::text::Vocabulary;

use super::scene::GroundingSample;

#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub acc_at_25: f64,
    pub acc_at_50: f64,
    pub ious: Vec<f64>,
    pub mean_forward_ms: f64,
}

/// Per-sample inference against the ground-truth target box. Wall time
/// covers the forward pass only; dataset generation happens elsewhere.
pub fn evaluate(
    dataset: &[GroundingSample],
    store: &ParamStore,
    config: &ModelConfig,
    vocab: &Vocabulary,
) -> Result<EvalReport> {
    let mut ious = Vec::with_capacity(dataset.len());
    let mut total_ms = 0.0;
    for sample in dataset {
        let t = Instant::now();
        let (pred, _) = infer(&sample.points, &sample.description, store, config, vocab)?;
        total_ms += t.elapsed().as_secs_f64() * 1e3;
        ious.push(iou3d(&pred, &sample.target_box()));
    }
    let frac = |thr: f64| ious.iter().filter(|&&v| v >= thr).count() as f64 / ious.len() as f64;
    Ok(EvalReport {
        acc_at_25: frac(0.25),
        acc_at_50: frac(0.5),
        mean_forward_ms: total_ms / dataset.len() as f64,
        ious,
    })
}
