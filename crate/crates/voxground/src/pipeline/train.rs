//! Loss assembly and the training step.

use crate::autodiff::{adam_step, AdamConfig, AdamMoments, NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::harness::scene::GroundingSample;
use crate::head::{assign_targets, diou_loss_t, focal_loss_t, gather_rows_t};
use crate::matrix::Matrix;
use crate::sparse::{Coord3, SparseGrid};
use crate::text::Vocabulary;
use crate::tgp::{build_scene_supervision, build_target_supervision};

use super::config::ModelConfig;
use super::model::{forward, ForwardOut};

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
/// The objectness term upweights its rare positives; the pruning and
/// completion masks are much denser and keep the stock weighting.
pub const CLASS_FOCAL_ALPHA: f64 = 0.75;

/// Per-term loss values of one step (already averaged over the batch).
#[derive(Clone, Copy, Debug, Default)]
pub struct LossReport {
    pub total: f64,
    pub pruning: f64,
    pub completion: f64,
    pub class: f64,
    pub bbox: f64,
}

fn coords_only_grid(coords: &[Coord3], level: i32, voxel_size: f64) -> Result<SparseGrid> {
    SparseGrid::new(coords.to_vec(), Matrix::zeros(coords.len(), 0), level, voxel_size)
}

/// Builds the weighted total loss for one sample on the forward's tape.
/// Terms with a zero weight are omitted entirely, so their exclusive
/// parameters receive exactly zero gradient.
pub fn build_loss(
    tape: &mut Tape,
    out: &ForwardOut,
    sample: &GroundingSample,
    config: &ModelConfig,
) -> Result<(NodeId, LossReport)> {
    let target = sample.target_box();
    let mut report = LossReport::default();
    let mut total: Option<NodeId> = None;
    let add_term = |tape: &mut Tape, total: &mut Option<NodeId>, node: NodeId, weight: f64| -> Result<f64> {
        let value = tape.value(node).as_scalar()?;
        let scaled = tape.scale(node, weight);
        *total = Some(match *total {
            None => scaled,
            Some(acc) => tape.add(acc, scaled)?,
        });
        Ok(value)
    };

    // pruning supervision per block
    if config.lambda1 != 0.0 && !out.tgp_aux.is_empty() {
        let mut term: Option<NodeId> = None;
        for aux in &out.tgp_aux {
            let host = coords_only_grid(&aux.coords, aux.level, level_size(aux.level, config))?;
            let mask = if aux.scene_kind {
                build_scene_supervision(&sample.object_boxes(), config.cube_l, &host)
            } else {
                build_target_supervision(
                    &target,
                    &sample.relevant_boxes(),
                    config.cube_l,
                    &host,
                )
            };
            let labels: Vec<bool> = mask.values().iter().map(|&v| v == 1.0).collect();
            let f = focal_loss_t(tape, aux.probs, &labels, FOCAL_ALPHA, FOCAL_GAMMA)?;
            term = Some(match term {
                None => f,
                Some(acc) => tape.add(acc, f)?,
            });
        }
        if let Some(node) = term {
            report.pruning = add_term(tape, &mut total, node, config.lambda1)?;
        }
    }

    // completion supervision per block
    if config.lambda2 != 0.0 && !out.cba_aux.is_empty() {
        let mut term: Option<NodeId> = None;
        for aux in &out.cba_aux {
            let labels = assign_targets(
                &aux.coords,
                level_size(aux.level, config),
                &target,
                config.l_pos,
            );
            let f = focal_loss_t(tape, aux.probs, &labels, FOCAL_ALPHA, FOCAL_GAMMA)?;
            term = Some(match term {
                None => f,
                Some(acc) => tape.add(acc, f)?,
            });
        }
        if let Some(node) = term {
            report.completion = add_term(tape, &mut total, node, config.lambda2)?;
        }
    }

    // objectness classification on the final map
    let labels = assign_targets(&out.u1.coords, out.u1.voxel_size, &target, config.l_pos);
    if config.lambda3 != 0.0 {
        let f = focal_loss_t(tape, out.obj_probs, &labels, CLASS_FOCAL_ALPHA, FOCAL_GAMMA)?;
        report.class = add_term(tape, &mut total, f, config.lambda3)?;
    }

    // box regression at the positive voxels
    if config.lambda4 != 0.0 {
        let positives: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y)
            .map(|(i, _)| i)
            .collect();
        if !positives.is_empty() {
            let centers: Vec<[f64; 3]> = positives
                .iter()
                .map(|&i| {
                    let c = out.u1.coords[i];
                    let vs = out.u1.voxel_size;
                    [
                        (f64::from(c.x) + 0.5) * vs,
                        (f64::from(c.y) + 0.5) * vs,
                        (f64::from(c.z) + 0.5) * vs,
                    ]
                })
                .collect();
            let rows = gather_rows_t(tape, out.box_params, positives)?;
            let d = diou_loss_t(tape, rows, &centers, out.u1.voxel_size, &target)?;
            report.bbox = add_term(tape, &mut total, d, config.lambda4)?;
        }
    }

    let total = match total {
        Some(t) => t,
        None => tape.scalar(0.0),
    };
    report.total = tape.value(total).as_scalar()?;
    Ok((total, report))
}

fn level_size(level: i32, config: &ModelConfig) -> f64 {
    // level -2 is the base voxelization
    config.base_voxel_size * f64::powi(2.0, level + 2)
}

/// Finite-difference check of the whole forward+loss against the tape
/// gradients, on one seeded sample. `entries` caps the checked entries
/// per tensor (at most 64).
pub fn grad_check_full(
    sample: &GroundingSample,
    config: &ModelConfig,
    vocab: &Vocabulary,
    eps: f64,
    entries: usize,
    check_seed: u64,
) -> Result<crate::autodiff::GradCheckReport> {
    let mut store = super::params::init_params(config, vocab)?;
    let points = sample.points.clone();
    let words = sample.description.clone();
    let sample = sample.clone();
    let config_c = config.clone();
    let vocab_c = vocab.clone();
    crate::autodiff::grad_check(
        move |tape, store| {
            let out = forward(tape, store, &config_c, &vocab_c, &points, &words)?;
            let (loss, _) = build_loss(tape, &out, &sample, &config_c)?;
            Ok(loss)
        },
        &mut store,
        eps,
        entries.min(64),
        check_seed,
    )
}

/// One optimizer step over a batch: per-sample forward + loss, gradients
/// averaged across the batch, then Adam. `t` is the 1-based step index.
pub fn train_step(
    batch: &[GroundingSample],
    store: &mut ParamStore,
    moments: &mut AdamMoments,
    adam: &AdamConfig,
    config: &ModelConfig,
    vocab: &Vocabulary,
    t: u64,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    store.zero_grads();
    let mut report = LossReport::default();
    for (i, sample) in batch.iter().enumerate() {
        let wrap = |e: Error| match e {
            Error::NumericError(msg) => {
                Error::NumericError(format!("sample {i}: {msg}"))
            }
            other => other,
        };
        let mut tape = Tape::new();
        let out = forward(
            &mut tape,
            store,
            config,
            vocab,
            &sample.points,
            &sample.description,
        )
        .map_err(wrap)?;
        let (loss, part) = build_loss(&mut tape, &out, sample, config).map_err(wrap)?;
        tape.backward_accumulate(loss, store, scale).map_err(wrap)?;
        report.total += part.total * scale;
        report.pruning += part.pruning * scale;
        report.completion += part.completion * scale;
        report.class += part.class * scale;
        report.bbox += part.bbox * scale;
    }
    adam_step(store, moments, adam, t)?;
    Ok(report)
}
