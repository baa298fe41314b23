//! Text-guided pruning: predict per-voxel keep probabilities from fused
//! voxel/text features, binarize against a threshold, prune, and build the
//! supervision masks. Supports both block orderings: the original form
//! (probabilities from a farthest-point subsample, interaction after
//! pruning) and the simplified form (one interaction before pruning).

use std::sync::Arc;

use crate::autodiff::{NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::head::Box3D;
use crate::matrix::Matrix;
use crate::sparse::{
    farthest_point_sample, interpolation_plan, prune, Coord3, SparseGrid, VoxelMask,
};
use crate::text::{attention_t, AttnNodes, AttnWeights, TokenSet};

/// Whether a block prunes background (scene) or keeps only the target and
/// its referential objects (target).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TgpKind {
    Scene,
    Target,
}

/// Learned weights of one pruning block.
#[derive(Clone, Debug)]
pub struct TgpLevelParams {
    pub token_self: AttnWeights,
    pub cross_probe: AttnWeights,
    pub vox_self: AttnWeights,
    pub cross_enrich: AttnWeights,
    pub mlp_w0: Matrix,
    pub mlp_b0: Matrix,
    pub mlp_w1: Matrix,
    pub mlp_b1: Matrix,
    pub sigma: f64,
    pub kind: TgpKind,
}

/// What one pruning pass did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneTrace {
    pub level: i32,
    pub voxels_before: usize,
    pub voxels_after: usize,
    pub kept_ratio: f64,
    pub fallback_used: bool,
}

/// Voxel-attention FLOP estimate: queries x keys x channel width.
pub fn attn_flops(queries: usize, keys: usize, width: usize) -> f64 {
    (queries * keys * width) as f64
}

fn mlp_logits_t(
    tape: &mut Tape,
    x: NodeId,
    w0: NodeId,
    b0: NodeId,
    w1: NodeId,
    b1: NodeId,
) -> Result<NodeId> {
    let h = tape.matmul(x, w0)?;
    let h = tape.add_row(h, b0)?;
    let h = tape.relu(h);
    let out = tape.matmul(h, w1)?;
    tape.add_row(out, b1)
}

/// Keep decision: probability >= sigma (the step function keeps the
/// boundary). Falls back to the `k_min` highest-probability voxels when
/// thresholding would keep fewer.
pub fn keep_indices(probs: &[f64], sigma: f64, k_min: usize) -> (Vec<usize>, bool) {
    let kept: Vec<usize> = probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= sigma)
        .map(|(i, _)| i)
        .collect();
    if kept.len() >= k_min {
        return (kept, false);
    }
    // top-k by probability, ties to the lower canonical index
    let take = k_min.min(probs.len());
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order.into_iter().take(take).collect();
    kept.sort_unstable();
    (kept, true)
}

/// Thresholds probabilities and prunes the grid, recording a trace.
pub fn binarize_and_prune(
    grid: &SparseGrid,
    probs: &VoxelMask,
    sigma: f64,
    k_min: usize,
) -> Result<(SparseGrid, PruneTrace)> {
    if probs.host_len() != grid.len() {
        return Err(Error::ShapeError(format!(
            "{} probabilities for {} voxels",
            probs.host_len(),
            grid.len()
        )));
    }
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::InvalidInput(format!("sigma {sigma} outside [0,1]")));
    }
    let (kept, fallback) = keep_indices(probs.values(), sigma, k_min);
    let mut bits = vec![false; grid.len()];
    for &i in &kept {
        bits[i] = true;
    }
    let pruned = prune(grid, &VoxelMask::from_bools(&bits))?;
    let trace = PruneTrace {
        level: grid.level,
        voxels_before: grid.len(),
        voxels_after: pruned.len(),
        kept_ratio: pruned.len() as f64 / grid.len().max(1) as f64,
        fallback_used: fallback,
    };
    Ok((pruned, trace))
}

fn cube_mask(coords: &[Coord3], voxel_size: f64, centers: &[[f64; 3]], l_cube: usize) -> VoxelMask {
    let half = (l_cube as i32 - 1) / 2;
    let cells: Vec<[i32; 3]> = centers
        .iter()
        .map(|c| {
            [
                (c[0] / voxel_size).floor() as i32,
                (c[1] / voxel_size).floor() as i32,
                (c[2] / voxel_size).floor() as i32,
            ]
        })
        .collect();
    VoxelMask::from_bools(
        &coords
            .iter()
            .map(|&v| {
                cells.iter().any(|cell| {
                    (v.x - cell[0]).abs() <= half
                        && (v.y - cell[1]).abs() <= half
                        && (v.z - cell[2]).abs() <= half
                })
            })
            .collect::<Vec<_>>(),
    )
}

/// Scene-level supervision: 1 inside the `L x L x L` lattice cube around
/// any object center, clipped to existing voxels.
pub fn build_scene_supervision(
    objects: &[Box3D],
    l_cube: usize,
    grid: &SparseGrid,
) -> VoxelMask {
    let centers: Vec<[f64; 3]> = objects.iter().map(|o| o.center).collect();
    cube_mask(grid.coords(), grid.voxel_size, &centers, l_cube)
}

/// Target-level supervision: cubes of the target and its referential
/// objects only.
pub fn build_target_supervision(
    target: &Box3D,
    relevant: &[Box3D],
    l_cube: usize,
    grid: &SparseGrid,
) -> VoxelMask {
    let mut centers = vec![target.center];
    centers.extend(relevant.iter().map(|o| o.center));
    cube_mask(grid.coords(), grid.voxel_size, &centers, l_cube)
}

/// Tape-bound weights of one pruning block, named
/// `{prefix}.token_self.* / .cross_probe.* / .vox_self.* / .cross_enrich.*`
/// and `{prefix}.mlp.{w0,b0,w1,b1}`.
pub struct TgpNodes {
    pub token_self: AttnNodes,
    pub cross_probe: AttnNodes,
    pub vox_self: AttnNodes,
    pub cross_enrich: AttnNodes,
    pub mlp_w0: NodeId,
    pub mlp_b0: NodeId,
    pub mlp_w1: NodeId,
    pub mlp_b1: NodeId,
}

impl TgpNodes {
    pub fn from_store(
        tape: &mut Tape,
        store: &ParamStore,
        prefix: &str,
        heads: usize,
    ) -> Result<Self> {
        Ok(Self {
            token_self: AttnNodes::from_store(tape, store, &format!("{prefix}.token_self"), heads)?,
            cross_probe: AttnNodes::from_store(tape, store, &format!("{prefix}.cross_probe"), heads)?,
            vox_self: AttnNodes::from_store(tape, store, &format!("{prefix}.vox_self"), heads)?,
            cross_enrich: AttnNodes::from_store(tape, store, &format!("{prefix}.cross_enrich"), heads)?,
            mlp_w0: tape.param(store, &format!("{prefix}.mlp.w0"))?,
            mlp_b0: tape.param(store, &format!("{prefix}.mlp.b0"))?,
            mlp_w1: tape.param(store, &format!("{prefix}.mlp.w1"))?,
            mlp_b1: tape.param(store, &format!("{prefix}.mlp.b1"))?,
        })
    }

    pub fn from_weights(tape: &mut Tape, p: &TgpLevelParams) -> Self {
        Self {
            token_self: AttnNodes::from_weights(tape, &p.token_self),
            cross_probe: AttnNodes::from_weights(tape, &p.cross_probe),
            vox_self: AttnNodes::from_weights(tape, &p.vox_self),
            cross_enrich: AttnNodes::from_weights(tape, &p.cross_enrich),
            mlp_w0: tape.constant(p.mlp_w0.clone()),
            mlp_b0: tape.constant(p.mlp_b0.clone()),
            mlp_w1: tape.constant(p.mlp_w1.clone()),
            mlp_b1: tape.constant(p.mlp_b1.clone()),
        }
    }
}

/// Output of the tape-level pruning block.
pub struct TgpBlockOut {
    /// Self-attended tokens, input to later levels.
    pub tokens_out: NodeId,
    /// Keep probabilities over the input coordinates (`n x 1`).
    pub probs: NodeId,
    /// Rows kept by pruning, ascending.
    pub kept: Vec<usize>,
    /// Enriched features of the survivors.
    pub survivor_feats: NodeId,
    pub trace: PruneTrace,
    /// Voxel-attention FLOPs spent inside the block.
    pub flops: f64,
}

/// Probability path of the block, on the tape.
///
/// Original (use_fps): cross-attend a farthest-point subsample against the
/// self-attended tokens, predict logits with the MLP, squash, and linearly
/// interpolate probabilities back onto the full coordinate list.
/// Simplified: cross-attend the full grid and predict densely. Returns the
/// probabilities, the enriched features they were computed from (only
/// meaningful in the simplified path), and the FLOPs spent.
fn probs_path_t(
    tape: &mut Tape,
    nodes: &TgpNodes,
    coords: &[Coord3],
    feats: NodeId,
    tokens_out: NodeId,
    voxel_size: f64,
    level: i32,
    use_fps: bool,
    fps_k: usize,
) -> Result<(NodeId, Option<NodeId>, f64)> {
    let n = coords.len();
    let (_, width) = tape.shape(feats);
    let (w_tokens, _) = tape.shape(tokens_out);
    let mut flops = 0.0;
    if !use_fps {
        let enriched = attention_t(tape, feats, tokens_out, &nodes.cross_probe)?;
        flops += attn_flops(n, w_tokens, width);
        let logits = mlp_logits_t(tape, enriched, nodes.mlp_w0, nodes.mlp_b0, nodes.mlp_w1, nodes.mlp_b1)?;
        let probs = tape.sigmoid(logits);
        return Ok((probs, Some(enriched), flops));
    }

    let k = fps_k.min(n);
    let temp = SparseGrid::new(coords.to_vec(), Matrix::zeros(n, 0), level, voxel_size)?;
    let sample = farthest_point_sample(&temp, k)?;
    let sub_coords: Vec<Coord3> = sample.indices.iter().map(|&i| coords[i]).collect();
    let sub_feats = tape.gather_rows(feats, Arc::new(sample.indices.clone()))?;
    let attended = attention_t(tape, sub_feats, tokens_out, &nodes.cross_probe)?;
    flops += attn_flops(k, w_tokens, width);
    let logits = mlp_logits_t(tape, attended, nodes.mlp_w0, nodes.mlp_b0, nodes.mlp_w1, nodes.mlp_b1)?;
    let sub_probs = tape.sigmoid(logits);
    let plan = interpolation_plan(&sub_coords, coords);
    let probs = tape.row_mix(sub_probs, plan.mix.clone())?;
    Ok((probs, None, flops))
}

/// Full pruning block on the tape.
pub fn tgp_block_t(
    tape: &mut Tape,
    nodes: &TgpNodes,
    coords: &[Coord3],
    feats: NodeId,
    tokens: NodeId,
    level: i32,
    voxel_size: f64,
    simplified: bool,
    sigma: f64,
    k_min: usize,
    fps_k: usize,
) -> Result<TgpBlockOut> {
    if coords.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let tokens_out = attention_t(tape, tokens, tokens, &nodes.token_self)?;
    let (w_tokens, _) = tape.shape(tokens);
    let (probs, enriched, mut flops) = probs_path_t(
        tape,
        nodes,
        coords,
        feats,
        tokens_out,
        voxel_size,
        level,
        !simplified,
        fps_k,
    )?;
    let prob_values: Vec<f64> = tape.value(probs).data().to_vec();
    let (kept, fallback) = keep_indices(&prob_values, sigma, k_min);
    let trace = PruneTrace {
        level,
        voxels_before: coords.len(),
        voxels_after: kept.len(),
        kept_ratio: kept.len() as f64 / coords.len() as f64,
        fallback_used: fallback,
    };
    let kept_arc = Arc::new(kept.clone());
    let survivor_feats = if simplified {
        // enriched before pruning; survivors carry the fused rows
        tape.gather_rows(enriched.expect("simplified path enriches"), kept_arc)?
    } else {
        let raw = tape.gather_rows(feats, kept_arc)?;
        let m = kept.len();
        let (_, width) = tape.shape(feats);
        let self_out = attention_t(tape, raw, raw, &nodes.vox_self)?;
        flops += attn_flops(m, m, width);
        let out = attention_t(tape, self_out, tokens_out, &nodes.cross_enrich)?;
        flops += attn_flops(m, w_tokens, width);
        out
    };
    Ok(TgpBlockOut { tokens_out, probs, kept, survivor_feats, trace, flops })
}

/// Plain probability prediction (spec surface).
pub fn predict_prune_probs(
    grid: &SparseGrid,
    tokens: &TokenSet,
    params: &TgpLevelParams,
    use_fps: bool,
    fps_k: usize,
) -> Result<VoxelMask> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut tape = Tape::new();
    let nodes = TgpNodes::from_weights(&mut tape, params);
    let feats = tape.constant(grid.feats().clone());
    let toks = tape.constant(tokens.feats.clone());
    let tokens_out = attention_t(&mut tape, toks, toks, &nodes.token_self)?;
    let (probs, _, _) = probs_path_t(
        &mut tape,
        &nodes,
        grid.coords(),
        feats,
        tokens_out,
        grid.voxel_size,
        grid.level,
        use_fps,
        fps_k,
    )?;
    VoxelMask::new(tape.value(probs).data().to_vec())
}

/// Plain pruning block (spec surface).
pub fn tgp_block(
    grid: &SparseGrid,
    tokens: &TokenSet,
    params: &TgpLevelParams,
    simplified: bool,
    k_min: usize,
    fps_k: usize,
) -> Result<(SparseGrid, TokenSet, VoxelMask, PruneTrace)> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut tape = Tape::new();
    let nodes = TgpNodes::from_weights(&mut tape, params);
    let feats = tape.constant(grid.feats().clone());
    let toks = tape.constant(tokens.feats.clone());
    let out = tgp_block_t(
        &mut tape,
        &nodes,
        grid.coords(),
        feats,
        toks,
        grid.level,
        grid.voxel_size,
        simplified,
        params.sigma,
        k_min,
        fps_k,
    )?;
    let coords: Vec<Coord3> = out.kept.iter().map(|&i| grid.coords()[i]).collect();
    let pruned = SparseGrid::new(
        coords,
        tape.value(out.survivor_feats).clone(),
        grid.level,
        grid.voxel_size,
    )?;
    let tokens_out = TokenSet {
        feats: tape.value(out.tokens_out).clone(),
        token_ids: tokens.token_ids.clone(),
    };
    let probs = VoxelMask::new(tape.value(out.probs).data().to_vec())?;
    Ok((pruned, tokens_out, probs, out.trace))
}
