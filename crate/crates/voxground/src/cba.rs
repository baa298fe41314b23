//! Completion-based addition: fuse upsampled pruned features with backbone
//! features, predicting text-relevant backbone voxels that pruning lost and
//! re-inserting them. Also provides the two simpler fusions it is compared
//! against: full addition and pruning-aware addition.

use std::sync::Arc;

use crate::autodiff::{NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sparse::{coord_align_mask, interpolation_plan, Coord3, SparseGrid, VoxelMask};
use crate::text::{attention_t, AttnNodes, AttnWeights, TokenSet};

/// Learned weights of one completion block.
#[derive(Clone, Debug)]
pub struct CbaLevelParams {
    pub cross: AttnWeights,
    pub mlp_w0: Matrix,
    pub mlp_b0: Matrix,
    pub mlp_w1: Matrix,
    pub mlp_b1: Matrix,
    pub tau: f64,
}

/// Tape-bound completion weights under
/// `{prefix}.cross.*` and `{prefix}.mlp.*`.
pub struct CbaNodes {
    pub cross: AttnNodes,
    pub mlp_w0: NodeId,
    pub mlp_b0: NodeId,
    pub mlp_w1: NodeId,
    pub mlp_b1: NodeId,
}

impl CbaNodes {
    pub fn from_store(
        tape: &mut Tape,
        store: &ParamStore,
        prefix: &str,
        heads: usize,
    ) -> Result<Self> {
        Ok(Self {
            cross: AttnNodes::from_store(tape, store, &format!("{prefix}.cross"), heads)?,
            mlp_w0: tape.param(store, &format!("{prefix}.mlp.w0"))?,
            mlp_b0: tape.param(store, &format!("{prefix}.mlp.b0"))?,
            mlp_w1: tape.param(store, &format!("{prefix}.mlp.w1"))?,
            mlp_b1: tape.param(store, &format!("{prefix}.mlp.b1"))?,
        })
    }

    pub fn from_weights(tape: &mut Tape, p: &CbaLevelParams) -> Self {
        Self {
            cross: AttnNodes::from_weights(tape, &p.cross),
            mlp_w0: tape.constant(p.mlp_w0.clone()),
            mlp_b0: tape.constant(p.mlp_b0.clone()),
            mlp_w1: tape.constant(p.mlp_w1.clone()),
            mlp_b1: tape.constant(p.mlp_b1.clone()),
        }
    }
}

/// Cross-attends backbone features against the tokens and thresholds the
/// MLP probability at tau (boundary kept). Tape form; returns the attended
/// features, the probabilities and the binary keep decisions.
pub fn predict_target_mask_t(
    tape: &mut Tape,
    nodes: &CbaNodes,
    v_feats: NodeId,
    tokens: NodeId,
    tau: f64,
) -> Result<(NodeId, NodeId, Vec<bool>)> {
    let attended = attention_t(tape, v_feats, tokens, &nodes.cross)?;
    let h = tape.matmul(attended, nodes.mlp_w0)?;
    let h = tape.add_row(h, nodes.mlp_b0)?;
    let h = tape.relu(h);
    let logits = tape.matmul(h, nodes.mlp_w1)?;
    let logits = tape.add_row(logits, nodes.mlp_b1)?;
    let probs = tape.sigmoid(logits);
    let bits: Vec<bool> = tape.value(probs).data().iter().map(|&p| p >= tau).collect();
    Ok((attended, probs, bits))
}

/// Plain form of the target-mask prediction (spec surface).
pub fn predict_target_mask(
    v: &SparseGrid,
    tokens: &TokenSet,
    params: &CbaLevelParams,
) -> Result<(SparseGrid, VoxelMask)> {
    if v.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut tape = Tape::new();
    let nodes = CbaNodes::from_weights(&mut tape, params);
    let feats = tape.constant(v.feats().clone());
    let toks = tape.constant(tokens.feats.clone());
    let (attended, _, bits) = predict_target_mask_t(&mut tape, &nodes, feats, toks, params.tau)?;
    Ok((
        v.with_feats(tape.value(attended).clone())?,
        VoxelMask::from_bools(&bits),
    ))
}

/// Voxels wanted by the target mask but absent from the upsampled map.
pub fn missing_mask(m_tar: &VoxelMask, ug: &SparseGrid, v: &SparseGrid) -> Result<VoxelMask> {
    if m_tar.host_len() != v.len() {
        return Err(Error::ShapeError(format!(
            "target mask of {} values on grid of {} voxels",
            m_tar.host_len(),
            v.len()
        )));
    }
    let present = coord_align_mask(ug, v)?;
    m_tar.and_not(&present)
}

/// Completion rows: attended backbone row plus interpolation from the
/// upsampled map, over exactly the missing coordinates.
pub fn completion_features(
    v_attended: &SparseGrid,
    ug: &SparseGrid,
    m_mis: &VoxelMask,
) -> Result<SparseGrid> {
    if m_mis.host_len() != v_attended.len() {
        return Err(Error::ShapeError(format!(
            "missing mask of {} values on grid of {} voxels",
            m_mis.host_len(),
            v_attended.len()
        )));
    }
    let missing = m_mis.kept_indices();
    let coords: Vec<Coord3> = missing.iter().map(|&i| v_attended.coords()[i]).collect();
    let mut feats = v_attended.feats().gather_rows(&missing);
    let plan = interpolation_plan(ug.coords(), &coords);
    for &(q, i, w) in &plan.mix.entries {
        let row = ug.feats().row(i);
        for (dst, &x) in feats.row_mut(q).iter_mut().zip(row) {
            *dst += w * x;
        }
    }
    SparseGrid::new(coords, feats, v_attended.level, v_attended.voxel_size)
}

fn check_same_level(a: &SparseGrid, b: &SparseGrid) -> Result<()> {
    if a.level != b.level {
        return Err(Error::LevelError { expected: a.level, got: b.level });
    }
    Ok(())
}

/// Union-coordinate fusion: each side's absent rows are interpolated from
/// its own grid before the elementwise sum.
pub fn full_addition(ug: &SparseGrid, v: &SparseGrid) -> Result<SparseGrid> {
    check_same_level(ug, v)?;
    let mut coords: Vec<Coord3> = ug.coords().iter().chain(v.coords()).copied().collect();
    coords.sort_unstable();
    coords.dedup();
    let mut tape = Tape::new();
    let ug_feats = tape.constant(ug.feats().clone());
    let v_feats = tape.constant(v.feats().clone());
    let out = full_addition_t(&mut tape, ug.coords(), ug_feats, v.coords(), v_feats, &coords)?;
    SparseGrid::new(coords, tape.value(out).clone(), ug.level, ug.voxel_size)
}

/// Tape form of [`full_addition`] over a precomputed coordinate union.
pub fn full_addition_t(
    tape: &mut Tape,
    ug_coords: &[Coord3],
    ug_feats: NodeId,
    v_coords: &[Coord3],
    v_feats: NodeId,
    union: &[Coord3],
) -> Result<NodeId> {
    let ug_plan = interpolation_plan(ug_coords, union);
    let v_plan = interpolation_plan(v_coords, union);
    let ug_side = tape.row_mix(ug_feats, ug_plan.mix.clone())?;
    let v_side = tape.row_mix(v_feats, v_plan.mix.clone())?;
    tape.add(ug_side, v_side)
}

/// Fusion constrained to the upsampled map's coordinates: backbone rows
/// where present, interpolation from the upsampled map where not.
pub fn pruning_aware_addition(ug: &SparseGrid, v: &SparseGrid) -> Result<SparseGrid> {
    check_same_level(ug, v)?;
    let mut tape = Tape::new();
    let ug_feats = tape.constant(ug.feats().clone());
    let v_feats = tape.constant(v.feats().clone());
    let out = pruning_aware_addition_t(&mut tape, ug.coords(), ug_feats, v.coords(), v_feats)?;
    ug.with_feats(tape.value(out).clone())
}

/// Tape form of [`pruning_aware_addition`]; output rows follow `ug_coords`.
pub fn pruning_aware_addition_t(
    tape: &mut Tape,
    ug_coords: &[Coord3],
    ug_feats: NodeId,
    v_coords: &[Coord3],
    v_feats: NodeId,
) -> Result<NodeId> {
    let n = ug_coords.len();
    let mut present_src = Vec::new();
    let mut present_dst = Vec::new();
    let mut absent = Vec::new();
    for (i, &c) in ug_coords.iter().enumerate() {
        match v_coords.binary_search(&c) {
            Ok(j) => {
                present_src.push(j);
                present_dst.push(i);
            }
            Err(_) => absent.push(i),
        }
    }
    let mut out = ug_feats;
    if !present_src.is_empty() {
        let rows = tape.gather_rows(v_feats, Arc::new(present_src))?;
        let placed = tape.scatter_add_rows(rows, Arc::new(present_dst), n)?;
        out = tape.add(out, placed)?;
    }
    if !absent.is_empty() {
        let queries: Vec<Coord3> = absent.iter().map(|&i| ug_coords[i]).collect();
        let plan = interpolation_plan(ug_coords, &queries);
        let filled = tape.row_mix(ug_feats, plan.mix.clone())?;
        let placed = tape.scatter_add_rows(filled, Arc::new(absent), n)?;
        out = tape.add(out, placed)?;
    }
    Ok(out)
}

/// Combination step: pruning-aware addition on the upsampled coordinates,
/// completion rows on the missing coordinates, coordinate-set union.
pub fn cba_combine(
    ug: &SparseGrid,
    v: &SparseGrid,
    v_attended: &SparseGrid,
    m_mis: &VoxelMask,
) -> Result<SparseGrid> {
    check_same_level(ug, v)?;
    let base = pruning_aware_addition(ug, v)?;
    let completion = completion_features(v_attended, ug, m_mis)?;
    merge_disjoint(&base, &completion)
}

/// Merges two grids with disjoint coordinate sets into one canonical grid.
pub fn merge_disjoint(a: &SparseGrid, b: &SparseGrid) -> Result<SparseGrid> {
    check_same_level(a, b)?;
    if a.channels() != b.channels() && !a.is_empty() && !b.is_empty() {
        return Err(Error::ShapeError(format!(
            "channel widths {} vs {}",
            a.channels(),
            b.channels()
        )));
    }
    let mut tagged: Vec<(Coord3, bool, usize)> = a
        .coords()
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, false, i))
        .chain(b.coords().iter().enumerate().map(|(i, &c)| (c, true, i)))
        .collect();
    tagged.sort_by_key(|&(c, _, _)| c);
    if tagged.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidInput("merge requires disjoint coordinates".into()));
    }
    let channels = if a.is_empty() { b.channels() } else { a.channels() };
    let mut coords = Vec::with_capacity(tagged.len());
    let mut feats = Matrix::zeros(tagged.len(), channels);
    for (row, &(c, from_b, i)) in tagged.iter().enumerate() {
        coords.push(c);
        let src = if from_b { b.feats().row(i) } else { a.feats().row(i) };
        feats.row_mut(row).copy_from_slice(src);
    }
    SparseGrid::new(coords, feats, a.level, a.voxel_size)
}
