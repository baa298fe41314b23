//! Composition of the full pipeline: backbone, per-level fusion
//! (concat / attention / pruning variants), generative upsampling,
//! addition (full / pruning-aware / completion-based) and the head.

use std::sync::Arc;
use std::time::Instant;

use crate::autodiff::{NodeId, ParamStore, Tape};
use crate::cba::{full_addition_t, predict_target_mask_t, pruning_aware_addition_t, CbaNodes};
use crate::error::{Error, Result};
use crate::head::{
    grounding_head_t, head_params_t, prediction_from_values, select_box, Box3D, Prediction,
};
use crate::matrix::Matrix;
use crate::sparse::{
    apply_kernel_map_t, downsample_plan, interpolation_plan,
    submanifold_kernel_map, upsample_plan, voxelize, Coord3, SparseGrid,
};
use crate::text::{attention_t, encode_text_t, AttnNodes, Vocabulary};
use crate::tgp::{attn_flops, tgp_block_t, PruneTrace, TgpNodes};

use super::config::{AdditionMode, FusionMode, ModelConfig};

/// Differentiable sparse grid: coordinates plus a feature node on a tape.
#[derive(Clone, Debug)]
pub struct DGrid {
    pub coords: Vec<Coord3>,
    pub level: i32,
    pub voxel_size: f64,
    pub feats: NodeId,
}

impl DGrid {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn to_grid(&self, tape: &Tape) -> Result<SparseGrid> {
        SparseGrid::new(
            self.coords.clone(),
            tape.value(self.feats).clone(),
            self.level,
            self.voxel_size,
        )
    }
}

/// One timed pipeline stage.
#[derive(Clone, Debug)]
pub struct StageStat {
    pub name: String,
    pub ms: f64,
    /// Voxel count of the stage's output map.
    pub voxels: usize,
    /// Voxel-attention FLOP estimate spent inside the stage.
    pub flops: f64,
}

/// Counts, times and pruning records of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardTrace {
    /// Backbone voxel counts at levels 1..3 (index level-1).
    pub v_voxels: [usize; 3],
    /// Fused map counts at levels 1..3; level 3 is the backbone top.
    pub u_voxels: [usize; 3],
    /// Upsampled map counts where defined (levels 1 and 2).
    pub ug_voxels: [Option<usize>; 3],
    /// Post-pruning survivor counts where pruning ran (levels 2 and 3).
    pub up_voxels: [Option<usize>; 3],
    pub stages: Vec<StageStat>,
    pub prune_traces: Vec<PruneTrace>,
    /// (level, completed voxel count) per completion-based addition.
    pub completions: Vec<(usize, usize)>,
    /// Voxel-attention FLOP estimate summed over the pass.
    pub vox_attn_flops: f64,
}

impl ForwardTrace {
    /// Total wall time across stages.
    pub fn total_ms(&self) -> f64 {
        self.stages.iter().map(|s| s.ms).sum()
    }

    fn push_stage(&mut self, name: impl Into<String>, t: Instant, voxels: usize, flops_before: f64) {
        self.stages.push(StageStat {
            name: name.into(),
            ms: ms_since(t),
            voxels,
            flops: self.vox_attn_flops - flops_before,
        });
    }
}

/// Pruning-loss inputs: probabilities over the pre-pruning coordinates.
pub struct TgpAux {
    pub level: i32,
    pub scene_kind: bool,
    pub coords: Vec<Coord3>,
    pub probs: NodeId,
}

/// Completion-loss inputs: probabilities over the backbone coordinates.
pub struct CbaAux {
    pub level: i32,
    pub coords: Vec<Coord3>,
    pub probs: NodeId,
}

pub struct ForwardOut {
    pub u1: DGrid,
    pub obj_probs: NodeId,
    pub obj_logits: NodeId,
    pub box_params: NodeId,
    pub prediction: Prediction,
    pub tgp_aux: Vec<TgpAux>,
    pub cba_aux: Vec<CbaAux>,
    /// Stage-labelled coordinate sets: V1..V3, U3, UG2, U2, UG1, U1.
    pub stage_coords: Vec<(String, Vec<Coord3>)>,
    pub trace: ForwardTrace,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn residual_block_t(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    g: &DGrid,
) -> Result<DGrid> {
    let (coords, km_down) = downsample_plan(&g.coords);
    let w_down = tape.param(store, &format!("{prefix}.down.w"))?;
    let y = apply_kernel_map_t(tape, g.feats, w_down, &km_down, coords.len())?;
    let km_sub = submanifold_kernel_map(&coords);
    let wa = tape.param(store, &format!("{prefix}.conv_a.w"))?;
    let a = apply_kernel_map_t(tape, y, wa, &km_sub, coords.len())?;
    let a = tape.relu(a);
    let wb = tape.param(store, &format!("{prefix}.conv_b.w"))?;
    let b = apply_kernel_map_t(tape, a, wb, &km_sub, coords.len())?;
    let feats = tape.add(y, b)?;
    Ok(DGrid {
        coords,
        level: g.level + 1,
        voxel_size: g.voxel_size * 2.0,
        feats,
    })
}

/// Voxelizes at the base resolution, lifts through the two-conv stem to
/// level 0, then runs the three residual blocks to levels 1..3.
pub fn backbone_t(
    tape: &mut Tape,
    store: &ParamStore,
    config: &ModelConfig,
    points: &Matrix,
) -> Result<[DGrid; 3]> {
    let grid0 = voxelize(points, config.base_voxel_size)?;
    let feats0 = tape.constant(grid0.feats().clone());
    let mut g = DGrid {
        coords: grid0.coords().to_vec(),
        level: grid0.level,
        voxel_size: grid0.voxel_size,
        feats: feats0,
    };
    for name in ["stem.conv0.w", "stem.conv1.w"] {
        let (coords, km) = downsample_plan(&g.coords);
        let w = tape.param(store, name)?;
        let feats = apply_kernel_map_t(tape, g.feats, w, &km, coords.len())?;
        g = DGrid {
            coords,
            level: g.level + 1,
            voxel_size: g.voxel_size * 2.0,
            feats,
        };
    }
    let v1 = residual_block_t(tape, store, "backbone.rb1", &g)?;
    let v2 = residual_block_t(tape, store, "backbone.rb2", &v1)?;
    let v3 = residual_block_t(tape, store, "backbone.rb3", &v2)?;
    Ok([v1, v2, v3])
}

/// Plain backbone (spec surface): the three levels of voxel features.
pub fn backbone(
    points: &Matrix,
    store: &ParamStore,
    config: &ModelConfig,
) -> Result<[SparseGrid; 3]> {
    let mut tape = Tape::new();
    let [v1, v2, v3] = backbone_t(&mut tape, store, config, points)?;
    Ok([v1.to_grid(&tape)?, v2.to_grid(&tape)?, v3.to_grid(&tape)?])
}

struct FuseOut {
    fused: DGrid,
    tokens: NodeId,
    aux: Option<TgpAux>,
}

fn fuse_level(
    tape: &mut Tape,
    store: &ParamStore,
    config: &ModelConfig,
    u: &DGrid,
    tokens: NodeId,
    level: usize,
    trace: &mut ForwardTrace,
) -> Result<FuseOut> {
    match config.fusion_mode {
        FusionMode::Concat => {
            let fused = crate::text::concat_fuse_t(tape, u.feats, tokens)?;
            Ok(FuseOut {
                fused: DGrid { feats: fused, ..u.clone() },
                tokens,
                aux: None,
            })
        }
        FusionMode::Attention => {
            let prefix = format!("tgp.level{level}");
            let token_self =
                AttnNodes::from_store(tape, store, &format!("{prefix}.token_self"), config.heads)?;
            let vox_self =
                AttnNodes::from_store(tape, store, &format!("{prefix}.vox_self"), config.heads)?;
            let cross =
                AttnNodes::from_store(tape, store, &format!("{prefix}.cross_enrich"), config.heads)?;
            let toks = attention_t(tape, tokens, tokens, &token_self)?;
            let (n, c) = (u.len(), config.channels[level]);
            let (w, _) = tape.shape(toks);
            let sa = attention_t(tape, u.feats, u.feats, &vox_self)?;
            trace.vox_attn_flops += attn_flops(n, n, c);
            let ca = attention_t(tape, sa, toks, &cross)?;
            trace.vox_attn_flops += attn_flops(n, w, c);
            Ok(FuseOut {
                fused: DGrid { feats: ca, ..u.clone() },
                tokens: toks,
                aux: None,
            })
        }
        FusionMode::Tgp | FusionMode::SimplifiedTgp => {
            let prefix = format!("tgp.level{level}");
            let nodes = TgpNodes::from_store(tape, store, &prefix, config.heads)?;
            let (sigma, scene_kind) = if level == 3 {
                (config.sigma_sce, true)
            } else {
                (config.sigma_tar, false)
            };
            let out = tgp_block_t(
                tape,
                &nodes,
                &u.coords,
                u.feats,
                tokens,
                u.level,
                u.voxel_size,
                config.fusion_mode == FusionMode::SimplifiedTgp,
                sigma,
                config.k_min,
                config.fps_k,
            )?;
            trace.vox_attn_flops += out.flops;
            trace.prune_traces.push(out.trace);
            trace.up_voxels[level - 1] = Some(out.kept.len());
            let coords: Vec<Coord3> = out.kept.iter().map(|&i| u.coords[i]).collect();
            Ok(FuseOut {
                fused: DGrid {
                    coords,
                    level: u.level,
                    voxel_size: u.voxel_size,
                    feats: out.survivor_feats,
                },
                tokens: out.tokens_out,
                aux: Some(TgpAux {
                    level: u.level,
                    scene_kind,
                    coords: u.coords.clone(),
                    probs: out.probs,
                }),
            })
        }
    }
}

fn addition_level(
    tape: &mut Tape,
    store: &ParamStore,
    config: &ModelConfig,
    ug: DGrid,
    v: &DGrid,
    tokens: NodeId,
    trace: &mut ForwardTrace,
) -> Result<(DGrid, Option<CbaAux>)> {
    let level = ug.level as usize;
    let use_cba =
        config.addition_mode == AdditionMode::Cba && config.cba_levels.contains(&level);
    match config.addition_mode {
        AdditionMode::Full => {
            let mut union: Vec<Coord3> =
                ug.coords.iter().chain(v.coords.iter()).copied().collect();
            union.sort_unstable();
            union.dedup();
            let feats = full_addition_t(tape, &ug.coords, ug.feats, &v.coords, v.feats, &union)?;
            Ok((
                DGrid { coords: union, level: ug.level, voxel_size: ug.voxel_size, feats },
                None,
            ))
        }
        AdditionMode::PruningAware => {
            let feats =
                pruning_aware_addition_t(tape, &ug.coords, ug.feats, &v.coords, v.feats)?;
            Ok((DGrid { feats, ..ug }, None))
        }
        AdditionMode::Cba if !use_cba => {
            let feats =
                pruning_aware_addition_t(tape, &ug.coords, ug.feats, &v.coords, v.feats)?;
            Ok((DGrid { feats, ..ug }, None))
        }
        AdditionMode::Cba => {
            let nodes = CbaNodes::from_store(tape, store, &format!("cba.level{level}"), config.heads)?;
            let (v_att, probs, bits) =
                predict_target_mask_t(tape, &nodes, v.feats, tokens, config.tau)?;
            let (w, _) = tape.shape(tokens);
            trace.vox_attn_flops += attn_flops(v.len(), w, config.channels[level]);

            // missing = wanted and absent from the upsampled map
            let missing: Vec<usize> = (0..v.len())
                .filter(|&i| bits[i] && ug.coords.binary_search(&v.coords[i]).is_err())
                .collect();
            let missing_coords: Vec<Coord3> = missing.iter().map(|&i| v.coords[i]).collect();
            trace.completions.push((level, missing.len()));

            let base = pruning_aware_addition_t(tape, &ug.coords, ug.feats, &v.coords, v.feats)?;

            // union of upsampled coords and the (disjoint) missing coords
            let mut union: Vec<Coord3> =
                ug.coords.iter().chain(missing_coords.iter()).copied().collect();
            union.sort_unstable();
            let pos = |c: &Coord3| union.binary_search(c).expect("member of union");
            let base_dst: Vec<usize> = ug.coords.iter().map(&pos).collect();
            let mut out =
                tape.scatter_add_rows(base, Arc::new(base_dst), union.len())?;
            if !missing.is_empty() {
                let picked = tape.gather_rows(v_att, Arc::new(missing.clone()))?;
                let plan = interpolation_plan(&ug.coords, &missing_coords);
                let interpolated = tape.row_mix(ug.feats, plan.mix.clone())?;
                let completion = tape.add(picked, interpolated)?;
                let dst: Vec<usize> = missing_coords.iter().map(&pos).collect();
                let placed = tape.scatter_add_rows(completion, Arc::new(dst), union.len())?;
                out = tape.add(out, placed)?;
            }
            let aux = CbaAux { level: ug.level, coords: v.coords.clone(), probs };
            Ok((
                DGrid { coords: union, level: ug.level, voxel_size: ug.voxel_size, feats: out },
                Some(aux),
            ))
        }
    }
}

/// One full forward pass in the configured mode.
pub fn forward(
    tape: &mut Tape,
    store: &ParamStore,
    config: &ModelConfig,
    vocab: &Vocabulary,
    points: &Matrix,
    words: &[String],
) -> Result<ForwardOut> {
    config.validate()?;
    let mut trace = ForwardTrace::default();
    let mut stage_coords = Vec::new();

    let t = Instant::now();
    let [v1, v2, v3] = backbone_t(tape, store, config, points)?;
    trace.v_voxels = [v1.len(), v2.len(), v3.len()];
    trace.push_stage("backbone", t, v1.len(), 0.0);
    stage_coords.push(("V1".to_string(), v1.coords.clone()));
    stage_coords.push(("V2".to_string(), v2.coords.clone()));
    stage_coords.push(("V3".to_string(), v3.coords.clone()));

    let t = Instant::now();
    let (mut tokens, _ids) = encode_text_t(tape, store, words, vocab, config.heads)?;
    let w_count = words.len();
    trace.push_stage("encode_text", t, w_count, trace.vox_attn_flops);

    let mut u = v3.clone();
    trace.u_voxels[2] = u.len();
    stage_coords.push(("U3".to_string(), u.coords.clone()));

    let mut tgp_aux = Vec::new();
    let mut cba_aux = Vec::new();
    for level in [3usize, 2] {
        let t = Instant::now();
        let flops0 = trace.vox_attn_flops;
        let fuse = fuse_level(tape, store, config, &u, tokens, level, &mut trace)?;
        tokens = fuse.tokens;
        if let Some(aux) = fuse.aux {
            tgp_aux.push(aux);
        }
        let fused_len = fuse.fused.len();
        trace.push_stage(format!("fuse_l{level}"), t, fused_len, flops0);

        let t = Instant::now();
        let flops0 = trace.vox_attn_flops;
        let (child_coords, km) = upsample_plan(&fuse.fused.coords);
        let w = tape.param(store, &format!("upsample.l{level}to{}.w", level - 1))?;
        let feats = apply_kernel_map_t(tape, fuse.fused.feats, w, &km, child_coords.len())?;
        let ug = DGrid {
            coords: child_coords,
            level: (level - 1) as i32,
            voxel_size: fuse.fused.voxel_size * 0.5,
            feats,
        };
        trace.ug_voxels[level - 2] = Some(ug.len());
        stage_coords.push((format!("UG{}", level - 1), ug.coords.clone()));
        let ug_len = ug.len();
        trace.push_stage(format!("upsample_l{}", level - 1), t, ug_len, flops0);

        let t = Instant::now();
        let flops0 = trace.vox_attn_flops;
        let v = if level - 1 == 2 { &v2 } else { &v1 };
        let (next, aux) = addition_level(tape, store, config, ug, v, tokens, &mut trace)?;
        if let Some(aux) = aux {
            cba_aux.push(aux);
        }
        u = next;
        trace.u_voxels[level - 2] = u.len();
        stage_coords.push((format!("U{}", level - 1), u.coords.clone()));
        let u_len = u.len();
        trace.push_stage(format!("add_l{}", level - 1), t, u_len, flops0);
    }

    let t = Instant::now();
    let flops0 = trace.vox_attn_flops;
    let (conv, w0, b0, w1, b1) = head_params_t(tape, store)?;
    let (obj_probs, obj_logits, box_params) =
        grounding_head_t(tape, u.feats, &u.coords, tokens, conv, w0, b0, w1, b1)?;
    let u_len = u.len();
    trace.push_stage("head", t, u_len, flops0);

    let u1_grid = u.to_grid(tape)?;
    let prediction =
        prediction_from_values(&u1_grid, tape.value(obj_probs), tape.value(box_params));

    Ok(ForwardOut {
        u1: u,
        obj_probs,
        obj_logits,
        box_params,
        prediction,
        tgp_aux,
        cba_aux,
        stage_coords,
        trace,
    })
}

/// Baseline forward (concat fusion only).
pub fn forward_baseline(
    tape: &mut Tape,
    store: &ParamStore,
    config: &ModelConfig,
    vocab: &Vocabulary,
    points: &Matrix,
    words: &[String],
) -> Result<ForwardOut> {
    if config.fusion_mode != FusionMode::Concat {
        return Err(Error::InvalidConfig(
            "forward_baseline requires fusion_mode=concat".into(),
        ));
    }
    forward(tape, store, config, vocab, points, words)
}

/// Pruning-pipeline forward (original or simplified blocks).
pub fn forward_tsp3d(
    tape: &mut Tape,
    store: &ParamStore,
    config: &ModelConfig,
    vocab: &Vocabulary,
    points: &Matrix,
    words: &[String],
) -> Result<ForwardOut> {
    if !config.fusion_mode.is_pruning() {
        return Err(Error::InvalidConfig(
            "forward_tsp3d requires a pruning fusion mode".into(),
        ));
    }
    forward(tape, store, config, vocab, points, words)
}

/// Inference: forward plus argmax box selection on a frozen store.
pub fn infer(
    points: &Matrix,
    words: &[String],
    store: &ParamStore,
    config: &ModelConfig,
    vocab: &Vocabulary,
) -> Result<(Box3D, ForwardTrace)> {
    let mut tape = Tape::new();
    let out = forward(&mut tape, store, config, vocab, points, words)?;
    let selected = select_box(&out.prediction)?;
    Ok((selected, out.trace))
}
