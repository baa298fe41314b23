//! Anchor-free grounding head, box geometry and the training losses.

use std::sync::Arc;

use crate::autodiff::{NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sparse::{apply_kernel_map_t, submanifold_kernel_map, Coord3, SparseGrid};
use crate::text::{concat_fuse_t, TokenSet};

/// Axis-aligned 3D box in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3D {
    pub center: [f64; 3],
    pub size: [f64; 3],
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3]) -> Result<Self> {
        if size.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidInput(format!("box sizes must be positive: {size:?}")));
        }
        Ok(Self { center, size })
    }

    pub fn min_corner(&self) -> [f64; 3] {
        [
            self.center[0] - self.size[0] * 0.5,
            self.center[1] - self.size[1] * 0.5,
            self.center[2] - self.size[2] * 0.5,
        ]
    }

    pub fn max_corner(&self) -> [f64; 3] {
        [
            self.center[0] + self.size[0] * 0.5,
            self.center[1] + self.size[1] * 0.5,
            self.center[2] + self.size[2] * 0.5,
        ]
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let lo = self.min_corner();
        let hi = self.max_corner();
        (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
    }
}

/// Axis-aligned intersection-over-union.
pub fn iou3d(a: &Box3D, b: &Box3D) -> f64 {
    let (alo, ahi) = (a.min_corner(), a.max_corner());
    let (blo, bhi) = (b.min_corner(), b.max_corner());
    let mut inter = 1.0;
    for ax in 0..3 {
        inter *= (ahi[ax].min(bhi[ax]) - alo[ax].max(blo[ax])).max(0.0);
    }
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Distance-IoU loss: `1 - IoU + rho^2 / c^2` where `rho` is the center
/// distance and `c` the diagonal of the smallest enclosing box.
pub fn diou_loss(pred: &Box3D, gt: &Box3D) -> f64 {
    let iou = iou3d(pred, gt);
    let rho2: f64 = (0..3).map(|a| (pred.center[a] - gt.center[a]).powi(2)).sum();
    let (plo, phi) = (pred.min_corner(), pred.max_corner());
    let (glo, ghi) = (gt.min_corner(), gt.max_corner());
    let c2: f64 = (0..3).map(|a| (phi[a].max(ghi[a]) - plo[a].min(glo[a])).powi(2)).sum();
    if c2 <= 0.0 {
        return 1.0 - iou;
    }
    1.0 - iou + rho2 / c2
}

/// Per-voxel head output over a coordinate list.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub coords: Vec<Coord3>,
    pub level: i32,
    pub voxel_size: f64,
    pub objectness: Vec<f64>,
    pub deltas: Vec<[f64; 3]>,
    pub log_sizes: Vec<[f64; 3]>,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Decodes the box anchored at row `i`.
    pub fn decode(&self, i: usize) -> Result<Box3D> {
        let c = self.coords[i];
        let vs = self.voxel_size;
        let center = [
            (f64::from(c.x) + 0.5) * vs + self.deltas[i][0] * vs,
            (f64::from(c.y) + 0.5) * vs + self.deltas[i][1] * vs,
            (f64::from(c.z) + 0.5) * vs + self.deltas[i][2] * vs,
        ];
        let size = [
            self.log_sizes[i][0].exp() * vs,
            self.log_sizes[i][1].exp() * vs,
            self.log_sizes[i][2].exp() * vs,
        ];
        Box3D::new(center, size)
    }
}

/// Picks the box with the highest objectness; exact ties go to the lowest
/// canonical coordinate (the earliest row).
pub fn select_box(pred: &Prediction) -> Result<Box3D> {
    if pred.is_empty() {
        return Err(Error::EmptyPrediction);
    }
    let mut best = 0;
    for i in 1..pred.len() {
        if pred.objectness[i] > pred.objectness[best] {
            best = i;
        }
    }
    pred.decode(best)
}

/// Positive-voxel assignment: inside the `l_pos^3` lattice cube around the
/// voxel containing the target center, and the voxel center lies inside
/// the target box.
pub fn assign_targets(
    coords: &[Coord3],
    voxel_size: f64,
    target: &Box3D,
    l_pos: usize,
) -> Vec<bool> {
    debug_assert!(l_pos % 2 == 1, "cube side must be odd");
    let half = (l_pos as i32 - 1) / 2;
    let cv = [
        (target.center[0] / voxel_size).floor() as i32,
        (target.center[1] / voxel_size).floor() as i32,
        (target.center[2] / voxel_size).floor() as i32,
    ];
    coords
        .iter()
        .map(|&c| {
            let in_cube = (c.x - cv[0]).abs() <= half
                && (c.y - cv[1]).abs() <= half
                && (c.z - cv[2]).abs() <= half;
            let center = [
                (f64::from(c.x) + 0.5) * voxel_size,
                (f64::from(c.y) + 0.5) * voxel_size,
                (f64::from(c.z) + 0.5) * voxel_size,
            ];
            in_cube && target.contains(center)
        })
        .collect()
}

/// Focal loss over probabilities: mean of `-alpha_t (1-p_t)^gamma ln(p_t)`.
pub fn focal_loss(probs: &[f64], labels: &[bool], alpha: f64, gamma: f64) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::ShapeError(format!(
            "{} probs vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::NumericError(format!(
                "focal loss probability {p} outside (0,1)"
            )));
        }
        let (p_t, a_t) = if y { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
        total += -a_t * (1.0 - p_t).powf(gamma) * p_t.ln();
    }
    Ok(total / probs.len() as f64)
}

/// Tape focal loss on a probability column (`n x 1`).
pub fn focal_loss_t(
    tape: &mut Tape,
    probs: NodeId,
    labels: &[bool],
    alpha: f64,
    gamma: f64,
) -> Result<NodeId> {
    let (n, c) = tape.shape(probs);
    if c != 1 || n != labels.len() {
        return Err(Error::ShapeError(format!(
            "focal loss on {n}x{c} probs vs {} labels",
            labels.len()
        )));
    }
    let y: Vec<f64> = labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    // p_t = y*p + (1-y)*(1-p) = (2y-1)*p + (1-y)
    let slope = Matrix::from_vec(n, 1, y.iter().map(|v| 2.0 * v - 1.0).collect())?;
    let shift = Matrix::from_vec(n, 1, y.iter().map(|v| 1.0 - v).collect())?;
    let alpha_t = Matrix::from_vec(
        n,
        1,
        y.iter().map(|v| alpha * v + (1.0 - alpha) * (1.0 - v)).collect(),
    )?;
    let slope = tape.constant(slope);
    let shift = tape.constant(shift);
    let alpha_t = tape.constant(alpha_t);
    let scaled = tape.mul(probs, slope)?;
    let p_t = tape.add(scaled, shift)?;
    let neg_pt = tape.neg(p_t);
    let one_minus = tape.add_scalar(neg_pt, 1.0);
    let focus = tape.pow_scalar(one_minus, gamma);
    let log_pt = tape.ln(p_t);
    let weighted = tape.mul(focus, log_pt)?;
    let weighted = tape.mul(weighted, alpha_t)?;
    let mean = tape.mean_all(weighted);
    Ok(tape.neg(mean))
}

/// Tape DIoU loss. `box_params` is `p x 6` (delta xyz, log-size xyz) for
/// the positive voxels, `centers` their physical voxel centers. Returns
/// the mean DIoU against `gt`.
pub fn diou_loss_t(
    tape: &mut Tape,
    box_params: NodeId,
    centers: &[[f64; 3]],
    voxel_size: f64,
    gt: &Box3D,
) -> Result<NodeId> {
    let (p, c) = tape.shape(box_params);
    if c != 6 || p != centers.len() || p == 0 {
        return Err(Error::ShapeError(format!(
            "diou on {p}x{c} params vs {} centers",
            centers.len()
        )));
    }
    let col = |tape: &mut Tape, vals: Vec<f64>| -> Result<NodeId> {
        Ok(tape.constant(Matrix::from_vec(p, 1, vals)?))
    };
    let glo = gt.min_corner();
    let ghi = gt.max_corner();

    let mut inter: Option<NodeId> = None;
    let mut vol_pred: Option<NodeId> = None;
    let mut rho2: Option<NodeId> = None;
    let mut c2: Option<NodeId> = None;
    for a in 0..3 {
        let delta = tape.slice_cols(box_params, a, 1)?;
        let logsz = tape.slice_cols(box_params, 3 + a, 1)?;
        let anchor = col(tape, centers.iter().map(|v| v[a]).collect())?;
        let shifted = tape.scale(delta, voxel_size);
        let center = tape.add(anchor, shifted)?;
        let sz = tape.exp(logsz);
        let sz = tape.scale(sz, voxel_size);
        let half = tape.scale(sz, 0.5);
        let pmin = tape.sub(center, half)?;
        let pmax = tape.add(center, half)?;

        let gmin = col(tape, vec![glo[a]; p])?;
        let gmax = col(tape, vec![ghi[a]; p])?;
        let lo = tape.max(pmin, gmin)?;
        let hi = tape.min(pmax, gmax)?;
        let span = tape.sub(hi, lo)?;
        let ia = tape.relu(span);
        inter = Some(match inter {
            None => ia,
            Some(acc) => tape.mul(acc, ia)?,
        });
        vol_pred = Some(match vol_pred {
            None => sz,
            Some(acc) => tape.mul(acc, sz)?,
        });

        let gc = col(tape, vec![gt.center[a]; p])?;
        let dc = tape.sub(center, gc)?;
        let dc2 = tape.mul(dc, dc)?;
        rho2 = Some(match rho2 {
            None => dc2,
            Some(acc) => tape.add(acc, dc2)?,
        });

        let elo = tape.min(pmin, gmin)?;
        let ehi = tape.max(pmax, gmax)?;
        let espan = tape.sub(ehi, elo)?;
        let e2 = tape.mul(espan, espan)?;
        c2 = Some(match c2 {
            None => e2,
            Some(acc) => tape.add(acc, e2)?,
        });
    }
    let inter = inter.expect("three axes");
    let vol_pred = vol_pred.expect("three axes");
    let rho2 = rho2.expect("three axes");
    let c2 = c2.expect("three axes");

    let vol_gt = col(tape, vec![gt.volume(); p])?;
    let summed = tape.add(vol_pred, vol_gt)?;
    let union = tape.sub(summed, inter)?;
    let iou = tape.div(inter, union)?;
    let neg_iou = tape.neg(iou);
    let one_minus_iou = tape.add_scalar(neg_iou, 1.0);
    let penalty = tape.div(rho2, c2)?;
    let per_voxel = tape.add(one_minus_iou, penalty)?;
    Ok(tape.mean_all(per_voxel))
}

/// Learned weights of the grounding head.
#[derive(Clone, Debug)]
pub struct HeadWeights {
    /// Stride-1 conv over concat-fused features, `27*(C+d) x Ch`.
    pub conv: Matrix,
    pub w0: Matrix,
    pub b0: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
}

/// Tape head: concat-fused features -> stride-1 conv -> per-voxel MLP ->
/// (objectness probabilities, objectness logits, box parameters).
pub fn grounding_head_t(
    tape: &mut Tape,
    feats: NodeId,
    coords: &[Coord3],
    tokens: NodeId,
    conv: NodeId,
    w0: NodeId,
    b0: NodeId,
    w1: NodeId,
    b1: NodeId,
) -> Result<(NodeId, NodeId, NodeId)> {
    if coords.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let fused = concat_fuse_t(tape, feats, tokens)?;
    let km = submanifold_kernel_map(coords);
    let conv_out = apply_kernel_map_t(tape, fused, conv, &km, coords.len())?;
    let h = tape.relu(conv_out);
    let h = tape.matmul(h, w0)?;
    let h = tape.add_row(h, b0)?;
    let h = tape.relu(h);
    let out = tape.matmul(h, w1)?;
    let out = tape.add_row(out, b1)?;
    let logits = tape.slice_cols(out, 0, 1)?;
    let boxes = tape.slice_cols(out, 1, 6)?;
    let probs = tape.sigmoid(logits);
    Ok((probs, logits, boxes))
}

/// Binds head weights from the store under the `head.` prefix.
pub fn head_params_t(
    tape: &mut Tape,
    store: &ParamStore,
) -> Result<(NodeId, NodeId, NodeId, NodeId, NodeId)> {
    Ok((
        tape.param(store, "head.conv.w")?,
        tape.param(store, "head.mlp.w0")?,
        tape.param(store, "head.mlp.b0")?,
        tape.param(store, "head.mlp.w1")?,
        tape.param(store, "head.mlp.b1")?,
    ))
}

/// Plain head forward with explicit weights.
pub fn grounding_head(
    u1: &SparseGrid,
    tokens: &TokenSet,
    weights: &HeadWeights,
) -> Result<Prediction> {
    if u1.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut tape = Tape::new();
    let feats = tape.constant(u1.feats().clone());
    let toks = tape.constant(tokens.feats.clone());
    let conv = tape.constant(weights.conv.clone());
    let w0 = tape.constant(weights.w0.clone());
    let b0 = tape.constant(weights.b0.clone());
    let w1 = tape.constant(weights.w1.clone());
    let b1 = tape.constant(weights.b1.clone());
    let (probs, _logits, boxes) =
        grounding_head_t(&mut tape, feats, u1.coords(), toks, conv, w0, b0, w1, b1)?;
    Ok(prediction_from_values(
        u1,
        tape.value(probs),
        tape.value(boxes),
    ))
}

/// Assembles a `Prediction` from extracted head outputs.
pub fn prediction_from_values(u1: &SparseGrid, probs: &Matrix, boxes: &Matrix) -> Prediction {
    let n = u1.len();
    let mut objectness = Vec::with_capacity(n);
    let mut deltas = Vec::with_capacity(n);
    let mut log_sizes = Vec::with_capacity(n);
    for i in 0..n {
        objectness.push(probs.get(i, 0));
        let row = boxes.row(i);
        deltas.push([row[0], row[1], row[2]]);
        log_sizes.push([row[3], row[4], row[5]]);
    }
    Prediction {
        coords: u1.coords().to_vec(),
        level: u1.level,
        voxel_size: u1.voxel_size,
        objectness,
        deltas,
        log_sizes,
    }
}

/// Weighted sum of the four loss terms, naming any non-finite input.
pub fn total_loss(
    pruning: f64,
    completion: f64,
    class: f64,
    bbox: f64,
    lambdas: [f64; 4],
) -> Result<f64> {
    for (name, v) in [
        ("pruning", pruning),
        ("completion", completion),
        ("class", class),
        ("bbox", bbox),
    ] {
        if !v.is_finite() {
            return Err(Error::NumericError(format!("{name} loss is {v}")));
        }
    }
    Ok(lambdas[0] * pruning + lambdas[1] * completion + lambdas[2] * class + lambdas[3] * bbox)
}

/// Gathers the rows of a `n x c` node, used to pick positive voxels.
pub fn gather_rows_t(tape: &mut Tape, node: NodeId, rows: Vec<usize>) -> Result<NodeId> {
    tape.gather_rows(node, Arc::new(rows))
}
