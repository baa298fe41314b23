//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! The forward pass records one node per operation; `backward` walks the
//! tape in reverse and accumulates gradients. The op set is exactly what
//! the grounding pipeline needs: dense linear algebra, row gather/scatter
//! for sparse-tensor plumbing, and a few pointwise nonlinearities.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::store::ParamStore;

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Fixed sparse row-mixing plan: `out[o] += w * in[i]` per entry.
/// Used for feature interpolation, where weights come from coordinates
/// and are constants of the differentiation.
#[derive(Clone, Debug, Default)]
pub struct RowMixPlan {
    pub out_rows: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

/// Gather/scatter plan of a sparse convolution: per kernel tap, the
/// (input row, output row) pairs that exchange features through it.
pub type TapPairs = Vec<Vec<(usize, usize)>>;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Min(NodeId, NodeId),
    Max(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    BroadcastRows(NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    PowScalar(NodeId, f64),
    SoftmaxRows(NodeId),
    GatherRows(NodeId, Arc<Vec<usize>>),
    ScatterAddRows(NodeId, Arc<Vec<usize>>),
    RowMix(NodeId, Arc<RowMixPlan>),
    SparseConv(NodeId, NodeId, Arc<TapPairs>),
    SliceCols(NodeId, usize, usize),
    ConcatCols(NodeId, NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    MeanRows(NodeId),
    SumCols(NodeId),
}

impl Op {
    fn label(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Min(..) => "min",
            Op::Max(..) => "max",
            Op::AddRow(..) => "add_row",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::PowScalar(..) => "pow_scalar",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterAddRows(..) => "scatter_add_rows",
            Op::RowMix(..) => "row_mix",
            Op::SparseConv(..) => "sparse_conv",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::SumAll(..) => "sum_all",
            Op::MeanAll(..) => "mean_all",
            Op::MeanRows(..) => "mean_rows",
            Op::SumCols(..) => "sum_cols",
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Records a forward computation and replays it backwards for gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Bound parameter leaves: (store name, node).
    params: Vec<(String, NodeId)>,
    param_lookup: HashMap<String, NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Inserts a constant leaf (no gradient consumer).
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Matrix::scalar(value))
    }

    /// Binds a store parameter as a leaf; repeated binds share one node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.param_lookup.get(name) {
            return Ok(id);
        }
        let tensor = store.get(name)?;
        let id = self.push(tensor.values.clone(), Op::Leaf);
        self.params.push((name.to_string(), id));
        self.param_lookup.insert(name.to_string(), id);
        Ok(id)
    }

    fn binary_shapes(&self, a: NodeId, b: NodeId, what: &str) -> Result<(usize, usize)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::ShapeError(format!(
                "{what}: {}x{} vs {}x{}",
                sa.0, sa.1, sb.0, sb.1
            )));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shapes(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shapes(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shapes(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shapes(a, b, "div")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b)))
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shapes(a, b, "min")?;
        let v = self.value(a).zip_map(self.value(b), f64::min)?;
        Ok(self.push(v, Op::Min(a, b)))
    }

    pub fn max(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shapes(a, b, "max")?;
        let v = self.value(a).zip_map(self.value(b), f64::max)?;
        Ok(self.push(v, Op::Max(a, b)))
    }

    /// `a (n x c) + row (1 x c)` broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (n, c) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != c {
            return Err(Error::ShapeError(format!(
                "add_row: {n}x{c} + {rr}x{rc}"
            )));
        }
        let mut v = self.value(a).clone();
        let r = self.value(row).row(0).to_vec();
        for i in 0..n {
            for (x, y) in v.row_mut(i).iter_mut().zip(&r) {
                *x += *y;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// Tiles a `1 x c` row into `n x c`.
    pub fn broadcast_rows(&mut self, a: NodeId, n: usize) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        if r != 1 {
            return Err(Error::ShapeError(format!("broadcast_rows on {r}x{c}")));
        }
        let row = self.value(a).row(0).to_vec();
        let mut v = Matrix::zeros(n, c);
        for i in 0..n {
            v.row_mut(i).copy_from_slice(&row);
        }
        Ok(self.push(v, Op::BroadcastRows(a)))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg(a))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).scale(k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| x + k);
        self.push(v, Op::AddScalar(a))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn pow_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| x.powf(k));
        self.push(v, Op::PowScalar(a, k))
    }

    /// Row-wise softmax with the usual max-shift for stability.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (n, c) = self.shape(a);
        let mut v = Matrix::zeros(n, c);
        for i in 0..n {
            let row = self.value(a).row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            let out = v.row_mut(i);
            for (o, &x) in out.iter_mut().zip(row) {
                *o = (x - m).exp();
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: Arc<Vec<usize>>) -> Result<NodeId> {
        let (n, _) = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::ShapeError(format!(
                "gather_rows index {bad} out of {n} rows"
            )));
        }
        let v = self.value(a).gather_rows(&idx);
        Ok(self.push(v, Op::GatherRows(a, idx)))
    }

    /// `out[idx[i]] += a[i]`, output has `out_rows` rows.
    pub fn scatter_add_rows(
        &mut self,
        a: NodeId,
        idx: Arc<Vec<usize>>,
        out_rows: usize,
    ) -> Result<NodeId> {
        let (n, c) = self.shape(a);
        if idx.len() != n {
            return Err(Error::ShapeError(format!(
                "scatter_add_rows: {} indices for {n} rows",
                idx.len()
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= out_rows) {
            return Err(Error::ShapeError(format!(
                "scatter_add_rows index {bad} out of {out_rows} rows"
            )));
        }
        let mut v = Matrix::zeros(out_rows, c);
        for (src, &dst) in idx.iter().enumerate() {
            let row = self.value(a).row(src).to_vec();
            for (o, x) in v.row_mut(dst).iter_mut().zip(row) {
                *o += x;
            }
        }
        Ok(self.push(v, Op::ScatterAddRows(a, idx)))
    }

    /// Sparse convolution: `out[o] += feats[i] * W_k` for every pair
    /// (i, o) of tap k, where `weights` stacks the taps row-wise
    /// (`taps * c_in` rows by `c_out` columns).
    pub fn sparse_conv(
        &mut self,
        feats: NodeId,
        weights: NodeId,
        plan: Arc<TapPairs>,
        out_rows: usize,
    ) -> Result<NodeId> {
        let (n, c_in) = self.shape(feats);
        let (w_rows, c_out) = self.shape(weights);
        if w_rows != plan.len() * c_in {
            return Err(Error::ShapeError(format!(
                "kernel weights have {w_rows} rows, expected {} taps x {c_in} channels",
                plan.len()
            )));
        }
        for pairs in plan.iter() {
            if let Some(&(i, o)) = pairs.iter().find(|&&(i, o)| i >= n || o >= out_rows) {
                return Err(Error::ShapeError(format!(
                    "conv pair ({i},{o}) out of range {n}x{out_rows}"
                )));
            }
        }
        let mut out = Matrix::zeros(out_rows, c_out);
        {
            let feats_v = self.value(feats);
            let weights_v = self.value(weights);
            for (k, pairs) in plan.iter().enumerate() {
                for &(i, o) in pairs {
                    let row = feats_v.row(i);
                    let out_row = out.row_mut(o);
                    for (cc, &a) in row.iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        let w_row = weights_v.row(k * c_in + cc);
                        for (dst, &w) in out_row.iter_mut().zip(w_row) {
                            *dst += a * w;
                        }
                    }
                }
            }
        }
        Ok(self.push(out, Op::SparseConv(feats, weights, plan)))
    }

    pub fn row_mix(&mut self, a: NodeId, plan: Arc<RowMixPlan>) -> Result<NodeId> {
        let (n, c) = self.shape(a);
        for &(o, i, _) in &plan.entries {
            if o >= plan.out_rows || i >= n {
                return Err(Error::ShapeError(format!(
                    "row_mix entry ({o},{i}) out of range {}x{n}",
                    plan.out_rows
                )));
            }
        }
        let mut v = Matrix::zeros(plan.out_rows, c);
        for &(o, i, w) in &plan.entries {
            let row = self.value(a).row(i).to_vec();
            for (dst, x) in v.row_mut(o).iter_mut().zip(row) {
                *dst += w * x;
            }
        }
        Ok(self.push(v, Op::RowMix(a, plan)))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (n, c) = self.shape(a);
        if start + len > c {
            return Err(Error::ShapeError(format!(
                "slice_cols {start}..{} of {c}",
                start + len
            )));
        }
        let mut v = Matrix::zeros(n, len);
        for i in 0..n {
            v.row_mut(i)
                .copy_from_slice(&self.value(a).row(i)[start..start + len]);
        }
        Ok(self.push(v, Op::SliceCols(a, start, len)))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (na, ca) = self.shape(a);
        let (nb, cb) = self.shape(b);
        if na != nb {
            return Err(Error::ShapeError(format!(
                "concat_cols: {na} rows vs {nb} rows"
            )));
        }
        let mut v = Matrix::zeros(na, ca + cb);
        for i in 0..na {
            v.row_mut(i)[..ca].copy_from_slice(self.value(a).row(i));
            v.row_mut(i)[ca..].copy_from_slice(self.value(b).row(i));
        }
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.push(Matrix::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len().max(1);
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Matrix::scalar(s / n as f64), Op::MeanAll(a))
    }

    /// Mean over rows: `n x c -> 1 x c`.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let (n, _) = self.shape(a);
        let v = self.value(a).col_sum().scale(1.0 / n.max(1) as f64);
        self.push(v, Op::MeanRows(a))
    }

    /// Row-wise sum: `n x c -> n x 1`.
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let (n, _) = self.shape(a);
        let mut v = Matrix::zeros(n, 1);
        for i in 0..n {
            v.set(i, 0, self.value(a).row(i).iter().sum());
        }
        self.push(v, Op::SumCols(a))
    }

    /// Checks every recorded value for NaN/Inf, naming the first offender.
    pub fn check_finite(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.value.is_finite() {
                return Err(Error::NumericError(format!(
                    "non-finite value in node {i} ({})",
                    node.op.label()
                )));
            }
        }
        Ok(())
    }

    /// Gradients of `loss` (a finite scalar node) w.r.t. every node.
    pub fn backward_grads(&self, loss: NodeId) -> Result<Vec<Option<Matrix>>> {
        self.check_finite()?;
        self.value(loss).as_scalar()?;
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            // consumers of node i have larger indices and already ran, and
            // propagation only touches parents (smaller indices), so the
            // slot can be taken and restored without cloning
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn acc(grads: &mut [Option<Matrix>], id: NodeId, inc: Matrix) -> Result<()> {
        match &mut grads[id.0] {
            Some(g) => g.add_assign(&inc)?,
            slot @ None => *slot = Some(inc),
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                Self::acc(grads, *a, g.clone())?;
                Self::acc(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                Self::acc(grads, *a, g.clone())?;
                Self::acc(grads, *b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                Self::acc(grads, *a, g.zip_map(self.value(*b), |x, y| x * y)?)?;
                Self::acc(grads, *b, g.zip_map(self.value(*a), |x, y| x * y)?)?;
            }
            Op::Div(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                Self::acc(grads, *a, g.zip_map(vb, |x, y| x / y)?)?;
                let mut db = g.zip_map(va, |x, y| x * y)?;
                db = db.zip_map(vb, |x, y| -x / (y * y))?;
                Self::acc(grads, *b, db)?;
            }
            Op::Min(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let mut ga = Matrix::zeros(g.rows(), g.cols());
                let mut gb = Matrix::zeros(g.rows(), g.cols());
                for k in 0..g.len() {
                    if va.data()[k] <= vb.data()[k] {
                        ga.data_mut()[k] = g.data()[k];
                    } else {
                        gb.data_mut()[k] = g.data()[k];
                    }
                }
                Self::acc(grads, *a, ga)?;
                Self::acc(grads, *b, gb)?;
            }
            Op::Max(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let mut ga = Matrix::zeros(g.rows(), g.cols());
                let mut gb = Matrix::zeros(g.rows(), g.cols());
                for k in 0..g.len() {
                    if va.data()[k] >= vb.data()[k] {
                        ga.data_mut()[k] = g.data()[k];
                    } else {
                        gb.data_mut()[k] = g.data()[k];
                    }
                }
                Self::acc(grads, *a, ga)?;
                Self::acc(grads, *b, gb)?;
            }
            Op::AddRow(a, row) => {
                Self::acc(grads, *a, g.clone())?;
                Self::acc(grads, *row, g.col_sum())?;
            }
            Op::BroadcastRows(a) => {
                Self::acc(grads, *a, g.col_sum())?;
            }
            Op::Neg(a) => Self::acc(grads, *a, g.scale(-1.0))?,
            Op::Scale(a, k) => Self::acc(grads, *a, g.scale(*k))?,
            Op::AddScalar(a) => Self::acc(grads, *a, g.clone())?,
            Op::MatMul(a, b) => {
                let da = g.matmul(&self.value(*b).transpose())?;
                let db = self.value(*a).transpose().matmul(g)?;
                Self::acc(grads, *a, da)?;
                Self::acc(grads, *b, db)?;
            }
            Op::Transpose(a) => Self::acc(grads, *a, g.transpose())?,
            Op::Relu(a) => {
                Self::acc(grads, *a, g.zip_map(self.value(*a), |gx, x| if x > 0.0 { gx } else { 0.0 })?)?;
            }
            Op::Sigmoid(a) => {
                Self::acc(grads, *a, g.zip_map(&node.value, |gx, s| gx * s * (1.0 - s))?)?;
            }
            Op::Exp(a) => {
                Self::acc(grads, *a, g.zip_map(&node.value, |gx, e| gx * e)?)?;
            }
            Op::Ln(a) => {
                Self::acc(grads, *a, g.zip_map(self.value(*a), |gx, x| gx / x)?)?;
            }
            Op::PowScalar(a, k) => {
                let da = g.zip_map(self.value(*a), |gx, x| gx * k * x.powf(k - 1.0))?;
                Self::acc(grads, *a, da)?;
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut da = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = y
                        .row(r)
                        .iter()
                        .zip(g.row(r))
                        .map(|(&yi, &gi)| yi * gi)
                        .sum();
                    for c in 0..y.cols() {
                        da.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                Self::acc(grads, *a, da)?;
            }
            Op::GatherRows(a, idx) => {
                let (n, c) = self.shape(*a);
                let mut da = Matrix::zeros(n, c);
                for (o, &i2) in idx.iter().enumerate() {
                    for (dst, &x) in da.row_mut(i2).iter_mut().zip(g.row(o)) {
                        *dst += x;
                    }
                }
                Self::acc(grads, *a, da)?;
            }
            Op::ScatterAddRows(a, idx) => {
                let (n, c) = self.shape(*a);
                let mut da = Matrix::zeros(n, c);
                for (src, &dst) in idx.iter().enumerate() {
                    da.row_mut(src).copy_from_slice(g.row(dst));
                }
                Self::acc(grads, *a, da)?;
            }
            Op::RowMix(a, plan) => {
                let (n, c) = self.shape(*a);
                let mut da = Matrix::zeros(n, c);
                for &(o, i2, w) in &plan.entries {
                    for (dst, &x) in da.row_mut(i2).iter_mut().zip(g.row(o)) {
                        *dst += w * x;
                    }
                }
                Self::acc(grads, *a, da)?;
            }
            Op::SparseConv(feats, weights, plan) => {
                let (n, c_in) = self.shape(*feats);
                let (w_rows, c_out) = self.shape(*weights);
                let feats_v = self.value(*feats);
                let weights_v = self.value(*weights);
                let mut d_feats = Matrix::zeros(n, c_in);
                let mut d_weights = Matrix::zeros(w_rows, c_out);
                for (k, pairs) in plan.iter().enumerate() {
                    for &(i, o) in pairs {
                        let g_row = g.row(o);
                        let f_row = feats_v.row(i);
                        let df_row = d_feats.row_mut(i);
                        for cc in 0..c_in {
                            let w_row = weights_v.row(k * c_in + cc);
                            let mut dot = 0.0;
                            for (gv, wv) in g_row.iter().zip(w_row) {
                                dot += gv * wv;
                            }
                            df_row[cc] += dot;
                            let a = f_row[cc];
                            if a != 0.0 {
                                let dw_row = d_weights.row_mut(k * c_in + cc);
                                for (dw, gv) in dw_row.iter_mut().zip(g_row) {
                                    *dw += a * gv;
                                }
                            }
                        }
                    }
                }
                Self::acc(grads, *feats, d_feats)?;
                Self::acc(grads, *weights, d_weights)?;
            }
            Op::SliceCols(a, start, len) => {
                let (n, c) = self.shape(*a);
                let mut da = Matrix::zeros(n, c);
                for r in 0..n {
                    da.row_mut(r)[*start..start + len].copy_from_slice(g.row(r));
                }
                Self::acc(grads, *a, da)?;
            }
            Op::ConcatCols(a, b) => {
                let (_, ca) = self.shape(*a);
                let (n, cb) = self.shape(*b);
                let mut da = Matrix::zeros(n, ca);
                let mut db = Matrix::zeros(n, cb);
                for r in 0..n {
                    da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                Self::acc(grads, *a, da)?;
                Self::acc(grads, *b, db)?;
            }
            Op::SumAll(a) => {
                let (n, c) = self.shape(*a);
                Self::acc(grads, *a, Matrix::filled(n, c, g.get(0, 0)))?;
            }
            Op::MeanAll(a) => {
                let (n, c) = self.shape(*a);
                let k = g.get(0, 0) / (n * c).max(1) as f64;
                Self::acc(grads, *a, Matrix::filled(n, c, k))?;
            }
            Op::MeanRows(a) => {
                let (n, c) = self.shape(*a);
                let mut da = Matrix::zeros(n, c);
                for r in 0..n {
                    for col in 0..c {
                        da.set(r, col, g.get(0, col) / n as f64);
                    }
                }
                Self::acc(grads, *a, da)?;
            }
            Op::SumCols(a) => {
                let (n, c) = self.shape(*a);
                let mut da = Matrix::zeros(n, c);
                for r in 0..n {
                    let gr = g.get(r, 0);
                    da.row_mut(r).fill(gr);
                }
                Self::acc(grads, *a, da)?;
            }
        }
        Ok(())
    }

    /// Populates `store` grads with d(loss)/d(param). Parameters that do not
    /// participate in `loss` get exactly zero gradients.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward_grads(loss)?;
        store.zero_grads();
        for (name, id) in &self.params {
            if let Some(g) = &grads[id.0] {
                let tensor = store.get_mut(name)?;
                tensor.grad = g.clone();
            }
        }
        Ok(())
    }

    /// Like `backward` but accumulates `scale * grad` into existing grads;
    /// used to average gradients over a batch of per-sample tapes.
    pub fn backward_accumulate(
        &self,
        loss: NodeId,
        store: &mut ParamStore,
        scale: f64,
    ) -> Result<()> {
        let grads = self.backward_grads(loss)?;
        for (name, id) in &self.params {
            if let Some(g) = &grads[id.0] {
                let tensor = store.get_mut(name)?;
                tensor.grad.add_assign(&g.scale(scale))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, m: Matrix) -> ParamStore {
        let mut s = ParamStore::new(0);
        s.insert(name, m);
        s
    }

    #[test]
    fn sum_gradient_is_ones() {
        // loss = sum(w) -> grad = all-ones
        let mut store = store_with("w", Matrix::from_vec(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let loss = tape.sum_all(w);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get("w").unwrap().grad, Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn half_sq_norm_gradient_is_w() {
        // loss = 0.5 * ||w||^2 -> grad = w
        let values = Matrix::from_vec(1, 3, vec![1.5, -0.25, 2.0]).unwrap();
        let mut store = store_with("w", values.clone());
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let sq = tape.mul(w, w).unwrap();
        let sum = tape.sum_all(sq);
        let loss = tape.scale(sum, 0.5);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get("w").unwrap().grad, values);
    }

    #[test]
    fn non_participating_param_gets_zero_grad() {
        let mut store = ParamStore::new(0);
        store.insert("used", Matrix::scalar(2.0));
        store.insert("unused", Matrix::scalar(5.0));
        let mut tape = Tape::new();
        let u = tape.param(&store, "used").unwrap();
        let _dead = tape.param(&store, "unused").unwrap();
        let loss = tape.sum_all(u);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get("unused").unwrap().grad, Matrix::scalar(0.0));
        assert_eq!(store.get("used").unwrap().grad, Matrix::scalar(1.0));
    }

    #[test]
    fn nan_in_forward_is_reported_with_node_label() {
        let mut store = store_with("w", Matrix::scalar(-1.0));
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let bad = tape.ln(w); // ln(-1) = NaN
        let loss = tape.sum_all(bad);
        let err = tape.backward(loss, &mut store).unwrap_err();
        match err {
            Error::NumericError(msg) => assert!(msg.contains("ln"), "msg: {msg}"),
            other => panic!("expected NumericError, got {other:?}"),
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap());
        let y = tape.softmax_rows(x);
        for r in 0..2 {
            let s: f64 = tape.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gather_scatter_roundtrip_gradient() {
        let mut store = store_with("w", Matrix::from_vec(3, 2, vec![1.0; 6]).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let idx = Arc::new(vec![2usize, 0]);
        let g = tape.gather_rows(w, idx.clone()).unwrap();
        let s = tape.scatter_add_rows(g, Arc::new(vec![0, 1]), 2).unwrap();
        let loss = tape.sum_all(s);
        tape.backward(loss, &mut store).unwrap();
        // rows 0 and 2 participate, row 1 does not
        let grad = &store.get("w").unwrap().grad;
        assert_eq!(grad.row(0), &[1.0, 1.0]);
        assert_eq!(grad.row(1), &[0.0, 0.0]);
        assert_eq!(grad.row(2), &[1.0, 1.0]);
    }
}
