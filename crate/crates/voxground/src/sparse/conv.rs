//! Sparse convolutions over coordinate lists.
//!
//! All variants are driven by a [`KernelMap`]: per kernel offset, the list
//! of (input row, output row) pairs that exchange features through that
//! tap. Building the map is pure coordinate work; applying it is a gather,
//! a matmul against the tap's weight block, and a scatter-add. The same
//! map feeds both the plain functions here and the tape-recorded variants
//! used in training.

use std::collections::HashMap;
use std::sync::Arc;

use crate::autodiff::{tape::TapPairs, NodeId, Tape};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::grid::{Coord3, SparseGrid};

/// Per-offset gather/scatter plan for one sparse convolution.
/// `offsets()[k]` lists the (input_index, output_index) pairs of tap `k`.
#[derive(Clone, Debug)]
pub struct KernelMap {
    offsets: Arc<TapPairs>,
}

impl KernelMap {
    pub fn new(offsets: TapPairs) -> Self {
        Self { offsets: Arc::new(offsets) }
    }

    pub fn taps(&self) -> usize {
        self.offsets.len()
    }

    pub fn offsets(&self) -> &TapPairs {
        &self.offsets
    }

    pub fn shared(&self) -> Arc<TapPairs> {
        self.offsets.clone()
    }
}

/// Offsets of a 3x3x3 kernel in canonical (dx, dy, dz) order.
/// The center tap is index 13.
pub const CENTER_TAP_3: usize = 13;

fn coord_index(coords: &[Coord3]) -> HashMap<Coord3, usize> {
    coords.iter().enumerate().map(|(i, &c)| (c, i)).collect()
}

/// Submanifold (stride 1, kernel 3) plan: output coords equal input coords;
/// tap k connects `coords[i] + offset_k -> coords[i]`.
pub fn submanifold_kernel_map(coords: &[Coord3]) -> KernelMap {
    let index = coord_index(coords);
    let mut offsets = vec![Vec::new(); 27];
    for (i, &c) in coords.iter().enumerate() {
        let mut k = 0;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(&j) = index.get(&c.offset(dx, dy, dz)) {
                        offsets[k].push((j, i));
                    }
                    k += 1;
                }
            }
        }
    }
    KernelMap::new(offsets)
}

/// Stride-2 kernel-2 downsampling plan. Output coordinates are the unique
/// parents `floor(c/2)`; each input feeds exactly one tap of its parent.
pub fn downsample_plan(coords: &[Coord3]) -> (Vec<Coord3>, KernelMap) {
    let mut parents: Vec<Coord3> = coords.iter().map(|c| c.parent()).collect();
    parents.sort_unstable();
    parents.dedup();
    let index = coord_index(&parents);
    let mut offsets = vec![Vec::new(); 8];
    for (i, &c) in coords.iter().enumerate() {
        let p = c.parent();
        let dx = c.x.rem_euclid(2) as usize;
        let dy = c.y.rem_euclid(2) as usize;
        let dz = c.z.rem_euclid(2) as usize;
        let k = dx * 4 + dy * 2 + dz;
        offsets[k].push((i, index[&p]));
    }
    (parents, KernelMap::new(offsets))
}

/// Generative (transposed, stride 2, kernel 2) upsampling plan. Every input
/// coordinate expands into its eight children `2c + o`, `o` in {0,1}^3.
pub fn upsample_plan(coords: &[Coord3]) -> (Vec<Coord3>, KernelMap) {
    let mut children: Vec<Coord3> = Vec::with_capacity(coords.len() * 8);
    for &c in coords {
        for dx in 0..2 {
            for dy in 0..2 {
                for dz in 0..2 {
                    children.push(Coord3::new(2 * c.x + dx, 2 * c.y + dy, 2 * c.z + dz));
                }
            }
        }
    }
    children.sort_unstable();
    children.dedup();
    let index = coord_index(&children);
    let mut offsets = vec![Vec::new(); 8];
    for (i, &c) in coords.iter().enumerate() {
        for dx in 0..2i32 {
            for dy in 0..2i32 {
                for dz in 0..2i32 {
                    let k = (dx * 4 + dy * 2 + dz) as usize;
                    let child = Coord3::new(2 * c.x + dx, 2 * c.y + dy, 2 * c.z + dz);
                    offsets[k].push((i, index[&child]));
                }
            }
        }
    }
    (children, KernelMap::new(offsets))
}

fn check_weights(weights: &Matrix, taps: usize, c_in: usize) -> Result<usize> {
    if weights.rows() != taps * c_in {
        return Err(Error::ShapeError(format!(
            "kernel weights have {} rows, expected {taps} taps x {c_in} channels",
            weights.rows()
        )));
    }
    Ok(weights.cols())
}

/// Applies a kernel map to plain features. `weights` stacks the taps:
/// rows `k*c_in..(k+1)*c_in` hold tap k's `c_in x c_out` block.
pub fn apply_kernel_map(
    km: &KernelMap,
    feats: &Matrix,
    weights: &Matrix,
    out_rows: usize,
) -> Result<Matrix> {
    let c_in = feats.cols();
    let c_out = check_weights(weights, km.taps(), c_in)?;
    let mut out = Matrix::zeros(out_rows, c_out);
    for (k, pairs) in km.offsets().iter().enumerate() {
        for &(i, o) in pairs {
            let row = feats.row(i);
            for (cc, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let w_row = weights.row(k * c_in + cc);
                for (dst, &w) in out.row_mut(o).iter_mut().zip(w_row) {
                    *dst += a * w;
                }
            }
        }
    }
    Ok(out)
}

/// Tape-recorded version of [`apply_kernel_map`].
pub fn apply_kernel_map_t(
    tape: &mut Tape,
    feats: NodeId,
    weights: NodeId,
    km: &KernelMap,
    out_rows: usize,
) -> Result<NodeId> {
    tape.sparse_conv(feats, weights, km.shared(), out_rows)
}

/// Sparse convolution. Stride 1 uses a 3x3x3 submanifold kernel (output
/// coords equal input coords); stride 2 uses a 2x2x2 downsampling kernel
/// and increments the level.
pub fn sparse_conv(grid: &SparseGrid, weights: &Matrix, stride: usize) -> Result<SparseGrid> {
    match stride {
        1 => {
            let km = submanifold_kernel_map(grid.coords());
            let feats = apply_kernel_map(&km, grid.feats(), weights, grid.len())?;
            grid.with_feats(feats)
        }
        2 => {
            let (coords, km) = downsample_plan(grid.coords());
            let feats = apply_kernel_map(&km, grid.feats(), weights, coords.len())?;
            SparseGrid::new(coords, feats, grid.level + 1, grid.voxel_size * 2.0)
        }
        s => Err(Error::InvalidInput(format!("unsupported stride {s}"))),
    }
}

/// Generative upsampling: expands every voxel into its eight children and
/// decrements the level. Fails below level 1 so the pyramid never leaves
/// its defined range during decoding.
pub fn generative_upsample(grid: &SparseGrid, weights: &Matrix) -> Result<SparseGrid> {
    if grid.level < 2 {
        return Err(Error::LevelUnderflow(grid.level));
    }
    let (coords, km) = upsample_plan(grid.coords());
    let feats = apply_kernel_map(&km, grid.feats(), weights, coords.len())?;
    SparseGrid::new(coords, feats, grid.level - 1, grid.voxel_size * 0.5)
}

/// Weights of one residual downsampling block.
#[derive(Clone, Debug)]
pub struct ResidualBlockWeights {
    /// Stride-2 entry convolution, `8*c_in x c_out`.
    pub down: Matrix,
    /// First stride-1 convolution of the residual path, `27*c_out x c_out`.
    pub conv_a: Matrix,
    /// Second stride-1 convolution of the residual path, `27*c_out x c_out`.
    pub conv_b: Matrix,
}

/// Downsampling residual block: `y = down(x); y + conv_b(relu(conv_a(y)))`.
/// Output level is input level + 1.
pub fn residual_block(grid: &SparseGrid, params: &ResidualBlockWeights) -> Result<SparseGrid> {
    let y = sparse_conv(grid, &params.down, 2)?;
    let a = sparse_conv(&y, &params.conv_a, 1)?;
    let a = y.with_feats(a.feats().map(|v| v.max(0.0)))?;
    let b = sparse_conv(&a, &params.conv_b, 1)?;
    let feats = y.feats().add(b.feats())?;
    y.with_feats(feats)
}
