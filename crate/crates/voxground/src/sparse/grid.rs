//! Sparse voxel grids: lattice coordinates in canonical lexicographic order
//! paired with a dense feature matrix.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Integer lattice coordinate. Ordering is lexicographic (x, y, z), which
/// is the canonical ordering used everywhere in this crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Coord3 {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl Coord3 {
    pub fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    pub fn offset(self, dx: i32, dy: i32, dz: i32) -> Self {
        Self { x: self.x + dx, y: self.y + dy, z: self.z + dz }
    }

    /// Parent coordinate one level up (floor division by 2).
    pub fn parent(self) -> Self {
        Self {
            x: self.x.div_euclid(2),
            y: self.y.div_euclid(2),
            z: self.z.div_euclid(2),
        }
    }

    pub fn as_f64(self) -> [f64; 3] {
        [f64::from(self.x), f64::from(self.y), f64::from(self.z)]
    }
}

/// Physical voxel edge in meters for a pyramid level: `2^(level+2)` cm.
/// Level 1 is 8 cm, level 2 is 16 cm, level 3 is 32 cm; the 1 cm input
/// voxelization sits at level -2.
pub fn level_voxel_size(level: i32) -> f64 {
    0.01 * f64::powi(2.0, level + 2)
}

/// Inverse of `level_voxel_size` for power-of-two centimeter sizes.
pub fn level_for_voxel_size(voxel_size: f64) -> i32 {
    ((voxel_size * 100.0).log2().round() as i32) - 2
}

/// Occupied lattice cells with one feature row per cell.
///
/// Invariants: coordinates are unique and sorted in canonical (x, y, z)
/// order, and `feats` has exactly one row per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseGrid {
    coords: Vec<Coord3>,
    feats: Matrix,
    pub level: i32,
    pub voxel_size: f64,
}

impl SparseGrid {
    /// Builds a grid from already-sorted unique coordinates.
    pub fn new(coords: Vec<Coord3>, feats: Matrix, level: i32, voxel_size: f64) -> Result<Self> {
        if coords.len() != feats.rows() {
            return Err(Error::ShapeError(format!(
                "{} coords vs {} feature rows",
                coords.len(),
                feats.rows()
            )));
        }
        if coords.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "coordinates must be strictly increasing in canonical order".into(),
            ));
        }
        Ok(Self { coords, feats, level, voxel_size })
    }

    pub fn empty(channels: usize, level: i32, voxel_size: f64) -> Self {
        Self {
            coords: Vec::new(),
            feats: Matrix::zeros(0, channels),
            level,
            voxel_size,
        }
    }

    pub fn coords(&self) -> &[Coord3] {
        &self.coords
    }

    pub fn feats(&self) -> &Matrix {
        &self.feats
    }

    pub fn feats_mut(&mut self) -> &mut Matrix {
        &mut self.feats
    }

    /// Replaces features, keeping coordinates. Row count must match.
    pub fn with_feats(&self, feats: Matrix) -> Result<Self> {
        Self::new(self.coords.clone(), feats, self.level, self.voxel_size)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.feats.cols()
    }

    /// Index of a coordinate, if occupied.
    pub fn position(&self, c: Coord3) -> Option<usize> {
        self.coords.binary_search(&c).ok()
    }

    /// Physical center of the voxel at row `i`.
    pub fn voxel_center(&self, i: usize) -> [f64; 3] {
        let c = self.coords[i];
        [
            (f64::from(c.x) + 0.5) * self.voxel_size,
            (f64::from(c.y) + 0.5) * self.voxel_size,
            (f64::from(c.z) + 0.5) * self.voxel_size,
        ]
    }
}

/// Probability or binary values aligned index-for-index with a host
/// coordinate list.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelMask {
    values: Vec<f64>,
}

impl VoxelMask {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidInput("mask values must lie in [0,1]".into()));
        }
        Ok(Self { values })
    }

    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn ones(n: usize) -> Self {
        Self { values: vec![1.0; n] }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self { values: bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn host_len(&self) -> usize {
        self.values.len()
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Indices with value 1 (binary masks only).
    pub fn kept_indices(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Elementwise and-not: `self[i]=1 and other[i]=0`.
    pub fn and_not(&self, other: &VoxelMask) -> Result<VoxelMask> {
        if self.host_len() != other.host_len() {
            return Err(Error::ShapeError(format!(
                "mask lengths {} vs {}",
                self.host_len(),
                other.host_len()
            )));
        }
        Ok(VoxelMask {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| if a == 1.0 && b == 0.0 { 1.0 } else { 0.0 })
                .collect(),
        })
    }
}

/// Buckets points into lattice cells and averages their 6-dim rows.
///
/// Rows within a cell are accumulated in a canonical value order, so the
/// result is bit-identical under any permutation of the input points.
pub fn voxelize(points: &Matrix, voxel_size: f64) -> Result<SparseGrid> {
    if points.rows() == 0 {
        return Err(Error::EmptyScene);
    }
    if points.cols() != 6 {
        return Err(Error::InvalidInput(format!(
            "expected N x 6 points, got N x {}",
            points.cols()
        )));
    }
    if !(voxel_size > 0.0) {
        return Err(Error::InvalidInput(format!("voxel size {voxel_size} must be positive")));
    }
    if !points.is_finite() {
        return Err(Error::InvalidInput("points contain non-finite values".into()));
    }

    let mut buckets: BTreeMap<Coord3, Vec<&[f64]>> = BTreeMap::new();
    for r in 0..points.rows() {
        let row = points.row(r);
        let cell = Coord3::new(
            (row[0] / voxel_size).floor() as i32,
            (row[1] / voxel_size).floor() as i32,
            (row[2] / voxel_size).floor() as i32,
        );
        buckets.entry(cell).or_default().push(row);
    }

    let mut coords = Vec::with_capacity(buckets.len());
    let mut feats = Matrix::zeros(buckets.len(), 6);
    for (i, (cell, mut rows)) in buckets.into_iter().enumerate() {
        rows.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let inv = 1.0 / rows.len() as f64;
        let out = feats.row_mut(i);
        for row in rows {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o *= inv;
        }
        coords.push(cell);
    }
    SparseGrid::new(coords, feats, level_for_voxel_size(voxel_size), voxel_size)
}

/// Retains exactly the rows with mask value 1, preserving canonical order.
pub fn prune(grid: &SparseGrid, mask: &VoxelMask) -> Result<SparseGrid> {
    if mask.host_len() != grid.len() {
        return Err(Error::ShapeError(format!(
            "mask of {} values on grid of {} voxels",
            mask.host_len(),
            grid.len()
        )));
    }
    if !mask.is_binary() {
        return Err(Error::InvalidInput("prune requires a binary mask".into()));
    }
    let kept = mask.kept_indices();
    let coords = kept.iter().map(|&i| grid.coords()[i]).collect();
    let feats = grid.feats().gather_rows(&kept);
    SparseGrid::new(coords, feats, grid.level, grid.voxel_size)
}

/// Mask over `b`: 1 where the coordinate also occurs in `a`.
pub fn coord_align_mask(a: &SparseGrid, b: &SparseGrid) -> Result<VoxelMask> {
    if a.level != b.level {
        return Err(Error::LevelError { expected: a.level, got: b.level });
    }
    Ok(VoxelMask::from_bools(
        &b.coords()
            .iter()
            .map(|&c| a.position(c).is_some())
            .collect::<Vec<_>>(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_single_voxel() {
        let points =
            Matrix::from_vec(1, 6, vec![0.004, 0.004, 0.004, 1.0, 0.0, 0.0]).unwrap();
        let grid = voxelize(&points, 0.01).unwrap();
        assert_eq!(grid.len(), 1);
        assert_eq!(grid.coords()[0], Coord3::new(0, 0, 0));
        assert_eq!(grid.feats().row(0), &[0.004, 0.004, 0.004, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn same_cell_colors_average() {
        let points = Matrix::from_vec(
            2,
            6,
            vec![
                0.002, 0.002, 0.002, 1.0, 0.0, 0.0, //
                0.008, 0.002, 0.002, 0.0, 1.0, 0.0,
            ],
        )
        .unwrap();
        let grid = voxelize(&points, 0.01).unwrap();
        assert_eq!(grid.len(), 1);
        let row = grid.feats().row(0);
        assert_eq!(&row[3..], &[0.5, 0.5, 0.0]);
        assert!((row[0] - 0.005).abs() < 1e-12);
    }

    #[test]
    fn empty_scene_rejected() {
        let points = Matrix::zeros(0, 6);
        assert!(matches!(voxelize(&points, 0.01), Err(Error::EmptyScene)));
    }

    #[test]
    fn non_finite_rejected() {
        let points =
            Matrix::from_vec(1, 6, vec![f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(voxelize(&points, 0.01), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn negative_positions_floor() {
        let points =
            Matrix::from_vec(1, 6, vec![-0.004, -0.011, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let grid = voxelize(&points, 0.01).unwrap();
        assert_eq!(grid.coords()[0], Coord3::new(-1, -2, 0));
    }

    #[test]
    fn prune_keeps_masked_rows() {
        let points = Matrix::from_vec(
            3,
            6,
            vec![
                0.0, 0.0, 0.0, 1.0, 0.0, 0.0, //
                0.011, 0.0, 0.0, 0.0, 1.0, 0.0, //
                0.022, 0.0, 0.0, 0.0, 0.0, 1.0,
            ],
        )
        .unwrap();
        let grid = voxelize(&points, 0.01).unwrap();
        let mask = VoxelMask::new(vec![1.0, 0.0, 1.0]).unwrap();
        let pruned = prune(&grid, &mask).unwrap();
        assert_eq!(pruned.len(), 2);
        assert_eq!(pruned.coords()[0], grid.coords()[0]);
        assert_eq!(pruned.coords()[1], grid.coords()[2]);
        assert_eq!(pruned.feats().row(0), grid.feats().row(0));
        assert_eq!(pruned.feats().row(1), grid.feats().row(2));
    }

    #[test]
    fn prune_all_ones_is_identity_all_zeros_empties() {
        let points = Matrix::from_vec(1, 6, vec![0.0; 6]).unwrap();
        let grid = voxelize(&points, 0.01).unwrap();
        assert_eq!(prune(&grid, &VoxelMask::ones(1)).unwrap(), grid);
        assert!(prune(&grid, &VoxelMask::zeros(1)).unwrap().is_empty());
    }

    #[test]
    fn prune_misaligned_mask_rejected() {
        let points = Matrix::from_vec(1, 6, vec![0.0; 6]).unwrap();
        let grid = voxelize(&points, 0.01).unwrap();
        assert!(matches!(
            prune(&grid, &VoxelMask::ones(3)),
            Err(Error::ShapeError(_))
        ));
    }

    #[test]
    fn align_mask_membership() {
        let mk = |coords: &[(i32, i32, i32)]| {
            let cs: Vec<Coord3> = coords.iter().map(|&(x, y, z)| Coord3::new(x, y, z)).collect();
            SparseGrid::new(cs.clone(), Matrix::zeros(cs.len(), 1), 1, 0.08).unwrap()
        };
        let a = mk(&[(0, 0, 0), (1, 1, 1), (2, 2, 2)]);
        let b = mk(&[(0, 0, 0), (0, 1, 0), (1, 1, 1), (3, 3, 3), (4, 4, 4)]);
        let mask = coord_align_mask(&a, &b).unwrap();
        assert_eq!(mask.values(), &[1.0, 0.0, 1.0, 0.0, 0.0]);
        // a == b -> all ones; disjoint -> all zeros
        assert_eq!(coord_align_mask(&a, &a).unwrap().values(), &[1.0, 1.0, 1.0]);
        let c = mk(&[(9, 9, 9)]);
        assert_eq!(coord_align_mask(&c, &a).unwrap().values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn align_mask_level_mismatch() {
        let a = SparseGrid::empty(1, 1, 0.08);
        let b = SparseGrid::empty(1, 2, 0.16);
        assert!(matches!(coord_align_mask(&a, &b), Err(Error::LevelError { .. })));
    }

    #[test]
    fn level_sizes_follow_power_law() {
        assert!((level_voxel_size(1) - 0.08).abs() < 1e-12);
        assert!((level_voxel_size(2) - 0.16).abs() < 1e-12);
        assert!((level_voxel_size(3) - 0.32).abs() < 1e-12);
        assert!((level_voxel_size(-2) - 0.01).abs() < 1e-12);
        assert_eq!(level_for_voxel_size(0.08), 1);
        assert_eq!(level_for_voxel_size(0.01), -2);
    }
}
