//! Farthest point sampling over voxel centers.

use crate::error::{Error, Result};

use super::grid::SparseGrid;

/// Result of farthest point sampling: the chosen rows in canonical
/// (ascending) order for stable gathers, plus the greedy selection order.
#[derive(Clone, Debug)]
pub struct FpsSample {
    pub indices: Vec<usize>,
    pub selection_order: Vec<usize>,
}

/// Greedy max-min selection of `k` voxels, seeded at canonical index 0.
/// Ties pick the lowest index, so the result is deterministic.
pub fn farthest_point_sample(grid: &SparseGrid, k: usize) -> Result<FpsSample> {
    let n = grid.len();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, max: n });
    }
    let centers: Vec<[f64; 3]> = (0..n).map(|i| grid.voxel_center(i)).collect();
    let dist2 = |a: &[f64; 3], b: &[f64; 3]| {
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
    };

    let mut selection_order = Vec::with_capacity(k);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = 0usize;
    selection_order.push(current);
    for _ in 1..k {
        let mut best = 0usize;
        let mut best_d2 = f64::NEG_INFINITY;
        for i in 0..n {
            let d2 = dist2(&centers[i], &centers[current]).min(min_d2[i]);
            min_d2[i] = d2;
            if d2 > best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        current = best;
        selection_order.push(current);
    }
    let mut indices = selection_order.clone();
    indices.sort_unstable();
    Ok(FpsSample { indices, selection_order })
}
