//! Inverse-distance feature interpolation on sparse grids.
//!
//! Each query gathers up to 8 nearest occupied voxels within Chebyshev
//! radius 2, weighted by inverse Euclidean distance with the weights
//! normalized to sum 1. An exact hit returns the stored row; a query with
//! no occupied neighbor yields a zero row and a miss flag.

use std::collections::HashMap;
use std::sync::Arc;

use crate::autodiff::{NodeId, RowMixPlan, Tape};
use crate::error::Result;
use crate::matrix::Matrix;

use super::grid::{Coord3, SparseGrid};

const RADIUS: i32 = 2;
const MAX_NEIGHBORS: usize = 8;

/// Sparse linear plan mapping grid rows onto query rows.
#[derive(Clone, Debug)]
pub struct InterpPlan {
    pub mix: Arc<RowMixPlan>,
    pub misses: Vec<bool>,
}

/// Builds the interpolation plan for integer lattice queries against a
/// source coordinate list. Weights depend only on coordinates, never on
/// features.
pub fn interpolation_plan(source: &[Coord3], queries: &[Coord3]) -> InterpPlan {
    let index: HashMap<Coord3, usize> =
        source.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut mix = RowMixPlan { out_rows: queries.len(), entries: Vec::new() };
    let mut misses = vec![false; queries.len()];

    for (q, &query) in queries.iter().enumerate() {
        if let Some(&i) = index.get(&query) {
            mix.entries.push((q, i, 1.0));
            continue;
        }
        // candidates within the Chebyshev box, nearest Euclidean first
        let mut candidates: Vec<(f64, usize)> = Vec::new();
        for dx in -RADIUS..=RADIUS {
            for dy in -RADIUS..=RADIUS {
                for dz in -RADIUS..=RADIUS {
                    if let Some(&i) = index.get(&query.offset(dx, dy, dz)) {
                        let d2 = f64::from(dx * dx + dy * dy + dz * dz);
                        candidates.push((d2, i));
                    }
                }
            }
        }
        if candidates.is_empty() {
            misses[q] = true;
            continue;
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        candidates.truncate(MAX_NEIGHBORS);
        let inv: Vec<f64> = candidates.iter().map(|(d2, _)| 1.0 / d2.sqrt()).collect();
        let total: f64 = inv.iter().sum();
        for ((_, i), w) in candidates.iter().zip(inv) {
            mix.entries.push((q, *i, w / total));
        }
    }
    InterpPlan { mix: Arc::new(mix), misses }
}

/// Interpolates grid features at the queries. Returns the feature rows and
/// the per-query miss flags.
pub fn interpolate_features(grid: &SparseGrid, queries: &[Coord3]) -> (Matrix, Vec<bool>) {
    let plan = interpolation_plan(grid.coords(), queries);
    let mut out = Matrix::zeros(queries.len(), grid.channels());
    for &(q, i, w) in &plan.mix.entries {
        let row = grid.feats().row(i);
        for (dst, &v) in out.row_mut(q).iter_mut().zip(row) {
            *dst += w * v;
        }
    }
    (out, plan.misses)
}

/// Tape-recorded interpolation through a prebuilt plan.
pub fn interpolate_t(tape: &mut Tape, feats: NodeId, plan: &InterpPlan) -> Result<NodeId> {
    tape.row_mix(feats, plan.mix.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::grid::level_voxel_size;

    fn grid_from(coords: &[(i32, i32, i32)], feats: Matrix) -> SparseGrid {
        let mut cs: Vec<Coord3> = coords.iter().map(|&(x, y, z)| Coord3::new(x, y, z)).collect();
        let mut order: Vec<usize> = (0..cs.len()).collect();
        order.sort_by_key(|&i| cs[i]);
        cs.sort_unstable();
        SparseGrid::new(cs, feats.gather_rows(&order), 1, level_voxel_size(1)).unwrap()
    }

    #[test]
    fn exact_match_returns_stored_row() {
        let grid = grid_from(
            &[(0, 0, 0), (4, 4, 4)],
            Matrix::from_vec(2, 2, vec![1.5, -2.0, 7.0, 3.0]).unwrap(),
        );
        let (out, misses) = interpolate_features(&grid, &[Coord3::new(0, 0, 0)]);
        assert_eq!(out.row(0), grid.feats().row(0));
        assert!(!misses[0]);
    }

    #[test]
    fn midpoint_of_two_voxels_is_half() {
        // voxels at x=0 and x=2, scalar feats 0 and 1; query x=1
        let grid = grid_from(
            &[(0, 0, 0), (2, 0, 0)],
            Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap(),
        );
        let (out, misses) = interpolate_features(&grid, &[Coord3::new(1, 0, 0)]);
        assert!((out.get(0, 0) - 0.5).abs() < 1e-12);
        assert!(!misses[0]);
    }

    #[test]
    fn constant_field_preserved_and_weights_sum_to_one() {
        let coords: Vec<(i32, i32, i32)> = (0..4)
            .flat_map(|x| (0..4).map(move |y| (x, y, 0)))
            .collect();
        let grid = grid_from(&coords, Matrix::filled(16, 3, 2.5));
        let queries = [Coord3::new(1, 1, 1), Coord3::new(2, 3, 0), Coord3::new(0, 0, 2)];
        let plan = interpolation_plan(grid.coords(), &queries);
        for q in 0..queries.len() {
            let w_sum: f64 = plan
                .mix
                .entries
                .iter()
                .filter(|&&(o, _, _)| o == q)
                .map(|&(_, _, w)| w)
                .sum();
            assert!((w_sum - 1.0).abs() < 1e-9, "weights sum {w_sum}");
        }
        let (out, misses) = interpolate_features(&grid, &queries);
        assert!(misses.iter().all(|&m| !m));
        for v in out.data() {
            assert!((v - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn far_query_misses_with_zero_row() {
        let grid = grid_from(&[(0, 0, 0)], Matrix::filled(1, 2, 9.0));
        let (out, misses) = interpolate_features(&grid, &[Coord3::new(10, 10, 10)]);
        assert!(misses[0]);
        assert_eq!(out.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn at_most_eight_neighbors_used() {
        // a dense 5x5x5 block has 124 non-exact candidates for the center
        let coords: Vec<(i32, i32, i32)> = (-2..=2)
            .flat_map(|x| (-2..=2).flat_map(move |y| (-2..=2).map(move |z| (x, y, z))))
            .filter(|&c| c != (0, 0, 0))
            .collect();
        let grid = grid_from(&coords, Matrix::filled(124, 1, 1.0));
        let plan = interpolation_plan(grid.coords(), &[Coord3::new(0, 0, 0)]);
        assert_eq!(plan.mix.entries.len(), MAX_NEIGHBORS);
        // the 6 face neighbors at distance 1 win over diagonal ones
        let d1_count = plan
            .mix
            .entries
            .iter()
            .filter(|&&(_, i, _)| {
                let c = grid.coords()[i];
                c.x.abs() + c.y.abs() + c.z.abs() == 1
            })
            .count();
        assert_eq!(d1_count, 6);
    }
}
