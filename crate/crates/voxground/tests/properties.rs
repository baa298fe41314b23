//! Property tests over the sparse-core invariants.

use proptest::prelude::*;

use voxground::matrix::Matrix;
use voxground::sparse::{
    interpolation_plan, prune, sparse_conv, voxelize, Coord3, SparseGrid, VoxelMask,
};

fn arb_points(max_n: usize) -> impl Strategy<Value = Vec<[f64; 6]>> {
    prop::collection::vec(
        (
            -0.5f64..0.5,
            -0.5f64..0.5,
            -0.5f64..0.5,
            0.0f64..1.0,
            0.0f64..1.0,
            0.0f64..1.0,
        )
            .prop_map(|(x, y, z, r, g, b)| [x, y, z, r, g, b]),
        1..max_n,
    )
}

fn to_matrix(points: &[[f64; 6]]) -> Matrix {
    Matrix::from_vec(points.len(), 6, points.concat()).unwrap()
}

fn arb_grid() -> impl Strategy<Value = SparseGrid> {
    (
        prop::collection::btree_set((-6i32..6, -6i32..6, -6i32..6), 1..24),
        2u32..5,
    )
        .prop_map(|(cells, seed)| {
            let coords: Vec<Coord3> =
                cells.into_iter().map(|(x, y, z)| Coord3::new(x, y, z)).collect();
            let n = coords.len();
            let data = (0..n * 3)
                .map(|i| ((i as f64 + f64::from(seed)) * 0.739).sin())
                .collect();
            SparseGrid::new(coords, Matrix::from_vec(n, 3, data).unwrap(), 1, 0.08).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn voxelize_is_permutation_invariant(points in arb_points(40), shift in 0usize..40) {
        let base = to_matrix(&points);
        let mut rotated = points.clone();
        rotated.rotate_left(shift % points.len());
        let swapped = to_matrix(&rotated);
        let a = voxelize(&base, 0.1).unwrap();
        let b = voxelize(&swapped, 0.1).unwrap();
        // bit-identical coordinates and features, any input order
        prop_assert_eq!(a, b);
    }

    #[test]
    fn prune_composition_equals_composed_mask(grid in arb_grid(), bits1 in prop::collection::vec(any::<bool>(), 24), bits2 in prop::collection::vec(any::<bool>(), 24)) {
        let n = grid.len();
        let m1 = VoxelMask::from_bools(&bits1[..n]);
        let once = prune(&grid, &m1).unwrap();
        let kept: Vec<usize> = m1.kept_indices();
        let m2_inner = VoxelMask::from_bools(
            &kept.iter().map(|&i| bits2[i]).collect::<Vec<_>>(),
        );
        let twice = prune(&once, &m2_inner).unwrap();
        // composed mask applied once
        let composed = VoxelMask::from_bools(
            &(0..n).map(|i| bits1[i] && bits2[i]).collect::<Vec<_>>(),
        );
        let direct = prune(&grid, &composed).unwrap();
        prop_assert_eq!(twice, direct);
    }

    #[test]
    fn submanifold_conv_is_linear(grid in arb_grid(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
        let n = grid.len();
        let other_data: Vec<f64> = (0..n * 3).map(|i| ((i as f64) * 1.313).cos()).collect();
        let other = grid.with_feats(Matrix::from_vec(n, 3, other_data).unwrap()).unwrap();
        let mut weights = Matrix::zeros(27 * 3, 2);
        for (i, v) in weights.data_mut().iter_mut().enumerate() {
            *v = ((i * 29 % 13) as f64 - 6.0) * 0.1;
        }
        let lhs = {
            let combined = grid.feats().scale(alpha).add(&other.feats().scale(beta)).unwrap();
            sparse_conv(&grid.with_feats(combined).unwrap(), &weights, 1).unwrap()
        };
        let rhs = {
            let a = sparse_conv(&grid, &weights, 1).unwrap();
            let b = sparse_conv(&other, &weights, 1).unwrap();
            a.feats().scale(alpha).add(&b.feats().scale(beta)).unwrap()
        };
        for (x, y) in lhs.feats().data().iter().zip(rhs.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn interpolation_weights_are_convex(grid in arb_grid(), qx in -6i32..6, qy in -6i32..6, qz in -6i32..6) {
        let q = Coord3::new(qx, qy, qz);
        let plan = interpolation_plan(grid.coords(), &[q]);
        let total: f64 = plan.mix.entries.iter().map(|&(_, _, w)| w).sum();
        if plan.misses[0] {
            prop_assert_eq!(plan.mix.entries.len(), 0);
        } else {
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(plan.mix.entries.iter().all(|&(_, _, w)| w > 0.0));
            prop_assert!(plan.mix.entries.len() <= 8);
        }
    }
}
