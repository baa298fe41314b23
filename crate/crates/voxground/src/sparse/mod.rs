//! Sparse voxel tensor representation and geometric primitives.

pub mod conv;
pub mod fps;
pub mod grid;
pub mod interp;

pub use conv::{
    apply_kernel_map, apply_kernel_map_t, downsample_plan, generative_upsample, residual_block,
    sparse_conv, submanifold_kernel_map, upsample_plan, KernelMap, ResidualBlockWeights,
};
pub use fps::{farthest_point_sample, FpsSample};
pub use grid::{
    coord_align_mask, level_for_voxel_size, level_voxel_size, prune, voxelize, Coord3,
    SparseGrid, VoxelMask,
};
pub use interp::{interpolate_features, interpolate_t, interpolation_plan, InterpPlan};
