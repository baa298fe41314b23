//! Text-guided sparse-voxel 3D visual grounding.
//!
//! A three-level sparse convolutional pipeline locates the object described
//! by a short phrase inside a synthetic point-cloud scene. Voxel features
//! are fused with text tokens, progressively pruned under text guidance,
//! and over-pruned regions are restored by completion before an anchor-free
//! head regresses the target box. A bundled harness generates scenes,
//! trains, evaluates, ablates and profiles the whole thing on a CPU.

pub mod autodiff;
pub mod cba;
pub mod error;
pub mod harness;
pub mod head;
pub mod matrix;
pub mod pipeline;
pub mod sparse;
pub mod text;
pub mod tgp;

pub use error::{Error, Result};
pub use matrix::Matrix;
