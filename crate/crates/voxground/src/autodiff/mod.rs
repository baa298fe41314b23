//! Minimal reverse-mode differentiation: a record/replay tape over dense
//! matrices, a named parameter store, Adam, finite-difference gradient
//! checking and binary checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod store;
pub mod tape;

pub use gradcheck::{grad_check, GradCheckReport, TensorCheck};
pub use optim::{adam_step, AdamConfig, AdamMoments};
pub use store::{ParamStore, ParamTensor};
pub use tape::{NodeId, RowMixPlan, Tape};
