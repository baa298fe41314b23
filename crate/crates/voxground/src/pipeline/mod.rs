//! Pipeline composition: configuration, parameters, model forwards and
//! the training loop.

pub mod config;
pub mod model;
pub mod params;
pub mod train;

pub use config::{AdditionMode, FusionMode, ModelConfig};
pub use model::{
    backbone, backbone_t, forward, forward_baseline, forward_tsp3d, infer, CbaAux, DGrid,
    ForwardOut, ForwardTrace, TgpAux,
};
pub use params::init_params;
pub use train::{build_loss, grad_check_full, train_step, LossReport, CLASS_FOCAL_ALPHA, FOCAL_ALPHA, FOCAL_GAMMA};
