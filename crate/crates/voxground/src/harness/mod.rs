//! Synthetic-scene harness: generation, dataset IO, metrics, profiling
//! and the ablation driver.

pub mod ablate;
pub mod dataset;
pub mod metrics;
pub mod profile;
pub mod scene;

pub use ablate::{component_configs, format_table, run_ablation, write_ablation_csv, AblationRow};
pub use dataset::{read_dataset, read_scene, write_dataset, write_scene};
pub use metrics::{evaluate, EvalReport};
pub use profile::{profile, write_profile_csv, write_prune_csv, ProfileReport, ProfileRow};
pub use scene::{generate_dataset, generate_scene, GroundingSample, SceneObject, SceneSpec};
