//! Optimization drivers for the 2D baseline, the rendered pipeline and its
//! three-camera variant.

pub mod run;
pub mod scenes;
pub mod spec;
pub mod validate;

pub use run::{
    optimize, step_rng, ABORT_FILE, PATCH_DIR, REPORT_FILE, STATE_FILE, step_shapeshifter, step_transcender, step_transcender_mc, Optimizer, RunOutput,
    RunReport, RunState, StepRecord,
};
pub use scenes::{choose_mesh, texture_resolution, SceneInfo, SceneSampler};
pub use spec::{RunSpec, DEFAULT_FOV_DEG, DEFAULT_LEARNING_RATE, DESK_LEARNING_RATE};
pub use validate::{validate_patch, validation_spec, ValidationReport, VALIDATION_STREAM};
