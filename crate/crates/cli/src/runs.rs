//! Single runs: detector checkpoints, optimization and evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use transcender::detector::{load_checkpoint, save_checkpoint, train_from_params, DetectorConfig, TrainParams};
use transcender::evalrig::{difficult_eval, evaluate_patch, held_out_scenes, DifficultParams, EvalRecord, EvalSubject, RigGeometry};
use transcender::pipeline::{optimize, RunOutput, RunSpec, RunState, STATE_FILE};
use transcender::renderer::MeshKind;
use transcender::scene::BackgroundSource;
use transcender::transforms::{Method, TransformConfig};
use transcender::{DetectorModel, ImageRgb, TargetClass};

use crate::error::{io_err, CliError, CliResult};
use crate::experiment::{EvaluationSection, Preset, RigSection, RunOverrides};

pub const TRAIN_REPORT_FILE: &str = "train_report.json";
/// Written once a run's records are on disk.
pub const DONE_FILE: &str = "DONE";
pub const FAILED_FILE: &str = "FAILED";
pub const RUN_RECORDS_FILE: &str = "records.csv";

/// Stream for the colors and angles of difficult-mode renders.
const DIFFICULT_STREAM: u64 = u64::MAX - 2;

/// Loads the checkpoint at `path`, training and saving it first when missing.
pub fn load_or_train_detector(path: &Path, params: &TrainParams) -> CliResult<DetectorModel<f32>> {
    if path.exists() {
        return Ok(load_checkpoint(path)?);
    }
    log::info!("no detector at {}; training one (seed {})", path.display(), params.seed);
    train_detector(path, params)
}

pub fn train_detector(path: &Path, params: &TrainParams) -> CliResult<DetectorModel<f32>> {
    let (model, report) = train_from_params(DetectorConfig::default(), params)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    save_checkpoint(&model, path)?;
    let report_path = path.with_file_name(TRAIN_REPORT_FILE);
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(&report_path, json).map_err(|e| io_err(&report_path, e))?;
    log::info!("detector mAP@0.5 {:.3}, per class {:?}", report.map, report.per_class_ap);
    Ok(model)
}

pub fn slug(name: &str) -> String {
    name.to_lowercase().replace([' ', '-'], "_")
}

/// One cell of a sweep.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RunKey {
    pub method: Method,
    pub target: String,
    pub config_id: String,
    pub seed: u64,
}

impl RunKey {
    /// Relative run directory, also used as the patch id.
    pub fn patch_id(&self) -> String {
        format!("{}/{}/{}/seed_{}", self.method.name(), slug(&self.target), self.config_id, self.seed)
    }
}

/// The run specification of a preset with overrides applied.
pub fn build_run_spec(
    config: TransformConfig,
    target: TargetClass,
    seed: u64,
    preset: Preset,
    overrides: &RunOverrides,
    rig: &RigSection,
) -> RunSpec {
    let mut spec = match preset {
        Preset::Full => RunSpec::new(config, target, seed),
        Preset::Desk => RunSpec::desk(config, target, seed),
    };
    spec.image_size = rig.image_size;
    spec.fov_deg = rig.fov_deg;
    if let Some(v) = overrides.epochs {
        spec.epochs = v;
    }
    if let Some(v) = overrides.steps_per_epoch {
        spec.steps_per_epoch = v;
    }
    if let Some(v) = overrides.batch_size {
        spec.batch_size = v;
    }
    if let Some(v) = overrides.learning_rate {
        spec.learning_rate = v;
    }
    if let Some(v) = overrides.patch_size {
        spec.patch_size = v;
    }
    if let Some(v) = &overrides.backgrounds {
        spec.backgrounds = Some(v.clone());
    }
    spec
}

/// Optimizes into `dir`, resuming from a saved state when one is present.
pub fn optimize_into(spec: &RunSpec, detector: &DetectorModel<f32>, dir: &Path) -> CliResult<RunOutput<f32>> {
    let state_path = dir.join(STATE_FILE);
    let resume = if state_path.exists() {
        Some(RunState::load(&state_path)?)
    } else {
        None
    };
    Ok(optimize(spec, detector, resume, Some(dir))?)
}

pub fn background_source(path: Option<&PathBuf>) -> CliResult<BackgroundSource> {
    Ok(match path {
        Some(dir) => BackgroundSource::from_dir(dir)?,
        None => BackgroundSource::Procedural,
    })
}

/// Rig and difficult-mode records of one patch. Backgrounds and random
/// angles derive from `seed` on streams disjoint from training.
pub fn evaluate_run(
    pixels: &ImageRgb<f32>,
    detector: &DetectorModel<f32>,
    subject: &EvalSubject,
    rig: &RigGeometry,
    eval: &EvaluationSection,
    backgrounds: &BackgroundSource,
    seed: u64,
) -> CliResult<Vec<EvalRecord>> {
    let params = eval.params();
    let scene = held_out_scenes::<f32>(rig, backgrounds, 1, seed).remove(0);
    let mut records = Vec::new();
    if eval.rig {
        records.extend(evaluate_patch(pixels, detector, rig, &scene, subject, &params)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DIFFICULT_STREAM);
    for support in eval.supports()? {
        records.extend(difficult_eval(
            pixels,
            support,
            eval.rotations,
            rig,
            detector,
            &scene,
            subject,
            &DifficultParams::default(),
            &params,
            &mut rng,
        )?);
    }
    Ok(records)
}

pub fn mesh_pool_names(config: &TransformConfig) -> Vec<String> {
    config.mesh_pool.iter().map(|m: &MeshKind| m.name().to_string()).collect()
}
