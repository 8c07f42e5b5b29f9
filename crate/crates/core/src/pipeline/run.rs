//! Step functions, resumable run state and the optimization driver.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenes::{SceneInfo, SceneSampler};
use super::spec::RunSpec;
use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::image::{make_mask, Mask};
use crate::objective::{total_objective, ObjectiveValue, Scene};
use crate::optim::Adam;
use crate::patch::{save_patch, Patch, PatchMeta};
use crate::scalar::Real;
use crate::transforms::Method;

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub seed: u64,
    /// Steps executed so far; also selects the per-step random stream.
    pub step: usize,
    pub width: usize,
    pub height: usize,
    pub logits: Vec<f64>,
    pub optimizer: Adam,
    pub loss_trace: Vec<f64>,
    pub attempted_scenes: usize,
    pub skipped_scenes: usize,
}

impl RunState {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Per-step random stream: deterministic in `(seed, step)`.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub loss: f64,
    pub detection: f64,
    pub views: usize,
    pub skipped: usize,
    pub scenes: Vec<SceneInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub spec: RunSpec,
    pub config_record: String,
    pub filter_order: Vec<String>,
    pub optimizer: String,
    pub steps_executed: usize,
    pub attempted_scenes: usize,
    pub skipped_scenes: usize,
    pub loss_trace: Vec<f64>,
    pub wall_seconds: f64,
    pub detector_weights_hash: String,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput<T> {
    pub patch: Patch<T>,
    pub state: RunState,
    pub report: RunReport,
}

/// Holds the immutable parts of a run and executes steps.
pub struct Optimizer<'d, T> {
    pub spec: RunSpec,
    pub sampler: SceneSampler,
    pub mask: Mask,
    pub detector: &'d DetectorModel<T>,
}

impl<'d, T: Real> Optimizer<'d, T> {
    pub fn new(spec: &RunSpec, detector: &'d DetectorModel<T>) -> Result<Self> {
        spec.validate(detector.num_classes())?;
        let mask = make_mask(&spec.mask, spec.patch_size, spec.patch_size)?;
        Ok(Self {
            spec: spec.clone(),
            sampler: SceneSampler::new(spec, detector.num_classes())?,
            mask,
            detector,
        })
    }

    pub fn init_state(&self) -> RunState {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ 0x1a7c_4e55);
        let patch = Patch::<f64>::random(self.mask.clone(), self.spec.init_logit_scale, &mut rng);
        let logits = patch.logits().to_vec();
        RunState {
            seed: self.spec.seed,
            step: 0,
            width: self.spec.patch_size,
            height: self.spec.patch_size,
            optimizer: Adam::new(self.spec.learning_rate, logits.len()),
            logits,
            loss_trace: Vec::new(),
            attempted_scenes: 0,
            skipped_scenes: 0,
        }
    }

    pub fn patch(&self, state: &RunState) -> Result<Patch<T>> {
        Patch::from_logits(self.mask.clone(), state.logits.iter().map(|&v| T::lit(v)).collect())
    }

    /// Samples the mini-batch of step `state.step` without updating.
    pub fn sample_batch(&self, state: &RunState, gamma: Option<f64>) -> Result<(Vec<Scene<T>>, Vec<SceneInfo>, usize)> {
        let pixels = self.patch(state)?.pixels();
        let mut rng = step_rng(state.seed, state.step);
        let mut scenes = Vec::with_capacity(self.spec.batch_size);
        let mut infos = Vec::with_capacity(self.spec.batch_size);
        let mut skipped = 0;
        for _ in 0..self.spec.batch_size {
            match self.sampler.sample(&pixels, &mut rng, gamma)? {
                Some((scene, info)) => {
                    scenes.push(scene);
                    infos.push(info);
                }
                None => skipped += 1,
            }
        }
        Ok((scenes, infos, skipped))
    }

    pub fn objective(&self, state: &RunState, scenes: &[Scene<T>]) -> Result<ObjectiveValue<T>> {
        total_objective(
            &self.patch(state)?,
            scenes,
            self.detector,
            &self.spec.regularization,
            &self.spec.detector_loss_weights,
        )
    }

    /// One gradient step; `gamma` pins the multi-camera spacing.
    pub fn step_with(&self, state: &mut RunState, gamma: Option<f64>) -> Result<StepRecord> {
        let (scenes, infos, skipped) = self.sample_batch(state, gamma)?;
        state.attempted_scenes += self.spec.batch_size;
        state.skipped_scenes += skipped;
        let budget = self.spec.max_skip_fraction * (self.spec.total_steps() * self.spec.batch_size) as f64;
        if state.skipped_scenes as f64 > budget {
            return Err(Error::Aborted(format!(
                "{} of {} scenes skipped (cap {:.0}%): the patch leaves the image too often; \
                 check pose ranges, image size and field of view",
                state.skipped_scenes,
                state.attempted_scenes,
                100.0 * self.spec.max_skip_fraction
            )));
        }
        if scenes.is_empty() {
            let last = state.loss_trace.last().copied().unwrap_or(0.0);
            state.loss_trace.push(last);
            state.step += 1;
            return Ok(StepRecord {
                loss: last,
                detection: last,
                views: 0,
                skipped,
                scenes: infos,
            });
        }
        let value = self.objective(state, &scenes)?;
        let loss = value.total.to_f64_lossy();
        if !loss.is_finite() || value.grad_logits.iter().any(|g| !g.is_finite()) {
            return Err(Error::Aborted(format!(
                "non-finite loss or gradient at step {} (loss {loss}, detection {}, tv {}, nps {})",
                state.step, value.detection, value.tv, value.nps
            )));
        }
        let grad: Vec<f64> = value.grad_logits.iter().map(|g| g.to_f64_lossy()).collect();
        state.optimizer.step(&mut [&mut state.logits], &[&grad]);
        state.loss_trace.push(loss);
        state.step += 1;
        Ok(StepRecord {
            loss,
            detection: value.detection.to_f64_lossy(),
            views: value.view_losses.len(),
            skipped,
            scenes: infos,
        })
    }

    pub fn step(&self, state: &mut RunState) -> Result<StepRecord> {
        self.step_with(state, None)
    }
}

fn require(opt: &Optimizer<'_, impl Real>, method: Method) -> Result<()> {
    if opt.spec.method != method {
        return Err(Error::Contract(format!(
            "{} step called on a {} run",
            method.name(),
            opt.spec.method.name()
        )));
    }
    Ok(())
}

/// 2D affine placement on a background.
pub fn step_shapeshifter<T: Real>(opt: &Optimizer<'_, T>, state: &mut RunState) -> Result<StepRecord> {
    require(opt, Method::ShapeShifter)?;
    opt.step(state)
}

/// One rendered view per scene.
pub fn step_transcender<T: Real>(opt: &Optimizer<'_, T>, state: &mut RunState) -> Result<StepRecord> {
    require(opt, Method::Transcender)?;
    opt.step(state)
}

/// Three rendered views per scene from a left/center/right rig.
pub fn step_transcender_mc<T: Real>(opt: &Optimizer<'_, T>, state: &mut RunState) -> Result<StepRecord> {
    require(opt, Method::TranscenderMc)?;
    opt.step(state)
}

pub const PATCH_DIR: &str = "patch";
pub const STATE_FILE: &str = "run_state.json";
pub const REPORT_FILE: &str = "run_report.json";
pub const ABORT_FILE: &str = "abort_state.json";

/// Runs the remaining steps of `resume` (or a fresh run). With `out_dir`,
/// writes the patch, state and report there; on abort the last good state
/// is written as a diagnostic snapshot.
pub fn optimize<T: Real>(
    spec: &RunSpec,
    detector: &DetectorModel<T>,
    resume: Option<RunState>,
    out_dir: Option<&Path>,
) -> Result<RunOutput<T>> {
    let start = Instant::now();
    let opt = Optimizer::new(spec, detector)?;
    let mut state = match resume {
        Some(s) => {
            if s.logits.len() != spec.patch_size * spec.patch_size * 3 || s.seed != spec.seed {
                return Err(Error::Input("resume state does not match the run spec".into()));
            }
            s
        }
        None => opt.init_state(),
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    while state.step < spec.total_steps() {
        let before = state.clone();
        if let Err(e) = opt.step(&mut state) {
            if let Some(dir) = out_dir {
                before.save(&dir.join(ABORT_FILE))?;
            }
            return Err(e);
        }
        if state.step % spec.steps_per_epoch == 0 {
            log::info!(
                "{} epoch {}/{}: loss {:.4}",
                spec.method.name(),
                state.step / spec.steps_per_epoch,
                spec.epochs,
                state.loss_trace.last().copied().unwrap_or(f64::NAN)
            );
        }
    }
    let patch = opt.patch(&state)?;
    let mut artifacts = BTreeMap::new();
    if let Some(dir) = out_dir {
        let meta = PatchMeta {
            seed: spec.seed,
            method: spec.method.name().into(),
            config_id: spec.config.config_id.clone(),
            target: spec.target.name.clone(),
            width: spec.patch_size,
            height: spec.patch_size,
        };
        save_patch(&patch, &meta, &dir.join(PATCH_DIR))?;
        state.save(&dir.join(STATE_FILE))?;
        artifacts.insert("patch".into(), PATCH_DIR.into());
        artifacts.insert("state".into(), STATE_FILE.into());
        artifacts.insert("report".into(), REPORT_FILE.into());
    }
    let report = RunReport {
        spec: spec.clone(),
        config_record: spec.config.record(),
        filter_order: spec.filter_order().into_iter().map(String::from).collect(),
        optimizer: format!("adam(lr={}, beta1=0.9, beta2=0.999)", spec.learning_rate),
        steps_executed: state.step,
        attempted_scenes: state.attempted_scenes,
        skipped_scenes: state.skipped_scenes,
        loss_trace: state.loss_trace.clone(),
        wall_seconds: start.elapsed().as_secs_f64(),
        detector_weights_hash: detector.weights_hash(),
        artifacts,
    };
    if let Some(dir) = out_dir {
        let path = dir.join(REPORT_FILE);
        let json = serde_json::to_vec_pretty(&report)?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    }
    Ok(RunOutput { patch, state, report })
}
