//! Held-out validation of a patch on clean three-camera renders.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenes::SceneSampler;
use super::spec::RunSpec;
use crate::detector::{decode, DetectorModel};
use crate::error::{Error, Result};
use crate::evalrig::{camera_score, EvalParams};
use crate::image::ImageRgb;
use crate::renderer::MeshKind;
use crate::scalar::Real;
use crate::transforms::{Method, TransformConfig};

/// RNG stream reserved for validation scenes; training steps use streams
/// `0..total_steps`.
pub const VALIDATION_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Mean targeted score over every camera of every scene.
    pub mean_score: f64,
    /// Per scene, the left/center/right scores.
    pub scene_scores: Vec<[f64; 3]>,
    /// Scenes drawn and rejected (off-frame) before `n` were accepted.
    pub rejected: usize,
}

/// Scene distribution used for validation: the run's geometry and mesh
/// pool, three cameras, no image filters. The 2D baseline is validated on
/// the billboard.
pub fn validation_spec(spec: &RunSpec) -> Result<RunSpec> {
    let pool = if spec.config.mesh_pool.is_empty() {
        BTreeSet::from([MeshKind::Billboard])
    } else {
        spec.config.mesh_pool.clone()
    };
    let config = TransformConfig::new(Method::TranscenderMc, BTreeSet::new(), BTreeSet::new(), pool)?;
    Ok(RunSpec {
        method: Method::TranscenderMc,
        config,
        ..spec.clone()
    })
}

/// Scores `pixels` on `n` held-out scenes drawn with `seed`.
pub fn validate_patch<T: Real>(
    spec: &RunSpec,
    detector: &DetectorModel<T>,
    pixels: &ImageRgb<T>,
    n: usize,
    seed: u64,
    params: &EvalParams,
) -> Result<ValidationReport> {
    let vspec = validation_spec(spec)?;
    let sampler = SceneSampler::new(&vspec, detector.num_classes())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(VALIDATION_STREAM);
    let mut scene_scores = Vec::with_capacity(n);
    let mut rejected = 0;
    while scene_scores.len() < n {
        if rejected > 10 * n.max(1) {
            return Err(Error::Aborted("validation scenes keep leaving the frame".into()));
        }
        let Some((scene, _)) = sampler.sample(pixels, &mut rng, None)? else {
            rejected += 1;
            continue;
        };
        let mut scores = [0.0; 3];
        for (s, view) in scores.iter_mut().zip(&scene.views) {
            let dets = decode(&detector.forward(&view.image), params.conf_threshold, params.nms_iou)?;
            *s = camera_score(&dets, view.gt.target_class, &view.gt.bbox, params.score_mode).0;
        }
        scene_scores.push(scores);
    }
    let total: f64 = scene_scores.iter().flatten().sum();
    let mean_score = if n == 0 { 0.0 } else { total / (3 * n) as f64 };
    Ok(ValidationReport {
        mean_score,
        scene_scores,
        rejected,
    })
}
