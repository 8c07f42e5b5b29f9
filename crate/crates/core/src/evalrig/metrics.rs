//! Per-camera success, attack strength and the multi-camera robustness score.

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::detector::Detection;

/// A camera counts as fooled above this score.
pub const SUCCESS_THRESHOLD: f64 = 0.5;
/// Minimum IoU between a detection and the patch box.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Objectness times the target-class probability.
    #[default]
    ObjectnessTimesClass,
    ObjectnessOnly,
}

/// Best target score among detections overlapping `gt_box`, and whether it
/// clears [`SUCCESS_THRESHOLD`].
pub fn camera_score(detections: &[Detection], target: usize, gt_box: &BBox, mode: ScoreMode) -> (f64, bool) {
    let score = detections
        .iter()
        .filter(|d| d.bbox.iou(gt_box) >= MATCH_IOU)
        .map(|d| match mode {
            ScoreMode::ObjectnessTimesClass => d.score(target),
            ScoreMode::ObjectnessOnly => d.objectness,
        })
        .fold(0.0, f64::max);
    (score, score > SUCCESS_THRESHOLD)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strength {
    Strong,
    Weak,
    Single,
    Failed,
}

impl Strength {
    pub const ALL: [Strength; 4] = [Strength::Strong, Strength::Weak, Strength::Single, Strength::Failed];

    pub fn name(self) -> &'static str {
        match self {
            Strength::Strong => "strong",
            Strength::Weak => "weak",
            Strength::Single => "single",
            Strength::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_working(self) -> bool {
        self != Strength::Failed
    }
}

pub fn strength_class(valid: [bool; 3]) -> Strength {
    match valid.iter().filter(|&&v| v).count() {
        3 => Strength::Strong,
        2 => Strength::Weak,
        1 => Strength::Single,
        _ => Strength::Failed,
    }
}

/// `n_valid × Σ s_i`. In strict mode scores of cameras that were not
/// fooled are left out of the sum.
pub fn robustness_score(scores: [f64; 3], valid: [bool; 3], strict: bool) -> f64 {
    let n = valid.iter().filter(|&&v| v).count() as f64;
    let sum: f64 = scores
        .iter()
        .zip(valid)
        .map(|(&s, v)| if strict && !v { 0.0 } else { s })
        .sum();
    n * sum
}
