//! Run specification.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::detector::DetectorLossWeights;
use crate::error::{Error, Result};
use crate::image::MaskShape;
use crate::objective::Regularization;
use crate::renderer::{Intrinsics, PoseRanges};
use crate::target::TargetClass;
use crate::transforms::{AffineRanges, FilterKind, FilterRanges, Method, TransformConfig};

/// Default vertical field of view of every camera, degrees.
pub const DEFAULT_FOV_DEG: f64 = 90.0;

pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
pub const DESK_LEARNING_RATE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub method: Method,
    pub config: TransformConfig,
    pub target: TargetClass,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Scenes per gradient step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub regularization: Regularization,
    pub detector_loss_weights: DetectorLossWeights,
    /// Directory of PNG backgrounds; procedural scenes when absent.
    pub backgrounds: Option<PathBuf>,
    pub patch_size: usize,
    pub mask: MaskShape,
    /// Side of the rendered/composited training image.
    pub image_size: usize,
    pub fov_deg: f64,
    pub filter_ranges: FilterRanges,
    pub affine_ranges: AffineRanges,
    /// Camera sampling ranges; the standard ranges for the intrinsics when absent.
    pub pose_ranges: Option<PoseRanges>,
    /// Fixed texture base color; random per scene when absent.
    pub texture_color: Option<[f64; 3]>,
    /// Fraction of planned scenes that may be skipped before aborting.
    pub max_skip_fraction: f64,
    /// Standard deviation of the initial logits.
    pub init_logit_scale: f64,
}

impl RunSpec {
    pub fn new(config: TransformConfig, target: TargetClass, seed: u64) -> Self {
        Self {
            method: config.method,
            epochs: config.method.default_epochs(),
            config,
            target,
            steps_per_epoch: 100,
            batch_size: 8,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed,
            regularization: Regularization::default(),
            detector_loss_weights: DetectorLossWeights::default(),
            backgrounds: None,
            patch_size: crate::patch::DEFAULT_PATCH_SIZE,
            mask: MaskShape::Full,
            image_size: 64,
            fov_deg: DEFAULT_FOV_DEG,
            filter_ranges: FilterRanges::default(),
            affine_ranges: AffineRanges::default(),
            pose_ranges: None,
            texture_color: None,
            max_skip_fraction: 0.1,
            init_logit_scale: 0.1,
        }
    }

    /// Small patch and 300 steps. The step size grows with the shorter
    /// schedule.
    pub fn desk(config: TransformConfig, target: TargetClass, seed: u64) -> Self {
        Self {
            patch_size: 64,
            epochs: 3,
            learning_rate: DESK_LEARNING_RATE,
            ..Self::new(config, target, seed)
        }
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::new(self.fov_deg, self.image_size, self.image_size)
    }

    pub fn effective_pose_ranges(&self) -> PoseRanges {
        self.pose_ranges.unwrap_or_else(|| PoseRanges::standard(&self.intrinsics()))
    }

    /// Filter names in application order, for run metadata.
    pub fn filter_order(&self) -> Vec<&'static str> {
        FilterKind::CANONICAL_ORDER
            .iter()
            .filter(|k| self.config.filters.contains(k))
            .map(|k| k.name())
            .collect()
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Contract(m));
        if self.method != self.config.method {
            return fail(format!(
                "run method {} does not match config method {}",
                self.method.name(),
                self.config.method.name()
            ));
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return fail("epochs, steps per epoch and batch size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.target.id >= num_classes {
            return fail(format!("target class {} not known to the detector", self.target.name));
        }
        if self.patch_size == 0 || self.image_size < 8 {
            return fail("patch and image sizes too small".into());
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return fail(format!("field of view {} out of (0, 180)", self.fov_deg));
        }
        if !self.effective_pose_ranges().is_valid() {
            return fail("invalid pose ranges".into());
        }
        if !(0.0..=1.0).contains(&self.max_skip_fraction) {
            return fail("max skip fraction must lie in [0, 1]".into());
        }
        self.regularization.weights.validate()
    }
}
