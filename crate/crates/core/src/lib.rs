//! Physical adversarial patch generation against one-stage object detectors
//! with expectation over transformation, differentiable rendering and a
//! three-camera training augmentation, plus a simulated multi-camera rig
//! for evaluation.
//!
//! Numeric code is generic over [`Real`]; the aliases below fix the common
//! instantiations.

pub mod bbox;
pub mod detector;
pub mod error;
pub mod evalrig;
pub mod image;
pub mod objective;
pub mod optim;
pub mod patch;
pub mod pipeline;
pub mod renderer;
pub mod scalar;
pub mod scene;
pub mod target;
pub mod transforms;

pub use bbox::BBox;
pub use detector::{Detection, DetectorModel, RawGridPrediction};
pub use error::{Error, Result};
pub use image::{make_mask, ImageRgb, Mask, MaskShape, SampleMap};
pub use patch::{Patch, PatchMeta};
pub use scalar::Real;
pub use target::{toy_classes, GroundTruth, TargetClass};

pub type Image32 = ImageRgb<f32>;
pub type Image64 = ImageRgb<f64>;
pub type Patch32 = Patch<f32>;
pub type Patch64 = Patch<f64>;
pub type Detector32 = DetectorModel<f32>;
pub type Detector64 = DetectorModel<f64>;
