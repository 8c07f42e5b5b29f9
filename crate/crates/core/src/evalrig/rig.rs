//! Simulated three-camera rig looking at a screen.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{camera_score, robustness_score, strength_class, ScoreMode, Strength};
use super::record::EvalRecord;
use crate::bbox::BBox;
use crate::detector::{decode, DetectorModel};
use crate::error::{Error, Result};
use crate::image::ImageRgb;
use crate::renderer::{
    composite, make_mesh, place_patch, project_patch_bbox, render, CameraPose, Intrinsics, Mesh, MeshKind,
    TextureSpec, UvRect, SCREEN_SIDE_M,
};
use crate::renderer::camera::CameraFrame;
use crate::scalar::Real;
use crate::scene::BackgroundSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigGeometry {
    /// Distance between neighbouring cameras, meters.
    pub spacing: f64,
    /// Screen distances, ascending.
    pub distances: Vec<f64>,
    pub intrinsics: Intrinsics,
}

impl Default for RigGeometry {
    fn default() -> Self {
        Self {
            spacing: 0.7,
            distances: vec![1.0, 1.5, 2.0],
            intrinsics: Intrinsics::new(crate::pipeline::DEFAULT_FOV_DEG, 64, 64),
        }
    }
}

impl RigGeometry {
    /// Screen positions at 0.5, 1.0 and 1.5 m.
    pub fn near_preset() -> Self {
        Self {
            distances: vec![0.5, 1.0, 1.5],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing >= 0.0 && self.spacing.is_finite()) {
            return Err(Error::Contract(format!("rig spacing {} must be non-negative", self.spacing)));
        }
        if self.distances.is_empty() || self.distances.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Contract("rig needs positive screen distances".into()));
        }
        if self.distances.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Contract("rig distances must be sorted ascending".into()));
        }
        Ok(())
    }

    /// Left, center and right camera for screen position `index`.
    pub fn poses(&self, index: usize) -> [CameraPose; 3] {
        let center = CameraPose::frontal(self.distances[index], self.intrinsics);
        [center.shifted(-self.spacing), center, center.shifted(self.spacing)]
    }
}

/// Content shown on the screen and where the patch lies in it.
#[derive(Debug, Clone)]
pub struct Display<T> {
    pub image: ImageRgb<T>,
    /// Patch extent in normalized display coordinates.
    pub patch_box: BBox,
}

impl<T: Real> Display<T> {
    /// The patch fills the screen.
    pub fn patch(pixels: &ImageRgb<T>) -> Self {
        Self {
            image: pixels.clone(),
            patch_box: BBox::from_corners(0.0, 0.0, 1.0, 1.0),
        }
    }
}

/// Three camera images of the screen.
#[derive(Debug, Clone)]
pub struct RigCapture<T> {
    pub images: [ImageRgb<T>; 3],
    pub gt: [Option<BBox>; 3],
    /// Whether the patch lies entirely inside each image.
    pub in_frame: [bool; 3],
}

fn screen_point(u: f64, v: f64) -> [f64; 3] {
    [(u - 0.5) * SCREEN_SIDE_M, (0.5 - v) * SCREEN_SIDE_M, 0.0]
}

fn project_box(frame: &CameraFrame, intr: &Intrinsics, b: &BBox) -> (Option<BBox>, bool) {
    let (u0, v0, u1, v1) = b.corners();
    let (w, h) = (intr.width as f64, intr.height as f64);
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut inside = true;
    for (u, v) in [(u0, v0), (u1, v0), (u0, v1), (u1, v1)] {
        let Some((x, y, _)) = frame.project(screen_point(u, v)) else {
            return (None, false);
        };
        inside &= (0.0..=w).contains(&x) && (0.0..=h).contains(&y);
        lo = [lo[0].min(x), lo[1].min(y)];
        hi = [hi[0].max(x), hi[1].max(y)];
    }
    let bbox = BBox::from_corners(lo[0] / w, lo[1] / h, hi[0] / w, hi[1] / h).clamped().ok();
    (bbox, inside && bbox.is_some())
}

/// Renders the display on the screen quad from the three rig cameras and
/// composites each on `background`.
pub fn simulate_rig<T: Real>(
    display: &Display<T>,
    rig: &RigGeometry,
    position: usize,
    background: &ImageRgb<T>,
) -> Result<RigCapture<T>> {
    rig.validate()?;
    if position >= rig.distances.len() {
        return Err(Error::Contract(format!("position {position} not in rig")));
    }
    let screen = make_mesh(MeshKind::Screen);
    let res = display.image.width().max(display.image.height());
    let texture = place_patch(&TextureSpec::new([1.0; 3], UvRect::FULL, res), &display.image);
    let mut images = Vec::with_capacity(3);
    let mut gt = [None; 3];
    let mut in_frame = [false; 3];
    for (i, pose) in rig.poses(position).iter().enumerate() {
        let out = render(&screen, &texture.image, pose);
        images.push(composite(&out, background)?);
        let (b, inside) = project_box(&pose.frame(), &rig.intrinsics, &display.patch_box);
        gt[i] = b;
        in_frame[i] = inside;
    }
    let images: [ImageRgb<T>; 3] = images.try_into().map_err(|_| Error::Contract("three views".into()))?;
    Ok(RigCapture { images, gt, in_frame })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub score_mode: ScoreMode,
    /// Leave sub-threshold scores out of the robustness sum.
    pub strict: bool,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            conf_threshold: 0.01,
            nms_iou: 0.45,
            score_mode: ScoreMode::default(),
            strict: false,
        }
    }
}

/// Identity of what is evaluated, copied into every record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSubject {
    pub patch_id: String,
    pub config_id: String,
    pub method: String,
    pub target: usize,
    pub target_name: String,
    pub mesh_pool: Vec<String>,
    pub seed: u64,
}

/// Scores of one capture.
pub fn score_capture<T: Real>(
    capture: &RigCapture<T>,
    detector: &DetectorModel<T>,
    target: usize,
    params: &EvalParams,
) -> Result<([f64; 3], [bool; 3])> {
    let mut scores = [0.0; 3];
    let mut valid = [false; 3];
    for i in 0..3 {
        if let Some(gt) = capture.gt[i] {
            let dets = decode(&detector.forward(&capture.images[i]), params.conf_threshold, params.nms_iou)?;
            let (s, v) = camera_score(&dets, target, &gt, params.score_mode);
            scores[i] = s;
            valid[i] = v;
        }
    }
    Ok((scores, valid))
}

#[allow(clippy::too_many_arguments)]
fn make_record(
    subject: &EvalSubject,
    rig: &RigGeometry,
    position: usize,
    support: &str,
    rotation: Option<(f64, f64)>,
    scores: [f64; 3],
    valid: [bool; 3],
    in_frame: [bool; 3],
    params: &EvalParams,
) -> EvalRecord {
    let strength: Strength = strength_class(valid);
    EvalRecord {
        patch_id: subject.patch_id.clone(),
        config_id: subject.config_id.clone(),
        method: subject.method.clone(),
        target: subject.target_name.clone(),
        seed: subject.seed,
        mesh_pool: subject.mesh_pool.clone(),
        position,
        distance: rig.distances[position],
        support: support.to_string(),
        azimuth_deg: rotation.map_or(0.0, |r| r.0),
        elevation_deg: rotation.map_or(0.0, |r| r.1),
        scores,
        valid,
        in_frame,
        strength,
        robustness: robustness_score(scores, valid, params.strict),
    }
}

/// Shows `display` at every rig position over the matching background.
pub fn evaluate_display<T: Real>(
    display: &Display<T>,
    detector: &DetectorModel<T>,
    rig: &RigGeometry,
    backgrounds: &[ImageRgb<T>],
    subject: &EvalSubject,
    support: &str,
    rotation: Option<(f64, f64)>,
    params: &EvalParams,
) -> Result<Vec<EvalRecord>> {
    if backgrounds.len() != rig.distances.len() {
        return Err(Error::Contract("one background per rig position expected".into()));
    }
    (0..rig.distances.len())
        .map(|p| {
            let cap = simulate_rig(display, rig, p, &backgrounds[p])?;
            let (scores, valid) = score_capture(&cap, detector, subject.target, params)?;
            Ok(make_record(subject, rig, p, support, rotation, scores, valid, cap.in_frame, params))
        })
        .collect()
}

/// Plain rig evaluation of a patch shown full-screen.
pub fn evaluate_patch<T: Real>(
    pixels: &ImageRgb<T>,
    detector: &DetectorModel<T>,
    rig: &RigGeometry,
    backgrounds: &[ImageRgb<T>],
    subject: &EvalSubject,
    params: &EvalParams,
) -> Result<Vec<EvalRecord>> {
    evaluate_display(&Display::patch(pixels), detector, rig, backgrounds, subject, "screen", None, params)
}

/// RNG stream for evaluation backgrounds, disjoint from the training and
/// validation streams.
pub const RIG_BACKGROUND_STREAM: u64 = u64::MAX - 1;

/// `n` held-out scenes, each one background per rig position.
pub fn held_out_scenes<T: Real>(
    rig: &RigGeometry,
    source: &BackgroundSource,
    n: usize,
    seed: u64,
) -> Vec<Vec<ImageRgb<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(RIG_BACKGROUND_STREAM);
    let (w, h) = (rig.intrinsics.width, rig.intrinsics.height);
    (0..n)
        .map(|_| (0..rig.distances.len()).map(|_| source.sample(w, h, &mut rng)).collect())
        .collect()
}

/// Mean targeted score over every camera, position and scene.
pub fn mean_target_score<T: Real>(
    pixels: &ImageRgb<T>,
    detector: &DetectorModel<T>,
    rig: &RigGeometry,
    scenes: &[Vec<ImageRgb<T>>],
    target: usize,
    params: &EvalParams,
) -> Result<f64> {
    let display = Display::patch(pixels);
    let mut total = 0.0;
    let mut count = 0usize;
    for backgrounds in scenes {
        for (p, bg) in backgrounds.iter().enumerate() {
            let cap = simulate_rig(&display, rig, p, bg)?;
            let (scores, _) = score_capture(&cap, detector, target, params)?;
            total += scores.iter().sum::<f64>();
            count += 3;
        }
    }
    if count == 0 {
        return Err(Error::Contract("no scenes to score".into()));
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultParams {
    /// Azimuth and elevation drawn from `[-max_angle, max_angle]`.
    pub max_angle_deg: f64,
    /// Field of view of the camera rendering the support object.
    pub fov_deg: f64,
}

impl Default for DifficultParams {
    fn default() -> Self {
        Self {
            max_angle_deg: 15.0,
            fov_deg: 40.0,
        }
    }
}

/// Renders the patch on a support object with a random base color, seen
/// from `(azimuth, elevation)` by a camera that frames the patch region
/// exactly at zero rotation. The render sits on white.
pub fn support_display<T: Real>(
    pixels: &ImageRgb<T>,
    support: &Mesh,
    base_color: [f64; 3],
    angles: (f64, f64),
    fov_deg: f64,
) -> Result<Display<T>> {
    let size = pixels.width().max(pixels.height());
    let intr = Intrinsics::new(fov_deg, size, size);
    let side = crate::renderer::PATCH_SIDE_M;
    let distance = 0.5 * side / intr.half_fov_tan();
    let pose = CameraPose {
        azimuth_deg: angles.0,
        elevation_deg: angles.1,
        ..CameraPose::frontal(distance, intr)
    };
    let tex_res = crate::pipeline::texture_resolution(size, support);
    let texture = place_patch(&TextureSpec::new(base_color, support.placement, tex_res), pixels);
    let out = render(support, &texture.image, &pose);
    let white = ImageRgb::filled(size, size, [T::one(); 3]);
    let image = composite(&out, &white)?;
    let patch_box = project_patch_bbox(support, &support.placement, &pose)?;
    Ok(Display { image, patch_box })
}

/// Draws `n_rotations` small random rotations of the patch on `support`
/// and evaluates each at every rig position.
#[allow(clippy::too_many_arguments)]
pub fn difficult_eval<T: Real>(
    pixels: &ImageRgb<T>,
    support_kind: MeshKind,
    n_rotations: usize,
    rig: &RigGeometry,
    detector: &DetectorModel<T>,
    backgrounds: &[ImageRgb<T>],
    subject: &EvalSubject,
    difficult: &DifficultParams,
    params: &EvalParams,
    rng: &mut impl Rng,
) -> Result<Vec<EvalRecord>> {
    if !matches!(support_kind, MeshKind::Billboard | MeshKind::Sign | MeshKind::Tshirt) {
        return Err(Error::Contract(format!(
            "support object must be billboard, sign or tshirt, got {}",
            support_kind.name()
        )));
    }
    let mesh = make_mesh(support_kind);
    let a = difficult.max_angle_deg;
    let mut records = Vec::new();
    for _ in 0..n_rotations {
        let color: [f64; 3] = rng.random();
        let angles = if a > 0.0 {
            (rng.random_range(-a..=a), rng.random_range(-a..=a))
        } else {
            (0.0, 0.0)
        };
        let display = support_display(pixels, &mesh, color, angles, difficult.fov_deg)?;
        records.extend(evaluate_display(
            &display,
            detector,
            rig,
            backgrounds,
            subject,
            support_kind.name(),
            Some(angles),
            params,
        )?);
    }
    Ok(records)
}
