//! 2D affine placement of the patch onto a background canvas (the
//! ShapeShifter-style transformation family).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::image::{bilinear_taps, ImageRgb, SampleMap};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffineKind {
    Resize,
    Translate,
    Rotate,
    Shear,
}

impl AffineKind {
    pub fn name(self) -> &'static str {
        match self {
            AffineKind::Resize => "resize",
            AffineKind::Translate => "translate",
            AffineKind::Rotate => "rotate",
            AffineKind::Shear => "shear",
        }
    }
}

/// Affine parameter ranges. Resize bounds are pixel extents on a canvas of
/// `reference_size` and scale proportionally with the actual canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineRanges {
    pub height_px: (f64, f64),
    pub width_px: (f64, f64),
    pub reference_size: f64,
    pub rotate_deg: (f64, f64),
    pub shear_deg: (f64, f64),
}

impl Default for AffineRanges {
    fn default() -> Self {
        Self {
            height_px: (40.0, 180.0),
            width_px: (5.0, 60.0),
            reference_size: 608.0,
            rotate_deg: (-10.0, 10.0),
            shear_deg: (0.0, 15.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    /// Multiplies the patch height.
    pub scale_h: f64,
    /// Multiplies the patch width.
    pub scale_w: f64,
    /// Offset of the patch center from the canvas center, in canvas pixels.
    pub translate_y: f64,
    pub translate_x: f64,
    pub rotate_deg: f64,
    pub shear_deg: f64,
}

impl AffineParams {
    pub fn identity() -> Self {
        Self {
            scale_h: 1.0,
            scale_w: 1.0,
            translate_y: 0.0,
            translate_x: 0.0,
            rotate_deg: 0.0,
            shear_deg: 0.0,
        }
    }

    /// Linear part `R(θ) · Shear(φ) · diag(sw, sh)` acting on `(x, y)`.
    fn linear(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotate_deg.to_radians().sin_cos();
        let t = self.shear_deg.to_radians().tan();
        // shear then scale: [[sw, t*sh], [0, sh]]
        let m = [[self.scale_w, t * self.scale_h], [0.0, self.scale_h]];
        [
            [c * m[0][0] - s * m[1][0], c * m[0][1] - s * m[1][1]],
            [s * m[0][0] + c * m[1][0], s * m[0][1] + c * m[1][1]],
        ]
    }
}

/// Largest translation that keeps a `scaled_w × scaled_h` patch on canvas.
pub fn max_translation(canvas: (usize, usize), scaled_w: f64, scaled_h: f64) -> (f64, f64) {
    (
        ((canvas.0 as f64 - scaled_w) / 2.0).max(0.0),
        ((canvas.1 as f64 - scaled_h) / 2.0).max(0.0),
    )
}

/// Draws affine parameters. Resize and translation are always sampled;
/// rotation and shear only when enabled.
pub fn sample_affine(
    ranges: &AffineRanges,
    rotate: bool,
    shear: bool,
    patch: (usize, usize),
    canvas: (usize, usize),
    rng: &mut impl Rng,
) -> AffineParams {
    let ratio_w = canvas.0 as f64 / ranges.reference_size;
    let ratio_h = canvas.1 as f64 / ranges.reference_size;
    let target_h = rng.random_range(ranges.height_px.0..=ranges.height_px.1) * ratio_h;
    let target_w = rng.random_range(ranges.width_px.0..=ranges.width_px.1) * ratio_w;
    let (dx, dy) = max_translation(canvas, target_w, target_h);
    AffineParams {
        scale_h: target_h / patch.1 as f64,
        scale_w: target_w / patch.0 as f64,
        translate_y: rng.random_range(-dy..=dy),
        translate_x: rng.random_range(-dx..=dx),
        rotate_deg: if rotate {
            rng.random_range(ranges.rotate_deg.0..=ranges.rotate_deg.1)
        } else {
            0.0
        },
        shear_deg: if shear {
            rng.random_range(ranges.shear_deg.0..=ranges.shear_deg.1)
        } else {
            0.0
        },
    }
}

/// Result of pasting a warped patch onto a canvas.
#[derive(Debug, Clone)]
pub struct AffinePlacement<T> {
    pub image: ImageRgb<T>,
    /// Patch-to-canvas resampling operator; canvas pixels outside the
    /// patch have no taps.
    pub map: SampleMap<T>,
    /// Extent of the pasted patch, normalized.
    pub bbox: BBox,
}

impl<T: Real> AffinePlacement<T> {
    /// Gradient w.r.t. the patch pixels.
    pub fn backward(&self, grad_canvas: &[T]) -> Vec<T> {
        let (w, h) = self.map.src_size();
        let mut g = vec![T::zero(); w * h * 3];
        self.map.backward(grad_canvas, &mut g);
        g
    }
}

/// Warps `patch` by `params` and pastes it, bilinearly resampled, on top of
/// `canvas` around the canvas center.
pub fn apply_affine<T: Real>(
    params: &AffineParams,
    patch: &ImageRgb<T>,
    canvas: &ImageRgb<T>,
) -> Result<AffinePlacement<T>> {
    let (pw, ph) = (patch.width() as f64, patch.height() as f64);
    let (cw, ch) = (canvas.width(), canvas.height());
    let m = params.linear();
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-12 || !det.is_finite() {
        return Err(Error::DegeneratePlacement("singular affine transform".into()));
    }
    let inv = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    let ox = cw as f64 / 2.0 + params.translate_x;
    let oy = ch as f64 / 2.0 + params.translate_y;

    let mut x_lo = f64::INFINITY;
    let mut y_lo = f64::INFINITY;
    let mut x_hi = f64::NEG_INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for (px, py) in [(-pw / 2.0, -ph / 2.0), (pw / 2.0, -ph / 2.0), (-pw / 2.0, ph / 2.0), (pw / 2.0, ph / 2.0)] {
        let x = ox + m[0][0] * px + m[0][1] * py;
        let y = oy + m[1][0] * px + m[1][1] * py;
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }

    let mut taps = vec![None; cw * ch];
    let mut covered = 0usize;
    let y_start = y_lo.floor().max(0.0) as usize;
    let y_end = (y_hi.ceil().max(0.0) as usize).min(ch);
    let x_start = x_lo.floor().max(0.0) as usize;
    let x_end = (x_hi.ceil().max(0.0) as usize).min(cw);
    for y in y_start..y_end {
        for x in x_start..x_end {
            let dx = x as f64 + 0.5 - ox;
            let dy = y as f64 + 0.5 - oy;
            let u = inv[0][0] * dx + inv[0][1] * dy + pw / 2.0;
            let v = inv[1][0] * dx + inv[1][1] * dy + ph / 2.0;
            if (0.0..pw).contains(&u) && (0.0..ph).contains(&v) {
                taps[y * cw + x] = Some(bilinear_taps(u, v, patch.width(), patch.height()));
                covered += 1;
            }
        }
    }
    if covered == 0 {
        return Err(Error::DegeneratePlacement(format!(
            "warped patch covers no canvas pixel (extent x {x_lo:.1}..{x_hi:.1}, y {y_lo:.1}..{y_hi:.1})"
        )));
    }
    let map = SampleMap::new(patch.width(), patch.height(), cw, ch, taps);
    let mut image = canvas.clone();
    map.apply(patch, &mut image);
    let bbox = BBox::from_corners(
        x_lo / cw as f64,
        y_lo / ch as f64,
        x_hi / cw as f64,
        y_hi / ch as f64,
    )
    .clamped()?;
    Ok(AffinePlacement { image, map, bbox })
}
