//! Hard rasterization with perspective-correct UVs. Gradients flow through
//! texture sampling only: the rendered image is a fixed sparse linear map
//! of the texture for a given mesh and pose.

use serde::{Deserialize, Serialize};

use super::camera::CameraPose;
use super::mesh::{Mesh, UvRect};
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::image::{bilinear_taps, ImageRgb, SampleMap};
use crate::scalar::Real;

/// Per-pixel surface coordinates of the nearest triangle.
#[derive(Debug, Clone)]
pub struct Fragments {
    pub width: usize,
    pub height: usize,
    pub uv: Vec<Option<[f64; 2]>>,
}

impl Fragments {
    pub fn covered(&self) -> usize {
        self.uv.iter().filter(|u| u.is_some()).count()
    }
}

/// Depth-tested rasterization of `mesh` seen from `pose`, sampling pixel
/// centers, without back-face culling.
pub fn rasterize(mesh: &Mesh, pose: &CameraPose) -> Fragments {
    let (w, h) = (pose.intrinsics.width, pose.intrinsics.height);
    let frame = pose.frame();
    let projected: Vec<Option<(f64, f64, f64)>> = mesh.vertices.iter().map(|&p| frame.project(p)).collect();
    let mut uv = vec![None; w * h];
    let mut inv_depth = vec![0.0f64; w * h];
    for tri in &mesh.triangles {
        let (Some(a), Some(b), Some(c)) = (projected[tri[0]], projected[tri[1]], projected[tri[2]]) else {
            continue;
        };
        let area = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
        if area.abs() < 1e-12 {
            continue;
        }
        let x0 = a.0.min(b.0).min(c.0).floor().max(0.0) as usize;
        let x1 = (a.0.max(b.0).max(c.0).ceil().max(0.0) as usize).min(w);
        let y0 = a.1.min(b.1).min(c.1).floor().max(0.0) as usize;
        let y1 = (a.1.max(b.1).max(c.1).ceil().max(0.0) as usize).min(h);
        let (uva, uvb, uvc) = (mesh.uvs[tri[0]], mesh.uvs[tri[1]], mesh.uvs[tri[2]]);
        for py in y0..y1 {
            for px in x0..x1 {
                let (sx, sy) = (px as f64 + 0.5, py as f64 + 0.5);
                let w0 = ((b.0 - sx) * (c.1 - sy) - (b.1 - sy) * (c.0 - sx)) / area;
                let w1 = ((c.0 - sx) * (a.1 - sy) - (c.1 - sy) * (a.0 - sx)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let (p0, p1, p2) = (w0 / a.2, w1 / b.2, w2 / c.2);
                let iz = p0 + p1 + p2;
                let i = py * w + px;
                if iz <= inv_depth[i] {
                    continue;
                }
                inv_depth[i] = iz;
                uv[i] = Some([
                    (p0 * uva[0] + p1 * uvb[0] + p2 * uvc[0]) / iz,
                    (p0 * uva[1] + p1 * uvb[1] + p2 * uvc[1]) / iz,
                ]);
            }
        }
    }
    Fragments {
        width: w,
        height: h,
        uv,
    }
}

/// Base texture: a solid color with a rectangle reserved for the patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub base_color: [f64; 3],
    pub placement: UvRect,
    pub width: usize,
    pub height: usize,
}

impl TextureSpec {
    pub fn new(base_color: [f64; 3], placement: UvRect, resolution: usize) -> Self {
        Self {
            base_color,
            placement,
            width: resolution,
            height: resolution,
        }
    }
}

/// Texture carrying the patch, with the patch-to-texel resampling map.
#[derive(Debug, Clone)]
pub struct AdvTexture<T> {
    pub image: ImageRgb<T>,
    pub map: SampleMap<T>,
}

impl<T: Real> AdvTexture<T> {
    /// Gradient w.r.t. the patch pixels.
    pub fn backward(&self, grad_texture: &[T]) -> Vec<T> {
        let (w, h) = self.map.src_size();
        let mut g = vec![T::zero(); w * h * 3];
        self.map.backward(grad_texture, &mut g);
        g
    }
}

/// Resamples the patch into the placement rectangle of a solid texture.
pub fn place_patch<T: Real>(spec: &TextureSpec, patch: &ImageRgb<T>) -> AdvTexture<T> {
    let (tw, th) = (spec.width, spec.height);
    let r = spec.placement;
    let (pw, ph) = (patch.width(), patch.height());
    let mut taps = Vec::with_capacity(tw * th);
    for y in 0..th {
        for x in 0..tw {
            let u = (x as f64 + 0.5) / tw as f64;
            let v = (y as f64 + 0.5) / th as f64;
            if u >= r.u0 && u < r.u1 && v >= r.v0 && v < r.v1 {
                let px = (u - r.u0) / (r.u1 - r.u0) * pw as f64;
                let py = (v - r.v0) / (r.v1 - r.v0) * ph as f64;
                taps.push(Some(bilinear_taps(px, py, pw, ph)));
            } else {
                taps.push(None);
            }
        }
    }
    let map = SampleMap::new(pw, ph, tw, th, taps);
    let c = spec.base_color;
    let mut image = ImageRgb::filled(tw, th, [T::lit(c[0]), T::lit(c[1]), T::lit(c[2])]);
    map.apply(patch, &mut image);
    AdvTexture { image, map }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderStatus {
    Ok,
    /// Nothing of the mesh reached the image; the sample should be skipped.
    OutOfFrustum,
}

/// Rendered object on a transparent background.
#[derive(Debug, Clone)]
pub struct RenderOutput<T> {
    pub rgb: ImageRgb<T>,
    /// Hard coverage.
    pub alpha: Vec<bool>,
    /// Pixels whose surface point lies in the patch placement rectangle.
    pub patch_pixels: Vec<bool>,
    /// Texture-to-image sampling operator.
    pub map: SampleMap<T>,
    pub status: RenderStatus,
}

impl<T: Real> RenderOutput<T> {
    /// Gradient w.r.t. texels given the gradient w.r.t. the rendered rgb.
    pub fn backward(&self, grad_rgb: &[T]) -> Vec<T> {
        let (w, h) = self.map.src_size();
        let mut g = vec![T::zero(); w * h * 3];
        self.map.backward(grad_rgb, &mut g);
        g
    }

    /// RGBA dump for debugging.
    pub fn to_rgba8(&self) -> image::RgbaImage {
        let mut img = image::RgbaImage::new(self.rgb.width() as u32, self.rgb.height() as u32);
        for (i, px) in img.pixels_mut().enumerate() {
            let c = &self.rgb.data()[i * 3..i * 3 + 3];
            *px = image::Rgba([
                crate::image::quantize(c[0].to_f64_lossy()),
                crate::image::quantize(c[1].to_f64_lossy()),
                crate::image::quantize(c[2].to_f64_lossy()),
                if self.alpha[i] { 255 } else { 0 },
            ]);
        }
        img
    }
}

/// Renders the textured mesh. Pixel color is a bilinear texture lookup at
/// the interpolated UV.
pub fn render<T: Real>(mesh: &Mesh, texture: &ImageRgb<T>, pose: &CameraPose) -> RenderOutput<T> {
    let frags = rasterize(mesh, pose);
    let (w, h) = (frags.width, frags.height);
    let (tw, th) = (texture.width(), texture.height());
    let mut taps = Vec::with_capacity(w * h);
    let mut alpha = Vec::with_capacity(w * h);
    let mut patch_pixels = Vec::with_capacity(w * h);
    for uv in &frags.uv {
        match uv {
            Some([u, v]) => {
                taps.push(Some(bilinear_taps(u * tw as f64, v * th as f64, tw, th)));
                alpha.push(true);
                patch_pixels.push(mesh.placement.contains(*u, *v));
            }
            None => {
                taps.push(None);
                alpha.push(false);
                patch_pixels.push(false);
            }
        }
    }
    let map = SampleMap::new(tw, th, w, h, taps);
    let mut rgb = ImageRgb::zeros(w, h);
    map.apply(texture, &mut rgb);
    let status = if alpha.iter().any(|&a| a) {
        RenderStatus::Ok
    } else {
        RenderStatus::OutOfFrustum
    };
    RenderOutput {
        rgb,
        alpha,
        patch_pixels,
        map,
        status,
    }
}

/// Alpha-over of a render on a background. The adjoint w.r.t. the render
/// is the identity on covered pixels, which [`RenderOutput::backward`]
/// already encodes.
pub fn composite<T: Real>(fg: &RenderOutput<T>, bg: &ImageRgb<T>) -> Result<ImageRgb<T>> {
    if !fg.rgb.same_size(bg) {
        return Err(Error::Contract(format!(
            "render is {}x{} but background is {}x{}",
            fg.rgb.width(),
            fg.rgb.height(),
            bg.width(),
            bg.height()
        )));
    }
    let mut out = bg.clone();
    for ((o, f), &a) in out
        .data_mut()
        .chunks_exact_mut(3)
        .zip(fg.rgb.data().chunks_exact(3))
        .zip(&fg.alpha)
    {
        if a {
            o.copy_from_slice(f);
        }
    }
    Ok(out)
}

/// Normalized box of the projected patch-region vertices, clamped to the image.
pub fn project_patch_bbox(mesh: &Mesh, placement: &UvRect, pose: &CameraPose) -> Result<BBox> {
    let frame = pose.frame();
    let (w, h) = (pose.intrinsics.width as f64, pose.intrinsics.height as f64);
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut any = false;
    for (p, uv) in mesh.vertices.iter().zip(&mesh.uvs) {
        if !placement.contains(uv[0], uv[1]) {
            continue;
        }
        if let Some((x, y, _)) = frame.project(*p) {
            any = true;
            lo = [lo[0].min(x), lo[1].min(y)];
            hi = [hi[0].max(x), hi[1].max(y)];
        }
    }
    if !any {
        return Err(Error::DegenerateBox("patch region behind the camera".into()));
    }
    BBox::from_corners(lo[0] / w, lo[1] / h, hi[0] / w, hi[1] / h).clamped()
}
