//! RGB images, binary masks and differentiable bilinear resampling.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Interleaved `h × w × 3` image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> ImageRgb<T> {
    pub fn filled(width: usize, height: usize, color: [T; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, [T::zero(); 3])
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Contract(format!(
                "image buffer of {} values does not match {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [T; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [T; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: [T; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn same_size<U>(&self, other: &ImageRgb<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.max(T::zero()).min(T::one());
        }
    }

    pub fn cast<U: Real>(&self) -> ImageRgb<U> {
        ImageRgb {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|v| U::lit(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::lit(self.data.len().max(1) as f64)
    }

    pub fn mean_abs_diff(&self, other: &Self) -> T {
        assert!(self.same_size(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .sum::<T>()
            / T::lit(self.data.len().max(1) as f64)
    }

    /// Quantizes to 8 bits per channel.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for (dst, src) in img.as_mut().iter_mut().zip(&self.data) {
            *dst = quantize(src.to_f64_lossy());
        }
        img
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img
                .as_raw()
                .iter()
                .map(|&b| T::lit(b as f64 / 255.0))
                .collect(),
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// Bilinear resize; differentiable through the returned map.
    pub fn resized(&self, width: usize, height: usize) -> (Self, SampleMap<T>) {
        let map = SampleMap::resize(self.width, self.height, width, height);
        let mut out = Self::zeros(width, height);
        map.apply(self, &mut out);
        (out, map)
    }
}

#[inline]
pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary mask, `true` marks the patch region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

/// Shapes accepted by [`make_mask`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskShape {
    Full,
    /// Largest axis-aligned ellipse inscribed in the grid.
    Ellipse,
    /// Image file thresholded at half luminance; dark pixels become patch.
    Stencil(std::path::PathBuf),
}

impl Mask {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Contract("mask size mismatch".into()));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Replaces masked-out pixels by white.
    pub fn apply<T: Real>(&self, img: &mut ImageRgb<T>) {
        assert_eq!((img.width(), img.height()), (self.width, self.height));
        for (px, &on) in img.data_mut().chunks_exact_mut(3).zip(&self.bits) {
            if !on {
                px.fill(T::one());
            }
        }
    }

    /// Writes the mask as a 1-bit grayscale PNG (white = patch).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(
            std::io::BufWriter::new(file),
            self.width as u32,
            self.height as u32,
        );
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::format(path, e.to_string()))?;
        let stride = self.width.div_ceil(8);
        let mut packed = vec![0u8; stride * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    packed[y * stride + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        writer
            .write_image_data(&packed)
            .map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_luma8();
        let bits = img.as_raw().iter().map(|&v| v >= 128).collect();
        Self::from_bits(img.width() as usize, img.height() as usize, bits)
    }
}

/// Builds a `width × height` binary mask.
pub fn make_mask(shape: &MaskShape, width: usize, height: usize) -> Result<Mask> {
    match shape {
        MaskShape::Full => Ok(Mask::full(width, height)),
        MaskShape::Ellipse => {
            let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
            let mut bits = Vec::with_capacity(width * height);
            for y in 0..height {
                for x in 0..width {
                    let dx = (x as f64 + 0.5 - cx) / cx;
                    let dy = (y as f64 + 0.5 - cy) / cy;
                    bits.push(dx * dx + dy * dy <= 1.0);
                }
            }
            Mask::from_bits(width, height, bits)
        }
        MaskShape::Stencil(path) => {
            let img = image::open(path)
                .map_err(|e| Error::Input(format!("unreadable stencil {}: {e}", path.display())))?
                .to_rgb8();
            let (sw, sh) = (img.width() as usize, img.height() as usize);
            let mut bits = Vec::with_capacity(width * height);
            for y in 0..height {
                for x in 0..width {
                    // nearest neighbour lookup into the stencil
                    let sx = ((x as f64 + 0.5) * sw as f64 / width as f64) as usize;
                    let sy = ((y as f64 + 0.5) * sh as f64 / height as f64) as usize;
                    let p = img.get_pixel(sx.min(sw - 1) as u32, sy.min(sh - 1) as u32);
                    let lum = (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                        / 255.0;
                    bits.push(lum < 0.5);
                }
            }
            Mask::from_bits(width, height, bits)
        }
    }
}

/// One destination pixel's bilinear stencil into a source image.
pub type Taps<T> = [(u32, T); 4];

/// Bilinear taps for a continuous sample position in pixel units (pixel `i`
/// spans `[i, i + 1)`), clamped to the image edge.
#[inline]
pub fn bilinear_taps<T: Real>(x: f64, y: f64, width: usize, height: usize) -> Taps<T> {
    let fx = (x - 0.5).clamp(0.0, (width - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (height - 1) as f64);
    let x0 = fx.floor() as usize;
    let y0 = fy.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let tx = fx - x0 as f64;
    let ty = fy - y0 as f64;
    let idx = |xx: usize, yy: usize| (yy * width + xx) as u32;
    [
        (idx(x0, y0), T::lit((1.0 - tx) * (1.0 - ty))),
        (idx(x1, y0), T::lit(tx * (1.0 - ty))),
        (idx(x0, y1), T::lit((1.0 - tx) * ty)),
        (idx(x1, y1), T::lit(tx * ty)),
    ]
}

/// Sparse linear resampling operator between two RGB pixel grids.
///
/// Destination pixels without taps are left untouched by [`SampleMap::apply`]
/// and receive no gradient.
#[derive(Debug, Clone)]
pub struct SampleMap<T> {
    src_width: usize,
    src_height: usize,
    dst_width: usize,
    dst_height: usize,
    taps: Vec<Option<Taps<T>>>,
}

impl<T: Real> SampleMap<T> {
    pub fn new(
        src_width: usize,
        src_height: usize,
        dst_width: usize,
        dst_height: usize,
        taps: Vec<Option<Taps<T>>>,
    ) -> Self {
        assert_eq!(taps.len(), dst_width * dst_height);
        Self {
            src_width,
            src_height,
            dst_width,
            dst_height,
            taps,
        }
    }

    /// Pixel-center aligned bilinear resize.
    pub fn resize(src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Self {
        let sx = src_w as f64 / dst_w as f64;
        let sy = src_h as f64 / dst_h as f64;
        let mut taps = Vec::with_capacity(dst_w * dst_h);
        for y in 0..dst_h {
            for x in 0..dst_w {
                taps.push(Some(bilinear_taps(
                    (x as f64 + 0.5) * sx,
                    (y as f64 + 0.5) * sy,
                    src_w,
                    src_h,
                )));
            }
        }
        Self::new(src_w, src_h, dst_w, dst_h, taps)
    }

    #[inline]
    pub fn taps(&self) -> &[Option<Taps<T>>] {
        &self.taps
    }

    pub fn src_size(&self) -> (usize, usize) {
        (self.src_width, self.src_height)
    }

    pub fn dst_size(&self) -> (usize, usize) {
        (self.dst_width, self.dst_height)
    }

    pub fn apply(&self, src: &ImageRgb<T>, dst: &mut ImageRgb<T>) {
        assert_eq!((src.width(), src.height()), (self.src_width, self.src_height));
        assert_eq!((dst.width(), dst.height()), (self.dst_width, self.dst_height));
        let s = src.data();
        for (px, taps) in dst.data_mut().chunks_exact_mut(3).zip(&self.taps) {
            if let Some(taps) = taps {
                let mut acc = [T::zero(); 3];
                for &(i, w) in taps {
                    let i = i as usize * 3;
                    acc[0] += w * s[i];
                    acc[1] += w * s[i + 1];
                    acc[2] += w * s[i + 2];
                }
                px.copy_from_slice(&acc);
            }
        }
    }

    /// Accumulates the adjoint of [`Self::apply`] into `grad_src`.
    pub fn backward(&self, grad_dst: &[T], grad_src: &mut [T]) {
        assert_eq!(grad_dst.len(), self.dst_width * self.dst_height * 3);
        assert_eq!(grad_src.len(), self.src_width * self.src_height * 3);
        for (g, taps) in grad_dst.chunks_exact(3).zip(&self.taps) {
            if let Some(taps) = taps {
                for &(i, w) in taps {
                    let i = i as usize * 3;
                    grad_src[i] += w * g[0];
                    grad_src[i + 1] += w * g[1];
                    grad_src[i + 2] += w * g[2];
                }
            }
        }
    }

    /// Routes the gradient only through destination pixels where `keep` is set.
    pub fn backward_masked(&self, grad_dst: &[T], keep: &[bool], grad_src: &mut [T]) {
        for ((g, taps), &k) in grad_dst.chunks_exact(3).zip(&self.taps).zip(keep) {
            if let (true, Some(taps)) = (k, taps) {
                for &(i, w) in taps {
                    let i = i as usize * 3;
                    grad_src[i] += w * g[0];
                    grad_src[i + 1] += w * g[1];
                    grad_src[i + 2] += w * g[2];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ellipse_on_four_by_four() {
        let m = make_mask(&MaskShape::Ellipse, 4, 4).unwrap();
        for (x, y) in [(1, 1), (2, 1), (1, 2), (2, 2)] {
            assert!(m.get(x, y));
        }
        for (x, y) in [(0, 0), (3, 0), (0, 3), (3, 3)] {
            assert!(!m.get(x, y));
        }
    }

    #[test]
    fn full_mask_is_all_ones() {
        assert_eq!(make_mask(&MaskShape::Full, 5, 3).unwrap().count(), 15);
    }

    #[test]
    fn black_stencil_is_all_ones() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("black.png");
        image::RgbImage::new(10, 7).save(&path).unwrap();
        let m = make_mask(&MaskShape::Stencil(path), 16, 16).unwrap();
        assert_eq!(m.count(), 256);
    }

    #[test]
    fn unreadable_stencil_is_input_error() {
        let err = make_mask(&MaskShape::Stencil("/nonexistent/x.png".into()), 4, 4).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn mask_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let m = make_mask(&MaskShape::Ellipse, 13, 9).unwrap();
        m.save_png(&path).unwrap();
        assert_eq!(Mask::load_png(&path).unwrap(), m);
    }

    #[test]
    fn mask_application_is_idempotent() {
        let m = make_mask(&MaskShape::Ellipse, 6, 6).unwrap();
        let mut a = ImageRgb::<f64>::from_fn(6, 6, |x, y| [x as f64 / 6.0, y as f64 / 6.0, 0.2]);
        m.apply(&mut a);
        let once = a.clone();
        m.apply(&mut a);
        assert_eq!(a, once);
    }

    #[test]
    fn identity_resize_is_exact() {
        let a = ImageRgb::<f64>::from_fn(5, 4, |x, y| [x as f64 * 0.1, y as f64 * 0.2, 0.3]);
        let (b, _) = a.resized(5, 4);
        assert!(a.mean_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn resample_adjoint_identity() {
        // <A x, y> == <x, A^T y>
        let map = SampleMap::<f64>::resize(7, 5, 4, 6);
        let x = ImageRgb::<f64>::from_fn(7, 5, |i, j| [(i * 3 + j) as f64 * 0.01, 0.3, -0.2]);
        let mut ax = ImageRgb::zeros(4, 6);
        map.apply(&x, &mut ax);
        let y: Vec<f64> = (0..4 * 6 * 3).map(|k| ((k * 7) % 11) as f64 * 0.1).collect();
        let mut aty = vec![0.0; 7 * 5 * 3];
        map.backward(&y, &mut aty);
        let lhs: f64 = ax.data().iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
