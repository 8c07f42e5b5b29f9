//! Procedural backgrounds and simple raster drawing.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::ImageRgb;
use crate::scalar::Real;

fn lit3<T: Real>(c: [f64; 3]) -> [T; 3] {
    [T::lit(c[0]), T::lit(c[1]), T::lit(c[2])]
}

/// Fills pixels whose centers satisfy `inside(x, y)` within a bounding box.
pub fn fill_where<T: Real>(
    img: &mut ImageRgb<T>,
    bounds: (f64, f64, f64, f64),
    color: [f64; 3],
    inside: impl Fn(f64, f64) -> bool,
) {
    let (x0, y0, x1, y1) = bounds;
    let c = lit3(color);
    let xs = x0.floor().max(0.0) as usize;
    let ys = y0.floor().max(0.0) as usize;
    let xe = (x1.ceil().max(0.0) as usize).min(img.width());
    let ye = (y1.ceil().max(0.0) as usize).min(img.height());
    for y in ys..ye {
        for x in xs..xe {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if inside(px, py) {
                img.set(x, y, c);
            }
        }
    }
}

pub fn fill_rect<T: Real>(img: &mut ImageRgb<T>, x0: f64, y0: f64, x1: f64, y1: f64, color: [f64; 3]) {
    fill_where(img, (x0, y0, x1, y1), color, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1);
}

pub fn fill_ellipse<T: Real>(img: &mut ImageRgb<T>, cx: f64, cy: f64, rx: f64, ry: f64, color: [f64; 3]) {
    fill_where(img, (cx - rx, cy - ry, cx + rx, cy + ry), color, |x, y| {
        let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
        dx * dx + dy * dy <= 1.0
    });
}

/// Convex polygon with vertices in either winding.
pub fn fill_convex<T: Real>(img: &mut ImageRgb<T>, pts: &[(f64, f64)], color: [f64; 3]) {
    let n = pts.len();
    if n < 3 {
        return;
    }
    let x0 = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x1 = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let y0 = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y1 = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let edge = |i: usize, x: f64, y: f64| {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)
    };
    fill_where(img, (x0, y0, x1, y1), color, |x, y| {
        let pos = (0..n).all(|i| edge(i, x, y) >= 0.0);
        let neg = (0..n).all(|i| edge(i, x, y) <= 0.0);
        pos || neg
    });
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

pub fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Muted street-like scene: two-tone gradient with blocky clutter and mild
/// pixel noise.
pub fn procedural_background<T: Real>(width: usize, height: usize, rng: &mut impl Rng) -> ImageRgb<T> {
    let muted = |rng: &mut dyn rand::RngCore| hsv_to_rgb(rng.random(), rng.random_range(0.0..0.35), rng.random_range(0.3..0.9));
    let top = muted(rng);
    let bottom = muted(rng);
    let horizon: f64 = rng.random_range(0.3..0.7);
    let mut img = ImageRgb::from_fn(width, height, |_, y| {
        let t = y as f64 / height.max(1) as f64;
        let c = if t < horizon { top } else { bottom };
        let shade = 1.0 - 0.25 * (t - horizon).abs();
        lit3([c[0] * shade, c[1] * shade, c[2] * shade])
    });
    let (w, h) = (width as f64, height as f64);
    for _ in 0..rng.random_range(3..9) {
        let bw = rng.random_range(0.05..0.3) * w;
        let bh = rng.random_range(0.05..0.5) * h;
        let x0 = rng.random_range(-0.1..1.0) * w;
        let y0 = rng.random_range(0.0..1.0) * h - bh * 0.5;
        let c = muted(rng);
        fill_rect(&mut img, x0, y0, x0 + bw, y0 + bh, c);
    }
    let amp = T::lit(0.03);
    for v in img.data_mut() {
        *v += amp * T::lit(rng.random::<f64>() - 0.5);
    }
    img.clamp01();
    img
}

/// Where background images come from.
#[derive(Debug, Clone)]
pub enum BackgroundSource {
    Procedural,
    Images(Vec<ImageRgb<f32>>),
}

impl BackgroundSource {
    /// Loads every PNG in `dir` (sorted by name).
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Input(format!("no PNG backgrounds in {}", dir.display())));
        }
        let images = paths.iter().map(ImageRgb::load_png).collect::<Result<Vec<_>>>()?;
        Ok(Self::Images(images))
    }

    /// A background at the requested size.
    pub fn sample<T: Real>(&self, width: usize, height: usize, rng: &mut impl Rng) -> ImageRgb<T> {
        match self {
            Self::Procedural => procedural_background(width, height, rng),
            Self::Images(list) => {
                let img = &list[rng.random_range(0..list.len())];
                let img: ImageRgb<T> = img.cast();
                if img.width() == width && img.height() == height {
                    img
                } else {
                    img.resized(width, height).0
                }
            }
        }
    }
}
