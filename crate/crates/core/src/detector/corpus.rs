//! Synthetic training scenes with shape analogues of the four classes.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::image::ImageRgb;
use crate::scalar::Real;
use crate::scene::{fill_convex, fill_ellipse, fill_rect, hsv_to_rgb, procedural_background, random_color};
use crate::target::TargetClass;

pub const PERSON: usize = 0;
pub const CAR: usize = 1;
pub const TRAFFIC_LIGHT: usize = 2;
pub const STOP_SIGN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub class_id: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AnnotationRecord {
    image: String,
    objects: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageRgb<f32>,
    pub objects: Vec<Annotation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusParams {
    pub size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub distractors: usize,
    /// Object height range as a fraction of the image.
    pub min_height: f64,
    pub max_height: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            size: 64,
            min_objects: 1,
            max_objects: 4,
            distractors: 3,
            min_height: 0.08,
            max_height: 0.45,
        }
    }
}

/// Width/height ratio range of each class.
pub fn class_aspect(class_id: usize) -> (f64, f64) {
    match class_id {
        PERSON => (0.35, 0.5),
        CAR => (1.6, 2.4),
        TRAFFIC_LIGHT => (0.35, 0.45),
        _ => (0.9, 1.1),
    }
}

/// Draws an object of `class_id` filling the pixel box `(x0, y0, w, h)`.
pub fn draw_object<T: Real>(img: &mut ImageRgb<T>, class_id: usize, x0: f64, y0: f64, w: f64, h: f64, rng: &mut impl Rng) {
    let jitter = |rng: &mut dyn rand::RngCore, c: [f64; 3], a: f64| {
        c.map(|v| (v + rng.random_range(-a..=a)).clamp(0.0, 1.0))
    };
    match class_id {
        PERSON => {
            let skin = jitter(rng, [0.85, 0.68, 0.55], 0.12);
            let shirt = hsv_to_rgb(rng.random(), rng.random_range(0.4..1.0), rng.random_range(0.4..1.0));
            let pants = jitter(rng, [0.15, 0.15, 0.3], 0.1);
            let r = 0.13 * h;
            fill_ellipse(img, x0 + w / 2.0, y0 + r, r.min(w / 2.0), r, skin);
            fill_rect(img, x0, y0 + 0.26 * h, x0 + w, y0 + 0.62 * h, shirt);
            fill_rect(img, x0 + 0.05 * w, y0 + 0.62 * h, x0 + 0.45 * w, y0 + h, pants);
            fill_rect(img, x0 + 0.55 * w, y0 + 0.62 * h, x0 + 0.95 * w, y0 + h, pants);
        }
        CAR => {
            let body = hsv_to_rgb(rng.random(), rng.random_range(0.3..1.0), rng.random_range(0.3..1.0));
            let glass = jitter(rng, [0.6, 0.8, 0.95], 0.08);
            fill_convex(
                img,
                &[
                    (x0 + 0.25 * w, y0),
                    (x0 + 0.7 * w, y0),
                    (x0 + 0.85 * w, y0 + 0.4 * h),
                    (x0 + 0.12 * w, y0 + 0.4 * h),
                ],
                glass,
            );
            fill_rect(img, x0, y0 + 0.35 * h, x0 + w, y0 + 0.85 * h, body);
            let r = 0.15 * h;
            for fx in [0.22, 0.78] {
                fill_ellipse(img, x0 + fx * w, y0 + h - r, r, r, [0.05, 0.05, 0.05]);
            }
        }
        TRAFFIC_LIGHT => {
            let g = rng.random_range(0.08..0.22);
            fill_rect(img, x0, y0, x0 + w, y0 + h, [g, g, g]);
            let r = 0.35 * w;
            let lamps = [[0.95, 0.1, 0.1], [0.95, 0.8, 0.1], [0.1, 0.9, 0.3]];
            for (i, c) in lamps.iter().enumerate() {
                let cy = y0 + h * (1.0 + 2.0 * i as f64) / 6.0;
                fill_ellipse(img, x0 + w / 2.0, cy, r, r.min(h / 7.0), jitter(rng, *c, 0.05));
            }
        }
        _ => {
            let red = jitter(rng, [0.85, 0.08, 0.1], 0.08);
            let (cx, cy) = (x0 + w / 2.0, y0 + h / 2.0);
            let oct: Vec<(f64, f64)> = (0..8)
                .map(|k| {
                    let t = std::f64::consts::PI * (2.0 * k as f64 + 1.0) / 8.0;
                    (cx + 0.5 * w / (std::f64::consts::PI / 8.0).cos() * t.cos() , cy + 0.5 * h / (std::f64::consts::PI / 8.0).cos() * t.sin())
                })
                .collect();
            fill_convex(img, &oct, red);
            fill_rect(img, x0 + 0.2 * w, y0 + 0.42 * h, x0 + 0.8 * w, y0 + 0.58 * h, [0.97, 0.97, 0.97]);
        }
    }
}

/// Plain rectangles, ellipses and triangles that carry no label.
fn draw_distractor<T: Real>(img: &mut ImageRgb<T>, rng: &mut impl Rng) {
    let s = img.width().min(img.height()) as f64;
    let w = rng.random_range(0.05..0.3) * s;
    let h = rng.random_range(0.05..0.3) * s;
    let x0 = rng.random_range(0.0..img.width() as f64 - w * 0.5);
    let y0 = rng.random_range(0.0..img.height() as f64 - h * 0.5);
    let c = random_color(rng);
    match rng.random_range(0..3) {
        0 => fill_rect(img, x0, y0, x0 + w, y0 + h, c),
        1 => fill_ellipse(img, x0 + w / 2.0, y0 + h / 2.0, w / 2.0, h / 2.0, c),
        _ => fill_convex(img, &[(x0, y0 + h), (x0 + w / 2.0, y0), (x0 + w, y0 + h)], c),
    }
}

/// Draws one scene. Objects are sampled with the classes' dataset
/// frequencies and placed so they overlap each other by at most 0.3 IoU.
pub fn generate_sample(classes: &[TargetClass], params: &CorpusParams, rng: &mut impl Rng) -> Result<Sample> {
    if classes.is_empty() {
        return Err(Error::Input("no classes to draw".into()));
    }
    let weights = WeightedIndex::new(classes.iter().map(|c| c.dataset_frequency))
        .map_err(|e| Error::Input(format!("class frequencies: {e}")))?;
    let size = params.size as f64;
    let mut image: ImageRgb<f32> = procedural_background(params.size, params.size, rng);
    for _ in 0..params.distractors {
        if rng.random_bool(0.7) {
            draw_distractor(&mut image, rng);
        }
    }
    let n = rng.random_range(params.min_objects..=params.max_objects);
    let mut objects: Vec<Annotation> = Vec::new();
    for _ in 0..n {
        let class_id = weights.sample(rng);
        for _attempt in 0..10 {
            let h = rng.random_range(params.min_height..=params.max_height) * size;
            let (alo, ahi) = class_aspect(class_id);
            let w = (h * rng.random_range(alo..=ahi)).min(0.9 * size);
            let x0 = rng.random_range(0.0..=size - w);
            let y0 = rng.random_range(0.0..=size - h);
            let bbox = BBox::from_corners(x0 / size, y0 / size, (x0 + w) / size, (y0 + h) / size);
            if objects.iter().any(|o| o.bbox.iou(&bbox) > 0.3 || o.bbox.contains(bbox.cx, bbox.cy)) {
                continue;
            }
            draw_object(&mut image, class_id, x0, y0, w, h, rng);
            objects.push(Annotation { class_id, bbox });
            break;
        }
    }
    Ok(Sample { image, objects })
}

pub fn generate_corpus(classes: &[TargetClass], params: &CorpusParams, count: usize, seed: u64) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| generate_sample(classes, params, &mut rng)).collect()
}

/// Writes `img_NNNNN.png` files and `annotations.jsonl`.
pub fn save_corpus(samples: &[Sample], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ann_path = dir.join("annotations.jsonl");
    let mut out = String::new();
    for (i, s) in samples.iter().enumerate() {
        let name = format!("img_{i:05}.png");
        s.image.save_png(dir.join(&name))?;
        let rec = AnnotationRecord {
            image: name,
            objects: s.objects.clone(),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    let mut f = fs::File::create(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(&ann_path, e))
}

pub fn load_corpus(dir: &Path) -> Result<Vec<Sample>> {
    let ann_path = dir.join("annotations.jsonl");
    let f = fs::File::open(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&ann_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(&ann_path, format!("line {}: {e}", lineno + 1)))?;
        let image = ImageRgb::load_png(dir.join(&rec.image))?;
        samples.push(Sample {
            image,
            objects: rec.objects,
        });
    }
    Ok(samples)
}
