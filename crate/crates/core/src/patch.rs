//! Patch parameterization: unconstrained logits mapped to pixels through
//! `w = ½(tanh(x) + 1)`, with masked-out pixels fixed to white paper.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageRgb, Mask};
use crate::scalar::Real;

/// Default patch side length in pixels.
pub const DEFAULT_PATCH_SIZE: usize = 608;

#[derive(Debug, Clone, PartialEq)]
pub struct Patch<T> {
    logits: Vec<T>,
    mask: Mask,
}

impl<T: Real> Patch<T> {
    /// Patch with every logit at `value`.
    pub fn constant(mask: Mask, value: T) -> Self {
        let n = mask.width() * mask.height() * 3;
        Self {
            logits: vec![value; n],
            mask,
        }
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random(mask: Mask, scale: f64, rng: &mut impl Rng) -> Self {
        let n = mask.width() * mask.height() * 3;
        let logits = (0..n)
            .map(|_| T::lit(rng.random_range(-scale..=scale)))
            .collect();
        Self { logits, mask }
    }

    pub fn from_logits(mask: Mask, logits: Vec<T>) -> Result<Self> {
        if logits.len() != mask.width() * mask.height() * 3 {
            return Err(Error::Contract("logit count does not match mask".into()));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("patch logits must be finite".into()));
        }
        Ok(Self { logits, mask })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.mask.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.mask.height()
    }

    #[inline]
    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    #[inline]
    pub fn logits_mut(&mut self) -> &mut [T] {
        &mut self.logits
    }

    #[inline]
    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    /// Pixel view of the patch.
    pub fn pixels(&self) -> ImageRgb<T> {
        let half = T::half();
        let data = self
            .logits
            .chunks_exact(3)
            .zip(self.mask.bits())
            .flat_map(|(l, &on)| {
                if on {
                    [
                        half * (l[0].tanh() + T::one()),
                        half * (l[1].tanh() + T::one()),
                        half * (l[2].tanh() + T::one()),
                    ]
                } else {
                    [T::one(); 3]
                }
            })
            .collect();
        ImageRgb::from_vec(self.width(), self.height(), data).expect("consistent patch size")
    }

    /// Chain rule through [`Self::pixels`]: gradient w.r.t. logits.
    pub fn pixels_backward(&self, grad_pixels: &[T]) -> Vec<T> {
        assert_eq!(grad_pixels.len(), self.logits.len());
        let half = T::half();
        let mut out = vec![T::zero(); self.logits.len()];
        for (i, ((o, &l), &g)) in out.iter_mut().zip(&self.logits).zip(grad_pixels).enumerate() {
            if self.mask.bits()[i / 3] {
                let t = l.tanh();
                *o = g * half * (T::one() - t * t);
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Patch<U> {
        Patch {
            logits: self.logits.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            mask: self.mask.clone(),
        }
    }
}

/// Provenance stored next to a saved patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchMeta {
    pub seed: u64,
    pub method: String,
    pub config_id: String,
    pub target: String,
    pub width: usize,
    pub height: usize,
}

const LOGITS_MAGIC: &[u8; 8] = b"TRLOGIT1";

pub const PATCH_PNG: &str = "patch.png";
pub const MASK_PNG: &str = "mask.png";
pub const META_JSON: &str = "patch_meta.json";
pub const LOGITS_BIN: &str = "logits.bin";

/// Writes logits as `magic | u32 width | u32 height | f64 LE values`.
pub fn write_logits<T: Real>(path: &Path, width: usize, height: usize, logits: &[T]) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + logits.len() * 8);
    buf.extend_from_slice(LOGITS_MAGIC);
    buf.extend_from_slice(&(width as u32).to_le_bytes());
    buf.extend_from_slice(&(height as u32).to_le_bytes());
    for v in logits {
        buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_logits<T: Real>(path: &Path) -> Result<(usize, usize, Vec<T>)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    if buf.len() < 16 || &buf[..8] != LOGITS_MAGIC {
        return Err(Error::format(path, "missing logits header"));
    }
    let width = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
    let body = &buf[16..];
    if body.len() != width * height * 3 * 8 {
        return Err(Error::format(path, "logit payload size mismatch"));
    }
    let logits = body
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok((width, height, logits))
}

/// Saves pixel view, mask, metadata and exact logits into `dir`.
pub fn save_patch<T: Real>(patch: &Patch<T>, meta: &PatchMeta, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    patch.pixels().save_png(dir.join(PATCH_PNG))?;
    patch.mask().save_png(dir.join(MASK_PNG))?;
    let meta_path = dir.join(META_JSON);
    std::fs::write(&meta_path, serde_json::to_string_pretty(meta)?)
        .map_err(|e| Error::io(&meta_path, e))?;
    write_logits(&dir.join(LOGITS_BIN), patch.width(), patch.height(), patch.logits())
}

pub fn load_patch<T: Real>(dir: &Path) -> Result<(Patch<T>, PatchMeta)> {
    let mask = Mask::load_png(dir.join(MASK_PNG))?;
    let (w, h, logits) = read_logits(&dir.join(LOGITS_BIN))?;
    if (w, h) != (mask.width(), mask.height()) {
        return Err(Error::format(dir, "mask and logits disagree on patch size"));
    }
    let meta_path = dir.join(META_JSON);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta = serde_json::from_str(&text)?;
    Ok((Patch::from_logits(mask, logits)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{make_mask, MaskShape};
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn zero_logit_is_mid_gray() {
        let p = Patch::<f64>::constant(Mask::full(2, 2), 0.0);
        assert!(p.pixels().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn masked_out_pixels_are_white() {
        let mask = Mask::from_bits(2, 1, vec![false, true]).unwrap();
        let p = Patch::<f64>::constant(mask, -7.0);
        let px = p.pixels();
        assert_eq!(px.get(0, 0), [1.0; 3]);
        assert!(px.get(1, 0)[0] < 1e-5);
    }

    #[test]
    fn known_logit_maps_to_three_quarters() {
        // 0.5 * (tanh(atanh(0.5)) + 1) = 0.75 with atanh(0.5) = 0.549306...
        let p = Patch::<f64>::constant(Mask::full(1, 1), 0.549306);
        assert!((p.pixels().data()[0] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn logits_file_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p = Patch::<f32>::random(make_mask(&MaskShape::Ellipse, 9, 5).unwrap(), 2.0, &mut rng);
        let meta = PatchMeta {
            seed: 3,
            method: "transcender_mc".into(),
            config_id: "abc".into(),
            target: "car".into(),
            width: 9,
            height: 5,
        };
        save_patch(&p, &meta, dir.path()).unwrap();
        let (q, m) = load_patch::<f32>(dir.path()).unwrap();
        assert_eq!(p, q);
        assert_eq!(meta, m);
    }

    proptest! {
        #[test]
        fn pixels_bounded(logits in proptest::collection::vec(-50.0f64..50.0, 12)) {
            let p = Patch::from_logits(Mask::full(2, 2), logits).unwrap();
            prop_assert!(p.pixels().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn gradient_matches_central_differences(
            logits in proptest::collection::vec(-3.0f64..3.0, 12),
            weights in proptest::collection::vec(-1.0f64..1.0, 12),
        ) {
            let p = Patch::from_logits(Mask::full(2, 2), logits.clone()).unwrap();
            let f = |l: &[f64]| -> f64 {
                let q = Patch::from_logits(Mask::full(2, 2), l.to_vec()).unwrap();
                q.pixels().data().iter().zip(&weights).map(|(a, b)| a * b).sum()
            };
            let grad = p.pixels_backward(&weights);
            let eps = 1e-5;
            for i in 0..12 {
                let mut hi = logits.clone();
                let mut lo = logits.clone();
                hi[i] += eps;
                lo[i] -= eps;
                let fd = (f(&hi) - f(&lo)) / (2.0 * eps);
                let denom = fd.abs().max(grad[i].abs()).max(1e-8);
                prop_assert!((fd - grad[i]).abs() / denom < 1e-4 || (fd - grad[i]).abs() < 1e-10);
            }
        }
    }
}
