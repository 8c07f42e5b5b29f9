//! Smoothness and printability penalties on the patch pixel view.

use serde::{Deserialize, Serialize};

use super::palette::Palette;
use crate::error::{Error, Result};
use crate::image::{ImageRgb, Mask};
use crate::scalar::Real;

/// Anisotropic total variation over horizontally and vertically adjacent
/// pixel pairs that both lie in the mask, averaged over pairs and
/// channels. Returns the value and its (sub)gradient.
pub fn tv_loss_grad<T: Real>(pixels: &ImageRgb<T>, mask: &Mask) -> (T, Vec<T>) {
    let (w, h) = (pixels.width(), pixels.height());
    assert_eq!((w, h), (mask.width(), mask.height()), "mask size mismatch");
    let d = pixels.data();
    let mut pairs = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            if x + 1 < w && mask.get(x + 1, y) {
                pairs.push((y * w + x, y * w + x + 1));
            }
            if y + 1 < h && mask.get(x, y + 1) {
                pairs.push((y * w + x, (y + 1) * w + x));
            }
        }
    }
    let mut grad = vec![T::zero(); d.len()];
    if pairs.is_empty() {
        return (T::zero(), grad);
    }
    let norm = T::one() / T::lit((pairs.len() * 3) as f64);
    let mut total = T::zero();
    for (a, b) in pairs {
        for c in 0..3 {
            let diff = d[a * 3 + c] - d[b * 3 + c];
            total += diff.abs();
            let s = if diff > T::zero() {
                norm
            } else if diff < T::zero() {
                -norm
            } else {
                T::zero()
            };
            grad[a * 3 + c] += s;
            grad[b * 3 + c] -= s;
        }
    }
    (total * norm, grad)
}

pub fn tv_loss<T: Real>(pixels: &ImageRgb<T>, mask: &Mask) -> T {
    tv_loss_grad(pixels, mask).0
}

/// Printability penalty formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NpsVariant {
    /// Mean over pixels of the squared distance to the nearest palette color.
    #[default]
    MinSquared,
    /// Mean over pixels of the product of distances to every palette color.
    Product,
}

/// Non-printability score over in-mask pixels with its gradient.
pub fn nps_loss_grad<T: Real>(
    pixels: &ImageRgb<T>,
    mask: &Mask,
    palette: &Palette,
    variant: NpsVariant,
) -> Result<(T, Vec<T>)> {
    if palette.is_empty() {
        return Err(Error::Contract("empty palette".into()));
    }
    assert_eq!((pixels.width(), pixels.height()), (mask.width(), mask.height()), "mask size mismatch");
    let colors: Vec<[T; 3]> = palette.colors().iter().map(|c| c.map(T::lit)).collect();
    let n = mask.count();
    let mut grad = vec![T::zero(); pixels.data().len()];
    if n == 0 {
        return Ok((T::zero(), grad));
    }
    let inv_n = T::one() / T::lit(n as f64);
    let two = T::lit(2.0);
    let mut total = T::zero();
    for (i, (px, &on)) in pixels.data().chunks_exact(3).zip(mask.bits()).enumerate() {
        if !on {
            continue;
        }
        let diffs: Vec<[T; 3]> = colors.iter().map(|c| [px[0] - c[0], px[1] - c[1], px[2] - c[2]]).collect();
        let sq: Vec<T> = diffs.iter().map(|d| d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).collect();
        let g = &mut grad[i * 3..i * 3 + 3];
        match variant {
            NpsVariant::MinSquared => {
                let mut k = 0;
                for j in 1..sq.len() {
                    if sq[j] < sq[k] {
                        k = j;
                    }
                }
                total += sq[k];
                for c in 0..3 {
                    g[c] = two * diffs[k][c] * inv_n;
                }
            }
            NpsVariant::Product => {
                let dist: Vec<T> = sq.iter().map(|s| s.sqrt()).collect();
                total += dist.iter().copied().fold(T::one(), |a, b| a * b);
                for k in 0..dist.len() {
                    if dist[k] == T::zero() {
                        continue;
                    }
                    let others = dist
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != k)
                        .fold(T::one(), |a, (_, &b)| a * b);
                    for c in 0..3 {
                        g[c] += others * diffs[k][c] / dist[k] * inv_n;
                    }
                }
            }
        }
    }
    Ok((total * inv_n, grad))
}

pub fn nps_loss<T: Real>(pixels: &ImageRgb<T>, mask: &Mask, palette: &Palette) -> Result<T> {
    Ok(nps_loss_grad(pixels, mask, palette, NpsVariant::MinSquared)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> ImageRgb<f64> {
        ImageRgb::from_fn(w, h, |x, y| [f(x, y); 3])
    }

    #[test]
    fn tv_of_constant_is_zero() {
        let img = ImageRgb::filled(5, 4, [0.3, 0.6, 0.9]);
        assert_eq!(tv_loss(&img, &Mask::full(5, 4)), 0.0);
    }

    #[test]
    fn tv_ignores_pairs_leaving_the_mask() {
        let img = gray(2, 1, |x, _| x as f64);
        let mask = Mask::from_bits(2, 1, vec![true, false]).unwrap();
        assert_eq!(tv_loss(&img, &mask), 0.0);
    }

    #[test]
    fn tv_gradient_matches_finite_differences() {
        let img = ImageRgb::from_fn(5, 4, |x, y| {
            [(x * 3 + y) as f64 * 0.07, (x * y) as f64 * 0.05 + 0.01, 0.3 + 0.013 * x as f64]
        });
        let mask = crate::image::make_mask(&crate::image::MaskShape::Ellipse, 5, 4).unwrap();
        let (_, g) = tv_loss_grad(&img, &mask);
        let eps = 1e-7;
        for i in 0..img.data().len() {
            let mut hi = img.clone();
            let mut lo = img.clone();
            hi.data_mut()[i] += eps;
            lo.data_mut()[i] -= eps;
            let fd = (tv_loss(&hi, &mask) - tv_loss(&lo, &mask)) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-6, "i={i}");
        }
    }

    #[test]
    fn nps_product_gradient_matches_finite_differences() {
        let img = ImageRgb::from_fn(3, 2, |x, y| [0.1 + 0.2 * x as f64, 0.7 - 0.3 * y as f64, 0.45]);
        let mask = Mask::full(3, 2);
        let pal = Palette::new(vec![[0.0, 0.0, 0.0], [1.0, 0.5, 0.2], [0.3, 0.3, 0.9]]).unwrap();
        for variant in [NpsVariant::MinSquared, NpsVariant::Product] {
            let (_, g) = nps_loss_grad(&img, &mask, &pal, variant).unwrap();
            let f = |im: &ImageRgb<f64>| nps_loss_grad(im, &mask, &pal, variant).unwrap().0;
            let eps = 1e-6;
            for i in 0..img.data().len() {
                let mut hi = img.clone();
                let mut lo = img.clone();
                hi.data_mut()[i] += eps;
                lo.data_mut()[i] -= eps;
                let fd = (f(&hi) - f(&lo)) / (2.0 * eps);
                assert!((fd - g[i]).abs() < 1e-6, "{variant:?} i={i}");
            }
        }
    }
}
