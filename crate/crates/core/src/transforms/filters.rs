//! Color-space filters applied to the patch before placement.
//!
//! Each filter returns its output together with a tape holding whatever the
//! adjoint needs; sampled randomness (the noise tensor, the blur kernel) is
//! frozen inside the tape so the backward pass sees a fixed function.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageRgb;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Brightness,
    Contrast,
    MotionBlur,
    GaussianNoise,
    Hue,
}

impl FilterKind {
    /// Composition order of a sampled chain.
    pub const CANONICAL_ORDER: [FilterKind; 5] = [
        FilterKind::Brightness,
        FilterKind::Contrast,
        FilterKind::MotionBlur,
        FilterKind::GaussianNoise,
        FilterKind::Hue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Brightness => "brightness",
            FilterKind::Contrast => "contrast",
            FilterKind::MotionBlur => "motion_blur",
            FilterKind::GaussianNoise => "gaussian_noise",
            FilterKind::Hue => "hue",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::CANONICAL_ORDER.into_iter().find(|k| k.name() == s)
    }
}

/// Closed parameter intervals for every filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterRanges {
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
    /// Kernel length as a fraction of the image width.
    pub blur_fraction: (f64, f64),
    pub blur_angle_deg: (f64, f64),
    pub noise_sigma: (f64, f64),
    /// Optional cap applied when sampling the noise deviation.
    pub noise_sigma_cap: f64,
    pub hue_shift: (f64, f64),
}

impl Default for FilterRanges {
    fn default() -> Self {
        Self {
            brightness: (0.5, 1.35),
            contrast: (0.5, 1.35),
            blur_fraction: (0.0, 0.02),
            blur_angle_deg: (0.0, 360.0),
            noise_sigma: (0.0, 1.0),
            noise_sigma_cap: 1.0,
            hue_shift: (-0.5, 0.5),
        }
    }
}

/// One filter with concrete parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampledFilter {
    Brightness { alpha: f64 },
    Contrast { beta: f64 },
    MotionBlur { fraction: f64, angle_deg: f64 },
    /// The noise tensor is regenerated from `seed` for the image size.
    GaussianNoise { sigma: f64, seed: u64 },
    Hue { shift: f64 },
}

impl SampledFilter {
    pub fn kind(&self) -> FilterKind {
        match self {
            SampledFilter::Brightness { .. } => FilterKind::Brightness,
            SampledFilter::Contrast { .. } => FilterKind::Contrast,
            SampledFilter::MotionBlur { .. } => FilterKind::MotionBlur,
            SampledFilter::GaussianNoise { .. } => FilterKind::GaussianNoise,
            SampledFilter::Hue { .. } => FilterKind::Hue,
        }
    }

    pub fn validate(&self, ranges: &FilterRanges) -> Result<()> {
        fn check(name: &str, v: f64, (lo, hi): (f64, f64)) -> Result<()> {
            const SLACK: f64 = 1e-12;
            if v.is_finite() && v >= lo - SLACK && v <= hi + SLACK {
                Ok(())
            } else {
                Err(Error::Contract(format!("{name} parameter {v} outside [{lo}, {hi}]")))
            }
        }
        match *self {
            SampledFilter::Brightness { alpha } => check("brightness", alpha, ranges.brightness),
            SampledFilter::Contrast { beta } => check("contrast", beta, ranges.contrast),
            SampledFilter::MotionBlur {
                fraction,
                angle_deg,
            } => {
                check("motion blur size", fraction, ranges.blur_fraction)?;
                check("motion blur angle", angle_deg, ranges.blur_angle_deg)
            }
            SampledFilter::GaussianNoise { sigma, .. } => {
                check("noise sigma", sigma, ranges.noise_sigma)
            }
            SampledFilter::Hue { shift } => check("hue", shift, ranges.hue_shift),
        }
    }
}

/// Adjoint data for one filter application.
#[derive(Debug, Clone)]
pub enum FilterTape<T> {
    Identity,
    Scale {
        factor: T,
        active: Vec<bool>,
    },
    Contrast {
        beta: T,
        active: Vec<bool>,
    },
    Convolve {
        kernel: Vec<(isize, isize, T)>,
        width: usize,
        height: usize,
        active: Vec<bool>,
    },
    Additive {
        active: Vec<bool>,
    },
    Hue {
        jacobians: Vec<[[T; 3]; 3]>,
        active: Vec<bool>,
    },
}

/// Clamps in place and records which entries passed through unclamped.
fn clamp_tracked<T: Real>(data: &mut [T]) -> Vec<bool> {
    data.iter_mut()
        .map(|v| {
            if *v < T::zero() {
                *v = T::zero();
                false
            } else if *v > T::one() {
                *v = T::one();
                false
            } else {
                true
            }
        })
        .collect()
}

/// Applies one filter and clamps the result to `[0, 1]`.
pub fn apply_filter<T: Real>(
    filter: &SampledFilter,
    ranges: &FilterRanges,
    image: &ImageRgb<T>,
) -> Result<(ImageRgb<T>, FilterTape<T>)> {
    filter.validate(ranges)?;
    let (w, h) = (image.width(), image.height());
    match *filter {
        SampledFilter::Brightness { alpha } => {
            if alpha == 1.0 {
                return Ok((image.clone(), FilterTape::Identity));
            }
            let a = T::lit(alpha);
            let mut data: Vec<T> = image.data().iter().map(|&v| v * a).collect();
            let active = clamp_tracked(&mut data);
            Ok((ImageRgb::from_vec(w, h, data)?, FilterTape::Scale { factor: a, active }))
        }
        SampledFilter::Contrast { beta } => {
            if beta == 1.0 {
                return Ok((image.clone(), FilterTape::Identity));
            }
            let b = T::lit(beta);
            let mean = image.mean();
            let mut data: Vec<T> = image.data().iter().map(|&v| b * (v - mean) + mean).collect();
            let active = clamp_tracked(&mut data);
            Ok((ImageRgb::from_vec(w, h, data)?, FilterTape::Contrast { beta: b, active }))
        }
        SampledFilter::MotionBlur {
            fraction,
            angle_deg,
        } => {
            let kernel = motion_kernel::<T>(fraction, angle_deg, w);
            if kernel.len() == 1 {
                return Ok((image.clone(), FilterTape::Identity));
            }
            let src = image.data();
            let mut data = vec![T::zero(); src.len()];
            for y in 0..h {
                for x in 0..w {
                    let o = (y * w + x) * 3;
                    for &(dx, dy, k) in &kernel {
                        let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        let s = (sy * w + sx) * 3;
                        data[o] += k * src[s];
                        data[o + 1] += k * src[s + 1];
                        data[o + 2] += k * src[s + 2];
                    }
                }
            }
            let active = clamp_tracked(&mut data);
            Ok((
                ImageRgb::from_vec(w, h, data)?,
                FilterTape::Convolve {
                    kernel,
                    width: w,
                    height: h,
                    active,
                },
            ))
        }
        SampledFilter::GaussianNoise { sigma, seed } => {
            if sigma == 0.0 {
                return Ok((image.clone(), FilterTape::Identity));
            }
            let noise = noise_tensor::<T>(sigma, seed, image.data().len());
            let mut data: Vec<T> = image.data().iter().zip(&noise).map(|(&v, &n)| v + n).collect();
            let active = clamp_tracked(&mut data);
            Ok((ImageRgb::from_vec(w, h, data)?, FilterTape::Additive { active }))
        }
        SampledFilter::Hue { shift } => {
            if shift == 0.0 {
                return Ok((image.clone(), FilterTape::Identity));
            }
            let s = T::lit(shift);
            let mut data = Vec::with_capacity(image.data().len());
            let mut jacobians = Vec::with_capacity(image.pixel_count());
            for px in image.data().chunks_exact(3) {
                let (out, jac) = hue_shift_pixel([px[0], px[1], px[2]], s);
                data.extend_from_slice(&out);
                jacobians.push(jac);
            }
            let active = clamp_tracked(&mut data);
            Ok((
                ImageRgb::from_vec(w, h, data)?,
                FilterTape::Hue { jacobians, active },
            ))
        }
    }
}

impl<T: Real> FilterTape<T> {
    /// Gradient w.r.t. the filter input given the gradient w.r.t. its output.
    pub fn backward(&self, grad_out: &[T]) -> Vec<T> {
        let gated = |active: &[bool]| -> Vec<T> {
            grad_out
                .iter()
                .zip(active)
                .map(|(&g, &a)| if a { g } else { T::zero() })
                .collect()
        };
        match self {
            FilterTape::Identity => grad_out.to_vec(),
            FilterTape::Scale { factor, active } => {
                let mut g = gated(active);
                g.iter_mut().for_each(|v| *v *= *factor);
                g
            }
            FilterTape::Contrast { beta, active } => {
                let g = gated(active);
                let n = T::lit(g.len() as f64);
                let shared = (T::one() - *beta) * g.iter().copied().sum::<T>() / n;
                g.into_iter().map(|v| *beta * v + shared).collect()
            }
            FilterTape::Convolve {
                kernel,
                width,
                height,
                active,
            } => {
                let g = gated(active);
                let (w, h) = (*width, *height);
                let mut out = vec![T::zero(); g.len()];
                for y in 0..h {
                    for x in 0..w {
                        let o = (y * w + x) * 3;
                        for &(dx, dy, k) in kernel {
                            let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                            let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                            let s = (sy * w + sx) * 3;
                            out[s] += k * g[o];
                            out[s + 1] += k * g[o + 1];
                            out[s + 2] += k * g[o + 2];
                        }
                    }
                }
                out
            }
            FilterTape::Additive { active } => gated(active),
            FilterTape::Hue { jacobians, active } => {
                let g = gated(active);
                let mut out = vec![T::zero(); g.len()];
                for ((go, o), jac) in g.chunks_exact(3).zip(out.chunks_exact_mut(3)).zip(jacobians) {
                    for j in 0..3 {
                        o[j] = go[0] * jac[0][j] + go[1] * jac[1][j] + go[2] * jac[2][j];
                    }
                }
                out
            }
        }
    }
}

/// Kernel length in pixels for a blur fraction of the image width.
pub fn motion_kernel_size(fraction: f64, width: usize) -> usize {
    ((fraction * width as f64).round() as usize).max(1)
}

/// Line kernel of the given length and direction, normalized to unit sum.
/// Entries are `(dx, dy, weight)` offsets.
pub fn motion_kernel<T: Real>(fraction: f64, angle_deg: f64, width: usize) -> Vec<(isize, isize, T)> {
    let size = motion_kernel_size(fraction, width);
    if size == 1 {
        return vec![(0, 0, T::one())];
    }
    let half = (size as f64 - 1.0) / 2.0;
    let r = half.ceil() as isize + 1;
    let side = (2 * r + 1) as usize;
    let mut grid = vec![0.0f64; side * side];
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let samples = 8 * size;
    for i in 0..=samples {
        let t = -half + 2.0 * half * i as f64 / samples as f64;
        // image rows grow downward
        let (px, py) = (t * cos + r as f64, -t * sin + r as f64);
        let (x0, y0) = (px.floor(), py.floor());
        let (fx, fy) = (px - x0, py - y0);
        for (dx, dy, wgt) in [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            let (gx, gy) = (x0 as usize + dx, y0 as usize + dy);
            if gx < side && gy < side {
                grid[gy * side + gx] += wgt;
            }
        }
    }
    let total: f64 = grid.iter().sum();
    let mut kernel = Vec::new();
    for gy in 0..side {
        for gx in 0..side {
            let v = grid[gy * side + gx];
            if v > 0.0 {
                kernel.push((gx as isize - r, gy as isize - r, T::lit(v / total)));
            }
        }
    }
    kernel
}

pub fn noise_tensor<T: Real>(sigma: f64, seed: u64, len: usize) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    (0..len).map(|_| T::lit(normal.sample(&mut rng))).collect()
}

/// Rotates the HSV hue of one pixel by `shift` turns.
///
/// Returns the shifted color and its Jacobian `d out[i] / d in[j]`, exact
/// away from hue-sector boundaries.
pub fn hue_shift_pixel<T: Real>(rgb: [T; 3], shift: T) -> ([T; 3], [[T; 3]; 3]) {
    let mut imax = 0;
    let mut imin = 0;
    for i in 1..3 {
        if rgb[i] > rgb[imax] {
            imax = i;
        }
        if rgb[i] < rgb[imin] {
            imin = i;
        }
    }
    let v = rgb[imax];
    let chroma = v - rgb[imin];
    let mut identity = [[T::zero(); 3]; 3];
    (0..3).for_each(|i| identity[i][i] = T::one());
    if chroma <= T::zero() {
        return (rgb, identity);
    }

    // hue numerator and its derivative for the sector picked by the max channel
    let (num, base, dnum) = match imax {
        0 => (rgb[1] - rgb[2], 0.0, [0.0, 1.0, -1.0]),
        1 => (rgb[2] - rgb[0], 2.0, [-1.0, 0.0, 1.0]),
        _ => (rgb[0] - rgb[1], 4.0, [1.0, -1.0, 0.0]),
    };
    let q = num / chroma;
    let six = T::lit(6.0);
    let hue6 = T::lit(base) + q + six * shift;
    let hue6 = hue6 - six * (hue6 / six).floor();

    let mut dv = [T::zero(); 3];
    dv[imax] = T::one();
    let mut dc = dv;
    dc[imin] -= T::one();

    let mut out = [T::zero(); 3];
    let mut jac = [[T::zero(); 3]; 3];
    for (ch, n) in [5.0, 3.0, 1.0].into_iter().enumerate() {
        let mut k = T::lit(n) + hue6;
        if k >= six {
            k -= six;
        }
        let tri = k.min(T::lit(4.0) - k);
        let (g, dg) = if tri <= T::zero() {
            (T::zero(), T::zero())
        } else if tri >= T::one() {
            (T::one(), T::zero())
        } else if k < T::lit(4.0) - k {
            (tri, T::one())
        } else {
            (tri, -T::one())
        };
        out[ch] = v - chroma * g;
        for j in 0..3 {
            // chroma * d(hue6)/d(in_j) = dnum_j - q * dchroma_j
            let c_dh = T::lit(dnum[j]) - q * dc[j];
            jac[ch][j] = dv[j] - g * dc[j] - dg * c_dh;
        }
    }
    (out, jac)
}

/// Output and adjoint data of a filter chain.
#[derive(Debug, Clone)]
pub struct ChainTape<T> {
    tapes: Vec<FilterTape<T>>,
}

impl<T: Real> ChainTape<T> {
    pub fn backward(&self, grad_out: &[T]) -> Vec<T> {
        let mut g = grad_out.to_vec();
        for tape in self.tapes.iter().rev() {
            g = tape.backward(&g);
        }
        g
    }

    pub fn len(&self) -> usize {
        self.tapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tapes.is_empty()
    }
}

/// Applies `chain` in order; an empty chain is the identity.
pub fn apply_chain<T: Real>(
    chain: &[SampledFilter],
    ranges: &FilterRanges,
    image: &ImageRgb<T>,
) -> Result<(ImageRgb<T>, ChainTape<T>)> {
    let mut cur = image.clone();
    let mut tapes = Vec::with_capacity(chain.len());
    for f in chain {
        let (next, tape) = apply_filter(f, ranges, &cur)?;
        cur = next;
        tapes.push(tape);
    }
    Ok((cur, ChainTape { tapes }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> ImageRgb<f64> {
        ImageRgb::from_fn(w, h, |x, y| {
            let t = (x + 2 * y) as f64 / (w + 2 * h) as f64;
            [0.15 + 0.7 * t, 0.8 - 0.5 * t, 0.3 + 0.4 * ((x * y) % 3) as f64 / 3.0]
        })
    }

    #[test]
    fn brightness_one_is_identity() {
        let img = ramp(6, 5);
        let (out, _) =
            apply_filter(&SampledFilter::Brightness { alpha: 1.0 }, &FilterRanges::default(), &img)
                .unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn contrast_on_constant_image_is_identity() {
        let img = ImageRgb::filled(4, 4, [0.3f64; 3]);
        let (out, _) =
            apply_filter(&SampledFilter::Contrast { beta: 0.5 }, &FilterRanges::default(), &img)
                .unwrap();
        assert!(out.mean_abs_diff(&img) < 1e-15);
    }

    #[test]
    fn brightness_half_on_constant() {
        let img = ImageRgb::filled(3, 3, [0.8f64; 3]);
        let (out, _) =
            apply_filter(&SampledFilter::Brightness { alpha: 0.5 }, &FilterRanges::default(), &img)
                .unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn out_of_range_parameter_rejected() {
        let img = ramp(3, 3);
        let err = apply_filter(&SampledFilter::Brightness { alpha: 2.0 }, &FilterRanges::default(), &img)
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn identity_parameters_return_input_exactly() {
        let img = ramp(7, 4);
        let r = FilterRanges::default();
        for f in [
            SampledFilter::Brightness { alpha: 1.0 },
            SampledFilter::Contrast { beta: 1.0 },
            SampledFilter::MotionBlur { fraction: 0.0, angle_deg: 30.0 },
            SampledFilter::GaussianNoise { sigma: 0.0, seed: 9 },
            SampledFilter::Hue { shift: 0.0 },
        ] {
            assert_eq!(apply_filter(&f, &r, &img).unwrap().0, img, "{f:?}");
        }
    }

    #[test]
    fn hue_half_turn_twice_is_identity() {
        let img = ramp(8, 6);
        let r = FilterRanges::default();
        let f = SampledFilter::Hue { shift: 0.5 };
        let (once, _) = apply_filter(&f, &r, &img).unwrap();
        let (twice, _) = apply_filter(&f, &r, &once).unwrap();
        assert!(twice.mean_abs_diff(&img) < 1e-12);
        assert!(once.mean_abs_diff(&img) > 1e-3);
    }

    #[test]
    fn hue_shift_of_pure_red_by_third_is_green() {
        let (out, _) = hue_shift_pixel([1.0f64, 0.0, 0.0], 1.0 / 3.0);
        assert!((out[0]).abs() < 1e-12 && (out[1] - 1.0).abs() < 1e-12 && out[2].abs() < 1e-12);
    }

    #[test]
    fn motion_kernel_sums_to_one() {
        for angle in [0.0, 45.0, 90.0, 200.0] {
            let k = motion_kernel::<f64>(0.02, angle, 608);
            assert!((k.iter().map(|e| e.2).sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(k.len() > 1);
        }
        assert_eq!(motion_kernel_size(0.02, 608), 12);
        assert_eq!(motion_kernel_size(0.0, 608), 1);
    }

    fn fd_check(filter: SampledFilter, img: &ImageRgb<f64>) {
        let r = FilterRanges::default();
        let (out, tape) = apply_filter(&filter, &r, img).unwrap();
        let weights: Vec<f64> = (0..out.data().len()).map(|i| ((i * 37) % 17) as f64 / 17.0 - 0.4).collect();
        let grad = tape.backward(&weights);
        let f = |im: &ImageRgb<f64>| -> f64 {
            let (o, _) = apply_filter(&filter, &r, im).unwrap();
            o.data().iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let eps = 1e-6;
        for i in (0..img.data().len()).step_by(5) {
            let mut hi = img.clone();
            let mut lo = img.clone();
            hi.data_mut()[i] += eps;
            lo.data_mut()[i] -= eps;
            let fd = (f(&hi) - f(&lo)) / (2.0 * eps);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(err < 1e-3, "{filter:?} index {i}: fd {fd} analytic {}", grad[i]);
        }
    }

    #[test]
    fn filter_gradients_match_finite_differences() {
        let img = ramp(12, 10);
        fd_check(SampledFilter::Brightness { alpha: 1.2 }, &img);
        fd_check(SampledFilter::Contrast { beta: 0.7 }, &img);
        fd_check(SampledFilter::MotionBlur { fraction: 0.02, angle_deg: 33.0 }, &ramp(200, 6));
        fd_check(SampledFilter::GaussianNoise { sigma: 0.05, seed: 4 }, &img);
        fd_check(SampledFilter::Hue { shift: 0.27 }, &img);
    }

    proptest! {
        #[test]
        fn outputs_stay_in_unit_interval(
            alpha in 0.5f64..=1.35,
            beta in 0.5f64..=1.35,
            frac in 0.0f64..=0.02,
            angle in 0.0f64..=360.0,
            sigma in 0.0f64..=1.0,
            hue in -0.5f64..=0.5,
            seed in 0u64..1000,
        ) {
            let img = ramp(60, 9);
            let chain = [
                SampledFilter::Brightness { alpha },
                SampledFilter::Contrast { beta },
                SampledFilter::MotionBlur { fraction: frac, angle_deg: angle },
                SampledFilter::GaussianNoise { sigma, seed },
                SampledFilter::Hue { shift: hue },
            ];
            let r = FilterRanges::default();
            for f in &chain {
                let (o, _) = apply_filter(f, &r, &img).unwrap();
                prop_assert!(o.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
