//! Convolution via im2col with explicit adjoints.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Channel-major feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn patch_len(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.patch_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub shape: ConvShape,
    /// `[out_c][in_c * k * k]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Eight-lane dot product so the reduction vectorizes.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (x, y) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]);
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl<T: Real> Conv2d<T> {
    /// He-normal initialization for leaky-ReLU layers.
    pub fn init(shape: ConvShape, gain: f64, rng: &mut impl Rng) -> Self {
        let std = gain * (2.0 / shape.patch_len() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        Self {
            shape,
            weight: (0..shape.weight_len()).map(|_| T::lit(normal.sample(rng))).collect(),
            bias: vec![T::zero(); shape.out_c],
        }
    }

    fn im2col(&self, input: &Tensor3<T>) -> (Vec<T>, usize, usize) {
        let s = self.shape;
        let (oh, ow) = s.out_size(input.h, input.w);
        let n = oh * ow;
        let mut cols = vec![T::zero(); s.patch_len() * n];
        for c in 0..s.in_c {
            for ky in 0..s.kernel {
                for kx in 0..s.kernel {
                    let row = (c * s.kernel + ky) * s.kernel + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..oh {
                        let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                        if iy < 0 || iy >= input.h as isize {
                            continue;
                        }
                        let src_row = &input.data[(c * input.h + iy as usize) * input.w..][..input.w];
                        for ox in 0..ow {
                            let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                            if ix >= 0 && ix < input.w as isize {
                                dst[oy * ow + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        (cols, oh, ow)
    }

    /// Returns the output and the im2col buffer kept for the backward pass.
    pub fn forward(&self, input: &Tensor3<T>) -> (Tensor3<T>, Vec<T>) {
        let s = self.shape;
        let (cols, oh, ow) = self.im2col(input);
        let n = oh * ow;
        let k = s.patch_len();
        let mut out = Tensor3::zeros(s.out_c, oh, ow);
        for co in 0..s.out_c {
            let o = &mut out.data[co * n..(co + 1) * n];
            o.fill(self.bias[co]);
            let wrow = &self.weight[co * k..(co + 1) * k];
            for (ki, &wv) in wrow.iter().enumerate() {
                if wv != T::zero() {
                    axpy(o, wv, &cols[ki * n..(ki + 1) * n]);
                }
            }
        }
        (out, cols)
    }

    /// Accumulates weight and bias gradients.
    pub fn backward_params(&self, cols: &[T], grad_out: &Tensor3<T>, grad_w: &mut [T], grad_b: &mut [T]) {
        let s = self.shape;
        let n = grad_out.h * grad_out.w;
        let k = s.patch_len();
        for co in 0..s.out_c {
            let g = &grad_out.data[co * n..(co + 1) * n];
            grad_b[co] += g.iter().copied().sum::<T>();
            let gw = &mut grad_w[co * k..(co + 1) * k];
            for (ki, gwv) in gw.iter_mut().enumerate() {
                *gwv += dot(g, &cols[ki * n..(ki + 1) * n]);
            }
        }
    }

    /// Gradient w.r.t. the layer input.
    pub fn backward_input(&self, grad_out: &Tensor3<T>, in_h: usize, in_w: usize) -> Tensor3<T> {
        let s = self.shape;
        let (oh, ow) = (grad_out.h, grad_out.w);
        let n = oh * ow;
        let k = s.patch_len();
        let mut dcols = vec![T::zero(); k * n];
        for co in 0..s.out_c {
            let g = &grad_out.data[co * n..(co + 1) * n];
            let wrow = &self.weight[co * k..(co + 1) * k];
            for (ki, &wv) in wrow.iter().enumerate() {
                axpy(&mut dcols[ki * n..(ki + 1) * n], wv, g);
            }
        }
        let mut grad_in = Tensor3::zeros(s.in_c, in_h, in_w);
        for c in 0..s.in_c {
            for ky in 0..s.kernel {
                for kx in 0..s.kernel {
                    let row = (c * s.kernel + ky) * s.kernel + kx;
                    let src = &dcols[row * n..(row + 1) * n];
                    for oy in 0..oh {
                        let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        let base = (c * in_h + iy as usize) * in_w;
                        for ox in 0..ow {
                            let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                            if ix >= 0 && ix < in_w as isize {
                                grad_in.data[base + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

pub const LEAKY_SLOPE: f64 = 0.1;

pub fn leaky_relu_inplace<T: Real>(t: &mut Tensor3<T>) {
    let slope = T::lit(LEAKY_SLOPE);
    for v in &mut t.data {
        if *v < T::zero() {
            *v *= slope;
        }
    }
}

/// Backward through leaky ReLU given its output (sign is preserved).
pub fn leaky_relu_backward<T: Real>(activated: &Tensor3<T>, grad: &mut Tensor3<T>) {
    let slope = T::lit(LEAKY_SLOPE);
    for (g, &a) in grad.data.iter_mut().zip(&activated.data) {
        if a < T::zero() {
            *g *= slope;
        }
    }
}
