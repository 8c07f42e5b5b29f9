//! Small convolutional backbone with a single-scale anchor grid head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{leaky_relu_backward, leaky_relu_inplace, Conv2d, ConvShape, Tensor3};
use crate::error::{Error, Result};
use crate::image::{ImageRgb, SampleMap};
use crate::scalar::Real;

/// Per-anchor channels besides the class logits: tx, ty, tw, th, objectness.
pub const BOX_CHANNELS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Square input side in pixels.
    pub input_size: usize,
    /// Output channels of the stride-2 stages.
    pub stages: Vec<usize>,
    /// Stride-1 3x3 layers appended after the last stage.
    pub context_layers: usize,
    /// Anchor (w, h) in normalized image units.
    pub anchors: Vec<[f64; 2]>,
    pub class_names: Vec<String>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            stages: vec![16, 32, 48],
            context_layers: 1,
            anchors: vec![[0.10, 0.25], [0.22, 0.22], [0.40, 0.20]],
            class_names: crate::target::toy_classes().into_iter().map(|c| c.name).collect(),
        }
    }
}

impl DetectorConfig {
    pub fn num_anchors(&self) -> usize {
        self.anchors.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn slot_len(&self) -> usize {
        BOX_CHANNELS + self.num_classes()
    }

    pub fn grid(&self) -> usize {
        self.input_size >> self.stages.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() || self.stages.contains(&0) {
            return Err(Error::Contract("detector needs non-empty, non-zero stages".into()));
        }
        if !self.input_size.is_multiple_of(1 << self.stages.len()) || self.grid() == 0 {
            return Err(Error::Contract(format!(
                "input size {} not divisible by 2^{}",
                self.input_size,
                self.stages.len()
            )));
        }
        if self.anchors.is_empty() || self.anchors.iter().flatten().any(|&v| !(v > 0.0)) {
            return Err(Error::Contract("anchors must be non-empty and positive".into()));
        }
        if self.class_names.is_empty() {
            return Err(Error::Contract("detector needs at least one class".into()));
        }
        Ok(())
    }

    pub fn layer_shapes(&self) -> Vec<ConvShape> {
        let mut shapes = Vec::new();
        let mut c = 3;
        for &out in &self.stages {
            shapes.push(ConvShape {
                in_c: c,
                out_c: out,
                kernel: 3,
                stride: 2,
                pad: 1,
            });
            c = out;
        }
        for _ in 0..self.context_layers {
            shapes.push(ConvShape {
                in_c: c,
                out_c: c,
                kernel: 3,
                stride: 1,
                pad: 1,
            });
        }
        shapes.push(ConvShape {
            in_c: c,
            out_c: self.num_anchors() * self.slot_len(),
            kernel: 1,
            stride: 1,
            pad: 0,
        });
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|s| s.weight_len() + s.out_c).sum()
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn architecture_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex_digest(json.as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Head output: `grid × grid × anchors × (5 + classes)`, slot-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGridPrediction<T> {
    pub grid: usize,
    pub anchors: Vec<[f64; 2]>,
    pub num_classes: usize,
    pub data: Vec<T>,
}

impl<T: Real> RawGridPrediction<T> {
    pub fn zeros(grid: usize, anchors: Vec<[f64; 2]>, num_classes: usize) -> Self {
        let len = grid * grid * anchors.len() * (BOX_CHANNELS + num_classes);
        Self {
            grid,
            anchors,
            num_classes,
            data: vec![T::zero(); len],
        }
    }

    pub fn num_anchors(&self) -> usize {
        self.anchors.len()
    }

    pub fn slot_len(&self) -> usize {
        BOX_CHANNELS + self.num_classes
    }

    pub fn num_slots(&self) -> usize {
        self.grid * self.grid * self.num_anchors()
    }

    pub fn slot_index(&self, gx: usize, gy: usize, anchor: usize) -> usize {
        (gy * self.grid + gx) * self.num_anchors() + anchor
    }

    pub fn slot(&self, index: usize) -> &[T] {
        let d = self.slot_len();
        &self.data[index * d..(index + 1) * d]
    }

    pub fn slot_mut(&mut self, index: usize) -> &mut [T] {
        let d = self.slot_len();
        &mut self.data[index * d..(index + 1) * d]
    }

    /// `(gx, gy, anchor)` of a slot index.
    pub fn slot_coords(&self, index: usize) -> (usize, usize, usize) {
        let a = index % self.num_anchors();
        let cell = index / self.num_anchors();
        (cell % self.grid, cell / self.grid, a)
    }
}

/// Activations kept for a backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    resize: Option<SampleMap<T>>,
    source_size: (usize, usize),
    inputs: Vec<Tensor3<T>>,
    cols: Vec<Vec<T>>,
    outputs: Vec<Tensor3<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel<T> {
    config: DetectorConfig,
    layers: Vec<Conv2d<T>>,
}

/// Parameter gradients laid out like [`DetectorModel::params`].
#[derive(Debug, Clone)]
pub struct DetectorGrads<T> {
    pub layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> DetectorGrads<T> {
    pub fn zeros_like(model: &DetectorModel<T>) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| (vec![T::zero(); l.weight.len()], vec![T::zero(); l.bias.len()]))
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<T> {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b).copied()).collect()
    }
}

impl<T: Real> DetectorModel<T> {
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = config.layer_shapes();
        let n = shapes.len();
        let mut layers: Vec<Conv2d<T>> = shapes
            .into_iter()
            .enumerate()
            .map(|(i, s)| Conv2d::init(s, if i + 1 == n { 0.1 } else { 1.0 }, &mut rng))
            .collect();
        // Start with low objectness so early training is not swamped by negatives.
        let head = layers.last_mut().expect("head layer");
        let d = config.slot_len();
        for a in 0..config.num_anchors() {
            head.bias[a * d + 4] = T::lit(-4.0);
        }
        Ok(Self { config, layers })
    }

    pub fn from_params(config: DetectorConfig, params: &[f64]) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                config.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter().map(|&v| T::lit(v));
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|shape| Conv2d {
                shape,
                weight: it.by_ref().take(shape.weight_len()).collect(),
                bias: it.by_ref().take(shape.out_c).collect(),
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn class_names(&self) -> &[String] {
        &self.config.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes()
    }

    /// All parameters, weights then bias per layer.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias).map(|v| v.to_f64_lossy()))
            .collect()
    }

    /// Mutable views of every parameter buffer, in [`Self::params`] order.
    pub fn param_buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn weights_hash(&self) -> String {
        let bytes: Vec<u8> = self.params().iter().flat_map(|v| v.to_le_bytes()).collect();
        hex_digest(&bytes)
    }

    pub fn cast<U: Real>(&self) -> DetectorModel<U> {
        DetectorModel::from_params(self.config.clone(), &self.params()).expect("same config")
    }

    fn to_tensor(&self, image: &ImageRgb<T>) -> (Tensor3<T>, Option<SampleMap<T>>) {
        let s = self.config.input_size;
        let (resized, map) = if image.width() == s && image.height() == s {
            (None, None)
        } else {
            let (r, m) = image.resized(s, s);
            (Some(r), Some(m))
        };
        let img = resized.as_ref().unwrap_or(image);
        let mut t = Tensor3::zeros(3, s, s);
        let half = T::half();
        for (i, px) in img.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                t.data[c * s * s + i] = px[c] - half;
            }
        }
        (t, map)
    }

    fn to_raw(&self, head: &Tensor3<T>) -> RawGridPrediction<T> {
        let mut raw = RawGridPrediction::zeros(
            self.config.grid(),
            self.config.anchors.clone(),
            self.config.num_classes(),
        );
        let cells = head.h * head.w;
        let a_n = self.config.num_anchors();
        let d = self.config.slot_len();
        for cell in 0..cells {
            for a in 0..a_n {
                for k in 0..d {
                    raw.data[(cell * a_n + a) * d + k] = head.data[(a * d + k) * cells + cell];
                }
            }
        }
        raw
    }

    /// Inference; deterministic.
    pub fn forward(&self, image: &ImageRgb<T>) -> RawGridPrediction<T> {
        self.forward_with_cache(image).0
    }

    pub fn forward_with_cache(&self, image: &ImageRgb<T>) -> (RawGridPrediction<T>, ForwardCache<T>) {
        let (mut x, resize) = self.to_tensor(image);
        let n = self.layers.len();
        let mut cache = ForwardCache {
            resize,
            source_size: (image.width(), image.height()),
            inputs: Vec::with_capacity(n),
            cols: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let (mut y, cols) = layer.forward(&x);
            if i + 1 < n {
                leaky_relu_inplace(&mut y);
            }
            cache.inputs.push(x);
            cache.cols.push(cols);
            cache.outputs.push(y.clone());
            x = y;
        }
        (self.to_raw(&x), cache)
    }

    /// Backpropagates `grad_raw`; accumulates parameter gradients if
    /// requested and returns the gradient w.r.t. the source image (HWC) if
    /// `want_input` is set.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_raw: &[T],
        mut grads: Option<&mut DetectorGrads<T>>,
        want_input: bool,
    ) -> Option<Vec<T>> {
        let head_out = cache.outputs.last().expect("non-empty cache");
        let cells = head_out.h * head_out.w;
        let a_n = self.config.num_anchors();
        let d = self.config.slot_len();
        let mut g = Tensor3::zeros(head_out.c, head_out.h, head_out.w);
        for cell in 0..cells {
            for a in 0..a_n {
                for k in 0..d {
                    g.data[(a * d + k) * cells + cell] = grad_raw[(cell * a_n + a) * d + k];
                }
            }
        }
        let n = self.layers.len();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            if i + 1 < n {
                leaky_relu_backward(&cache.outputs[i], &mut g);
            }
            if let Some(gr) = grads.as_deref_mut() {
                let (gw, gb) = &mut gr.layers[i];
                layer.backward_params(&cache.cols[i], &g, gw, gb);
            }
            if i == 0 && !want_input {
                return None;
            }
            let input = &cache.inputs[i];
            g = layer.backward_input(&g, input.h, input.w);
        }
        let s = self.config.input_size;
        let mut hwc = vec![T::zero(); s * s * 3];
        for c in 0..3 {
            for i in 0..s * s {
                hwc[i * 3 + c] = g.data[c * s * s + i];
            }
        }
        Some(match &cache.resize {
            None => hwc,
            Some(map) => {
                let (w, h) = cache.source_size;
                let mut src = vec![T::zero(); w * h * 3];
                map.backward(&hwc, &mut src);
                src
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DetectorConfig {
        DetectorConfig {
            input_size: 16,
            stages: vec![4, 6],
            context_layers: 1,
            ..DetectorConfig::default()
        }
    }

    fn test_image(w: usize, h: usize) -> ImageRgb<f64> {
        ImageRgb::from_fn(w, h, |x, y| {
            let v = ((x * 7 + y * 13) % 11) as f64 / 11.0;
            [v, 1.0 - v, (x as f64 / w as f64)]
        })
    }

    #[test]
    fn output_shape() {
        let cfg = small();
        let m = DetectorModel::<f64>::new(cfg.clone(), 3).unwrap();
        let raw = m.forward(&test_image(16, 16));
        assert_eq!(raw.grid, 4);
        assert_eq!(raw.data.len(), 4 * 4 * 3 * (5 + 4));
    }

    #[test]
    fn params_round_trip() {
        let m = DetectorModel::<f64>::new(small(), 9).unwrap();
        let back = DetectorModel::<f64>::from_params(small(), &m.params()).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.params().len(), small().param_count());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let m = DetectorModel::<f64>::new(small(), 5).unwrap();
        // Non-native size exercises the resampling adjoint too.
        let img = test_image(20, 18);
        let objectness_sum = |raw: &RawGridPrediction<f64>| -> f64 {
            (0..raw.num_slots()).map(|s| raw.slot(s)[4]).sum()
        };
        let (raw, cache) = m.forward_with_cache(&img);
        let mut g = vec![0.0; raw.data.len()];
        for s in 0..raw.num_slots() {
            g[s * raw.slot_len() + 4] = 1.0;
        }
        let grad = m.backward(&cache, &g, None, true).unwrap();
        let eps = 1e-5;
        for i in (0..img.data().len()).step_by(37) {
            let mut hi = img.clone();
            let mut lo = img.clone();
            hi.data_mut()[i] += eps;
            lo.data_mut()[i] -= eps;
            let fd = (objectness_sum(&m.forward(&hi)) - objectness_sum(&m.forward(&lo))) / (2.0 * eps);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(err < 1e-2, "i={i} fd={fd} an={}", grad[i]);
        }
    }
}
