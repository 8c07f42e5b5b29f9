//! Expected detector loss over sampled views plus weighted TV and NPS
//! regularizers, differentiated w.r.t. the patch logits.

pub mod palette;
pub mod regularizers;

use serde::{Deserialize, Serialize};

pub use palette::Palette;
pub use regularizers::{nps_loss, nps_loss_grad, tv_loss, tv_loss_grad, NpsVariant};

use crate::detector::{detector_loss_grad, DetectorLossWeights, DetectorModel};
use crate::error::{Error, Result};
use crate::image::ImageRgb;
use crate::patch::Patch;
use crate::renderer::{AdvTexture, RenderOutput};
use crate::scalar::Real;
use crate::target::GroundTruth;
use crate::transforms::{AffinePlacement, ChainTape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// TV weight.
    pub c1: f64,
    /// NPS weight.
    pub c2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { c1: 1e-5, c2: 1e-6 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 >= 0.0 && self.c2 >= 0.0 && self.c1.is_finite() && self.c2.is_finite()) {
            return Err(Error::Contract(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// How a view's detector input depends on the filtered patch.
#[derive(Debug, Clone)]
pub enum ViewLink<T> {
    /// The image is the filtered patch itself.
    Identity,
    Affine(AffinePlacement<T>),
    Render {
        texture: AdvTexture<T>,
        render: RenderOutput<T>,
    },
}

/// One detector input with its truth box.
#[derive(Debug, Clone)]
pub struct View<T> {
    pub image: ImageRgb<T>,
    pub gt: GroundTruth,
    pub link: ViewLink<T>,
}

impl<T: Real> View<T> {
    /// Gradient w.r.t. the filtered patch given the gradient w.r.t. the
    /// composited image (background receives none).
    pub fn backward(&self, grad_image: &[T]) -> Vec<T> {
        match &self.link {
            ViewLink::Identity => grad_image.to_vec(),
            ViewLink::Affine(p) => p.backward(grad_image),
            ViewLink::Render { texture, render } => texture.backward(&render.backward(grad_image)),
        }
    }
}

/// Views sharing one sampled filter chain.
#[derive(Debug, Clone)]
pub struct Scene<T> {
    pub chain: ChainTape<T>,
    pub views: Vec<View<T>>,
}

/// Regularizer settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Regularization {
    pub weights: LossWeights,
    pub palette: Palette,
    pub nps_variant: NpsVariant,
}

#[derive(Debug, Clone)]
pub struct ObjectiveValue<T> {
    pub total: T,
    /// Mean detector loss over all views.
    pub detection: T,
    pub tv: T,
    pub nps: T,
    pub view_losses: Vec<T>,
    pub grad_logits: Vec<T>,
}

/// Evaluates the objective and its gradient w.r.t. `patch`'s logits.
/// Scenes must have been built from `patch.pixels()`.
pub fn total_objective<T: Real>(
    patch: &Patch<T>,
    scenes: &[Scene<T>],
    detector: &DetectorModel<T>,
    reg: &Regularization,
    det_weights: &DetectorLossWeights,
) -> Result<ObjectiveValue<T>> {
    reg.weights.validate()?;
    let n_views: usize = scenes.iter().map(|s| s.views.len()).sum();
    if n_views == 0 {
        return Err(Error::DegeneratePlacement("no valid view in the batch".into()));
    }
    let pixels = patch.pixels();
    let inv = T::one() / T::lit(n_views as f64);
    let mut grad_pixels = vec![T::zero(); pixels.data().len()];
    let mut view_losses = Vec::with_capacity(n_views);
    for scene in scenes {
        let mut grad_filtered = vec![T::zero(); grad_pixels.len()];
        for view in &scene.views {
            let (raw, cache) = detector.forward_with_cache(&view.image);
            let (loss, mut g) = detector_loss_grad(&raw, &view.gt, det_weights)?;
            g.iter_mut().for_each(|v| *v *= inv);
            let g_img = detector.backward(&cache, &g, None, true).expect("input gradient");
            for (a, b) in grad_filtered.iter_mut().zip(view.backward(&g_img)) {
                *a += b;
            }
            view_losses.push(loss);
        }
        for (a, b) in grad_pixels.iter_mut().zip(scene.chain.backward(&grad_filtered)) {
            *a += b;
        }
    }
    let detection = view_losses.iter().copied().sum::<T>() * inv;
    let (tv, g_tv) = tv_loss_grad(&pixels, patch.mask());
    let (nps, g_nps) = nps_loss_grad(&pixels, patch.mask(), &reg.palette, reg.nps_variant)?;
    let c1 = T::lit(reg.weights.c1);
    let c2 = T::lit(reg.weights.c2);
    for ((g, t), n) in grad_pixels.iter_mut().zip(&g_tv).zip(&g_nps) {
        *g += c1 * *t + c2 * *n;
    }
    Ok(ObjectiveValue {
        total: detection + c1 * tv + c2 * nps,
        detection,
        tv,
        nps,
        view_losses,
        grad_logits: patch.pixels_backward(&grad_pixels),
    })
}
