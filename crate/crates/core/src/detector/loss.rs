//! Attack-side detector loss and the detector's own training loss.

use super::decode::decode_slot;
use super::model::RawGridPrediction;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softmax_into, softplus, Real};
use crate::target::GroundTruth;

/// Weights of the loss terms; unit by default.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DetectorLossWeights {
    pub bbox: f64,
    pub objectness: f64,
    pub class: f64,
    /// Negative objectness term, training only.
    pub no_object: f64,
}

impl Default for DetectorLossWeights {
    fn default() -> Self {
        Self {
            bbox: 1.0,
            objectness: 1.0,
            class: 1.0,
            no_object: 1.0,
        }
    }
}

/// Predicted objects above this IoU with any truth box are not pushed
/// toward background during training.
pub const IGNORE_IOU: f64 = 0.5;

fn shape_iou(a: [f64; 2], w: f64, h: f64) -> f64 {
    let inter = a[0].min(w) * a[1].min(h);
    inter / (a[0] * a[1] + w * h - inter)
}

/// Responsible `(gx, gy, anchor)`: cell holding the box center, anchor of
/// best shape IoU, ties to the lowest index.
pub fn match_anchor(bbox: &BBox, grid: usize, anchors: &[[f64; 2]]) -> (usize, usize, usize) {
    let cell = |v: f64| ((v * grid as f64).floor().max(0.0) as usize).min(grid - 1);
    let mut best = 0;
    let mut best_iou = f64::NEG_INFINITY;
    for (i, &a) in anchors.iter().enumerate() {
        let iou = shape_iou(a, bbox.w, bbox.h);
        if iou > best_iou {
            best = i;
            best_iou = iou;
        }
    }
    (cell(bbox.cx), cell(bbox.cy), best)
}

/// Regression targets (fx, fy, tw, th) for a matched slot.
fn box_targets(bbox: &BBox, gx: usize, gy: usize, anchor: [f64; 2], grid: usize) -> [f64; 4] {
    let s = grid as f64;
    [
        bbox.cx * s - gx as f64,
        bbox.cy * s - gy as f64,
        (bbox.w / anchor[0]).ln(),
        (bbox.h / anchor[1]).ln(),
    ]
}

/// Positive terms for one slot, accumulating `scale × dL/draw` into `grad`.
fn positive_terms<T: Real>(
    slot: &[T],
    targets: [f64; 4],
    class: usize,
    weights: &DetectorLossWeights,
    scale: T,
    grad: &mut [T],
) -> T {
    let two = T::lit(2.0);
    let wb = T::lit(weights.bbox);
    let mut loss = T::zero();
    for k in 0..2 {
        let s = sigmoid(slot[k]);
        let diff = s - T::lit(targets[k]);
        loss += wb * diff * diff;
        grad[k] += scale * wb * two * diff * s * (T::one() - s);
    }
    for k in 2..4 {
        let diff = slot[k] - T::lit(targets[k]);
        loss += wb * diff * diff;
        grad[k] += scale * wb * two * diff;
    }
    let wo = T::lit(weights.objectness);
    loss += wo * softplus(-slot[4]);
    grad[4] += scale * wo * (sigmoid(slot[4]) - T::one());

    let wc = T::lit(weights.class);
    let logits = &slot[5..];
    let mut probs = vec![T::zero(); logits.len()];
    softmax_into(logits, &mut probs);
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln() + max;
    loss += wc * (lse - logits[class]);
    for (c, p) in probs.iter().enumerate() {
        let onehot = if c == class { T::one() } else { T::zero() };
        grad[5 + c] += scale * wc * (*p - onehot);
    }
    loss
}

fn check_gt<T: Real>(raw: &RawGridPrediction<T>, gt: &GroundTruth) -> Result<()> {
    if !gt.bbox.is_valid() || !(gt.bbox.w > 0.0 && gt.bbox.h > 0.0) {
        return Err(Error::Contract(format!("degenerate ground-truth box {:?}", gt.bbox)));
    }
    if gt.target_class >= raw.num_classes {
        return Err(Error::Contract(format!("class {} out of range", gt.target_class)));
    }
    Ok(())
}

/// Attack loss toward `gt`: box regression, objectness BCE toward 1 and
/// class cross-entropy at the matched slot. Returns the loss and its
/// gradient w.r.t. `raw.data`.
pub fn detector_loss_grad<T: Real>(
    raw: &RawGridPrediction<T>,
    gt: &GroundTruth,
    weights: &DetectorLossWeights,
) -> Result<(T, Vec<T>)> {
    check_gt(raw, gt)?;
    let (gx, gy, a) = match_anchor(&gt.bbox, raw.grid, &raw.anchors);
    let slot = raw.slot_index(gx, gy, a);
    let targets = box_targets(&gt.bbox, gx, gy, raw.anchors[a], raw.grid);
    let mut grad = vec![T::zero(); raw.data.len()];
    let d = raw.slot_len();
    let loss = positive_terms(
        raw.slot(slot),
        targets,
        gt.target_class,
        weights,
        T::one(),
        &mut grad[slot * d..(slot + 1) * d],
    );
    Ok((loss, grad))
}

pub fn detector_loss<T: Real>(raw: &RawGridPrediction<T>, gt: &GroundTruth) -> Result<T> {
    Ok(detector_loss_grad(raw, gt, &DetectorLossWeights::default())?.0)
}

/// Detector training loss for one image with any number of objects:
/// positive terms at matched slots plus background BCE elsewhere, except
/// slots whose decoded box already overlaps a truth box by more than
/// [`IGNORE_IOU`].
pub fn training_loss_grad<T: Real>(
    raw: &RawGridPrediction<T>,
    objects: &[GroundTruth],
    weights: &DetectorLossWeights,
) -> Result<(T, Vec<T>)> {
    let d = raw.slot_len();
    let mut grad = vec![T::zero(); raw.data.len()];
    let mut positive = vec![None; raw.num_slots()];
    for gt in objects {
        check_gt(raw, gt)?;
        let (gx, gy, a) = match_anchor(&gt.bbox, raw.grid, &raw.anchors);
        positive[raw.slot_index(gx, gy, a)] = Some(gt);
    }
    let mut loss = T::zero();
    let wn = T::lit(weights.no_object);
    for s in 0..raw.num_slots() {
        let g = &mut grad[s * d..(s + 1) * d];
        if let Some(gt) = positive[s] {
            let (gx, gy, a) = raw.slot_coords(s);
            let targets = box_targets(&gt.bbox, gx, gy, raw.anchors[a], raw.grid);
            loss += positive_terms(raw.slot(s), targets, gt.target_class, weights, T::one(), g);
            continue;
        }
        if !objects.is_empty() {
            let pred = decode_slot(raw, s).bbox;
            if objects.iter().any(|o| o.bbox.iou(&pred) > IGNORE_IOU) {
                continue;
            }
        }
        let o = raw.slot(s)[4];
        loss += wn * softplus(o);
        g[4] += wn * sigmoid(o);
    }
    Ok((loss, grad))
}
