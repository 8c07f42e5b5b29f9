//! Turning raw grid output into scored boxes.

use serde::{Deserialize, Serialize};

use super::model::RawGridPrediction;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softmax_into, Real};

/// Width/height exponent clamp used when decoding.
pub const MAX_LOG_SCALE: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub objectness: f64,
    pub class_probs: Vec<f64>,
    /// Slot the detection was decoded from.
    pub slot: usize,
}

impl Detection {
    /// `objectness × class_probs[class]`; zero for an unknown class.
    pub fn score(&self, class: usize) -> f64 {
        self.class_probs.get(class).map_or(0.0, |p| self.objectness * p)
    }

    pub fn best_class(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.class_probs.iter().enumerate() {
            if p > self.class_probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn best_score(&self) -> f64 {
        self.score(self.best_class())
    }
}

/// Decodes one slot regardless of thresholds.
pub fn decode_slot<T: Real>(raw: &RawGridPrediction<T>, slot: usize) -> Detection {
    let (gx, gy, a) = raw.slot_coords(slot);
    let v = raw.slot(slot);
    let s = raw.grid as f64;
    let f = |t: T| t.to_f64_lossy();
    let cx = (gx as f64 + sigmoid(f(v[0]))) / s;
    let cy = (gy as f64 + sigmoid(f(v[1]))) / s;
    let [aw, ah] = raw.anchors[a];
    let w = aw * f(v[2]).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
    let h = ah * f(v[3]).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
    let logits: Vec<f64> = v[5..].iter().map(|&t| f(t)).collect();
    let mut class_probs = vec![0.0; logits.len()];
    softmax_into(&logits, &mut class_probs);
    Detection {
        bbox: BBox::new(cx, cy, w, h),
        objectness: sigmoid(f(v[4])),
        class_probs,
        slot,
    }
}

/// Keeps slots with objectness ≥ `conf_threshold`, then greedy NMS per
/// best class. Output is sorted by descending best-class score.
pub fn decode<T: Real>(raw: &RawGridPrediction<T>, conf_threshold: f64, nms_iou: f64) -> Result<Vec<Detection>> {
    if !(0.0..=1.0).contains(&conf_threshold) || !(0.0..=1.0).contains(&nms_iou) {
        return Err(Error::Contract(format!(
            "thresholds must lie in [0,1], got conf={conf_threshold} nms={nms_iou}"
        )));
    }
    let mut cands: Vec<Detection> = (0..raw.num_slots())
        .filter(|&s| sigmoid(raw.slot(s)[4].to_f64_lossy()) >= conf_threshold)
        .map(|s| decode_slot(raw, s))
        .collect();
    cands.sort_by(|a, b| b.best_score().total_cmp(&a.best_score()).then(a.slot.cmp(&b.slot)));
    Ok(nms(cands, nms_iou))
}

/// Greedy suppression within each best class; input must be sorted.
pub fn nms(sorted: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        let c = d.best_class();
        let suppressed = kept
            .iter()
            .any(|k| k.best_class() == c && k.bbox.iou(&d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_raw() -> RawGridPrediction<f64> {
        let mut raw = RawGridPrediction::zeros(4, vec![[0.2, 0.2], [0.4, 0.1]], 3);
        for s in 0..raw.num_slots() {
            raw.slot_mut(s)[4] = -30.0;
        }
        raw
    }

    #[test]
    fn very_negative_objectness_gives_nothing() {
        assert!(decode(&empty_raw(), 0.01, 0.5).unwrap().is_empty());
    }

    #[test]
    fn single_dominant_cell_decodes_by_hand() {
        let mut raw = empty_raw();
        let slot = raw.slot_index(2, 1, 1);
        let v = raw.slot_mut(slot);
        v.copy_from_slice(&[0.0, 0.0, 2f64.ln(), 0.0, 5.0, 0.0, 3.0, 0.0]);
        let dets = decode(&raw, 0.5, 0.5).unwrap();
        assert_eq!(dets.len(), 1);
        let d = &dets[0];
        // Cell (2,1) of a 4x4 grid, offsets at the cell middle.
        assert!((d.bbox.cx - 2.5 / 4.0).abs() < 1e-12);
        assert!((d.bbox.cy - 1.5 / 4.0).abs() < 1e-12);
        assert!((d.bbox.w - 0.8).abs() < 1e-12);
        assert!((d.bbox.h - 0.1).abs() < 1e-12);
        assert!((d.objectness - 1.0 / (1.0 + (-5f64).exp())).abs() < 1e-12);
        assert_eq!(d.best_class(), 1);
        let e3 = 3f64.exp();
        assert!((d.class_probs[1] - e3 / (e3 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn identical_boxes_collapse() {
        let d = Detection {
            bbox: BBox::new(0.5, 0.5, 0.2, 0.2),
            objectness: 0.9,
            class_probs: vec![1.0, 0.0],
            slot: 0,
        };
        let mut e = d.clone();
        e.slot = 1;
        e.objectness = 0.8;
        assert_eq!(nms(vec![d, e], 0.5).len(), 1);
    }

    #[test]
    fn rejects_bad_thresholds() {
        assert!(decode(&empty_raw(), 1.5, 0.5).is_err());
    }
}
