//! Training the toy detector and measuring its mean average precision.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{generate_corpus, Annotation, CorpusParams, Sample};
use super::decode::decode;
use super::loss::{training_loss_grad, DetectorLossWeights};
use super::model::{DetectorConfig, DetectorGrads, DetectorModel};
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::image::ImageRgb;
use crate::optim::Adam;
use crate::target::GroundTruth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of epochs (from the end) run at a tenth of the rate.
    pub cooldown: f64,
    pub seed: u64,
    pub corpus: CorpusParams,
    pub train_images: usize,
    pub holdout_images: usize,
    /// Required mean AP at IoU 0.5 on the holdout set.
    pub map_gate: f64,
    pub loss_weights: DetectorLossWeights,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            lr: 2e-3,
            cooldown: 0.25,
            seed: 7,
            corpus: CorpusParams::default(),
            train_images: 4000,
            holdout_images: 400,
            map_gate: 0.8,
            loss_weights: DetectorLossWeights::default(),
        }
    }
}

/// Generates the training and holdout corpora from `params.seed` and
/// trains on them.
pub fn train_from_params(
    config: DetectorConfig,
    params: &TrainParams,
) -> Result<(DetectorModel<f32>, TrainReport)> {
    let classes = crate::target::toy_classes();
    if config.class_names.iter().ne(classes.iter().map(|c| &c.name)) {
        return Err(Error::Input("the synthetic corpus only draws the toy classes".into()));
    }
    let train = generate_corpus(&classes, &params.corpus, params.train_images, params.seed)?;
    let holdout = generate_corpus(&classes, &params.corpus, params.holdout_images, params.seed ^ HOLDOUT_SALT)?;
    train_toy_detector(config, &train, &holdout, params)
}

const HOLDOUT_SALT: u64 = 0x0401_d007;

/// Thresholds used for mAP evaluation.
pub const EVAL_CONF: f64 = 0.01;
pub const EVAL_NMS_IOU: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub per_class_ap: Vec<Option<f64>>,
    pub map: f64,
    pub weights_hash: String,
    pub architecture_hash: String,
    pub wall_seconds: f64,
}

fn flip(sample: &Sample) -> Sample {
    let (w, h) = (sample.image.width(), sample.image.height());
    let image = ImageRgb::from_fn(w, h, |x, y| sample.image.get(w - 1 - x, y));
    let objects = sample
        .objects
        .iter()
        .map(|o| Annotation {
            class_id: o.class_id,
            bbox: BBox::new(1.0 - o.bbox.cx, o.bbox.cy, o.bbox.w, o.bbox.h),
        })
        .collect();
    Sample { image, objects }
}

fn truths(objects: &[Annotation], num_classes: usize) -> Result<Vec<GroundTruth>> {
    objects
        .iter()
        .map(|o| GroundTruth::new(o.bbox, o.class_id, num_classes))
        .collect()
}

/// Trains from scratch; fails with diagnostics when the holdout mAP stays
/// below the gate.
pub fn train_toy_detector(
    config: DetectorConfig,
    train: &[Sample],
    holdout: &[Sample],
    params: &TrainParams,
) -> Result<(DetectorModel<f32>, TrainReport)> {
    if train.is_empty() {
        return Err(Error::Input("empty training corpus".into()));
    }
    if params.epochs == 0 || params.batch_size == 0 {
        return Err(Error::Input("epochs and batch size must be positive".into()));
    }
    let start = Instant::now();
    let mut model = DetectorModel::<f32>::new(config, params.seed)?;
    let nc = model.num_classes();
    let mut opt = Adam::new(params.lr, model.config().param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_da7a);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let cool_from = ((1.0 - params.cooldown) * params.epochs as f64).round() as usize;
    let mut epoch_losses = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        opt.lr = if epoch >= cool_from { params.lr * 0.1 } else { params.lr };
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(params.batch_size) {
            let mut grads = DetectorGrads::zeros_like(&model);
            for &i in batch {
                let flipped;
                let sample = if rng.random_bool(0.5) {
                    flipped = flip(&train[i]);
                    &flipped
                } else {
                    &train[i]
                };
                let gts = truths(&sample.objects, nc)?;
                let (raw, cache) = model.forward_with_cache(&sample.image);
                let (loss, mut g) = training_loss_grad(&raw, &gts, &params.loss_weights)?;
                if !loss.is_finite() {
                    return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
                }
                epoch_loss += loss as f64;
                let inv = 1.0 / batch.len() as f32;
                g.iter_mut().for_each(|v| *v *= inv);
                model.backward(&cache, &g, Some(&mut grads), false);
            }
            let flat: Vec<&[f32]> = grads.layers.iter().flat_map(|(w, b)| [w.as_slice(), b.as_slice()]).collect();
            opt.step(&mut model.param_buffers_mut(), &flat);
        }
        let mean = epoch_loss / train.len() as f64;
        log::info!("detector epoch {}/{}: loss {mean:.4}", epoch + 1, params.epochs);
        epoch_losses.push(mean);
    }
    let per_class_ap = evaluate_ap(&model, holdout)?;
    let map = mean_ap(&per_class_ap);
    let report = TrainReport {
        epoch_losses,
        per_class_ap: per_class_ap.clone(),
        map,
        weights_hash: model.weights_hash(),
        architecture_hash: model.config().architecture_hash(),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    if !(map >= params.map_gate) {
        return Err(Error::Training(format!(
            "holdout mAP@0.5 {map:.3} below gate {:.2}; per-class AP {:?}; epoch losses {:?}",
            params.map_gate, per_class_ap, report.epoch_losses
        )));
    }
    Ok((model, report))
}

pub fn mean_ap(per_class: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// All-point interpolated AP at IoU 0.5 per class; `None` for classes with
/// no truth boxes in `samples`.
pub fn evaluate_ap(model: &DetectorModel<f32>, samples: &[Sample]) -> Result<Vec<Option<f64>>> {
    let nc = model.num_classes();
    // (score, image, box) per class
    let mut dets: Vec<Vec<(f64, usize, BBox)>> = vec![Vec::new(); nc];
    for (i, s) in samples.iter().enumerate() {
        for d in decode(&model.forward(&s.image), EVAL_CONF, EVAL_NMS_IOU)? {
            dets[d.best_class()].push((d.best_score(), i, d.bbox));
        }
    }
    Ok((0..nc)
        .map(|c| {
            let gts: Vec<Vec<BBox>> = samples
                .iter()
                .map(|s| s.objects.iter().filter(|o| o.class_id == c).map(|o| o.bbox).collect())
                .collect();
            average_precision(&mut dets[c], &gts)
        })
        .collect())
}

/// VOC-style all-point AP for one class.
pub fn average_precision(dets: &mut [(f64, usize, BBox)], gts: &[Vec<BBox>]) -> Option<f64> {
    let total: usize = gts.iter().map(Vec::len).sum();
    if total == 0 {
        return None;
    }
    dets.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(dets.len());
    for (k, (_, img, bbox)) in dets.iter().enumerate() {
        let mut best = None;
        let mut best_iou = 0.5;
        for (j, g) in gts[*img].iter().enumerate() {
            let iou = g.iou(bbox);
            if !used[*img][j] && iou >= best_iou {
                best_iou = iou;
                best = Some(j);
            }
        }
        if let Some(j) = best {
            used[*img][j] = true;
            tp += 1;
        }
        points.push((tp as f64 / total as f64, tp as f64 / (k + 1) as f64));
    }
    // Precision envelope, then area under the recall steps.
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..points.len() {
        let p = points[i..].iter().map(|q| q.1).fold(0.0, f64::max);
        ap += (points[i].0 - prev_recall) * p;
        prev_recall = points[i].0;
    }
    Some(ap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking_gives_unit_ap() {
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        let gts = vec![vec![b], vec![b]];
        let mut dets = vec![(0.9, 0, b), (0.8, 1, b), (0.1, 0, BBox::new(0.1, 0.1, 0.05, 0.05))];
        assert!((average_precision(&mut dets, &gts).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn false_positive_first_halves_precision() {
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        let miss = BBox::new(0.1, 0.1, 0.05, 0.05);
        let gts = vec![vec![b]];
        let mut dets = vec![(0.9, 0, miss), (0.8, 0, b)];
        assert!((average_precision(&mut dets, &gts).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn duplicate_detection_is_a_false_positive() {
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        let gts = vec![vec![b], vec![b]];
        let mut dets = vec![(0.9, 0, b), (0.8, 0, b), (0.7, 1, b)];
        // recall 0.5 @ p=1, then 1.0 @ p=2/3
        let ap = average_precision(&mut dets, &gts).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_corpus_is_an_input_error() {
        let err = train_toy_detector(DetectorConfig::default(), &[], &[], &TrainParams::default()).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }
}
