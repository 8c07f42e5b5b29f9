use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transcender::detector::{decode, decode_slot, detector_loss, DetectorConfig, DetectorLossWeights};
use transcender::objective::{nps_loss, nps_loss_grad, total_objective, tv_loss, tv_loss_grad, Palette, Regularization, Scene, View, ViewLink};
use transcender::pipeline::{Optimizer, RunSpec};
use transcender::transforms::{apply_chain, enumerate_configs, FilterRanges, Method};
use transcender::{toy_classes, BBox, Detector64, GroundTruth, Image64, Mask, Patch64, RawGridPrediction};

fn random_raw(rng: &mut impl Rng, scale: f64) -> RawGridPrediction<f64> {
    let cfg = DetectorConfig::default();
    let mut raw = RawGridPrediction::zeros(4, cfg.anchors.clone(), cfg.num_classes());
    raw.data.iter_mut().for_each(|v| *v = rng.random_range(-scale..=scale));
    raw
}

fn random_gt(rng: &mut impl Rng) -> GroundTruth {
    let w = rng.random_range(0.05..0.6);
    let h = rng.random_range(0.05..0.6);
    let cx = rng.random_range(w / 2.0..1.0 - w / 2.0);
    let cy = rng.random_range(h / 2.0..1.0 - h / 2.0);
    GroundTruth::new(BBox::new(cx, cy, w, h), rng.random_range(0..4), 4).unwrap()
}

fn small_detector(seed: u64) -> Detector64 {
    Detector64::new(DetectorConfig::default(), seed).unwrap()
}

fn small_spec(method: Method, index: usize, seed: u64) -> RunSpec {
    let config = enumerate_configs(method)[index].clone();
    let mut spec = RunSpec::new(config, toy_classes()[0].clone(), seed);
    spec.patch_size = 12;
    spec.batch_size = 1;
    spec.epochs = 1;
    spec.steps_per_epoch = 4;
    spec
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_are_probabilities(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = random_raw(&mut rng, 20.0);
        for slot in 0..raw.num_slots() {
            let det = decode_slot(&raw, slot);
            prop_assert!((0.0..=1.0).contains(&det.objectness));
            prop_assert!((det.class_probs.iter().sum::<f64>() - 1.0).abs() < 1e-5);
            for c in 0..4 {
                prop_assert!((0.0..=1.0).contains(&det.score(c)));
            }
        }
    }

    #[test]
    fn raising_objectness_keeps_the_detection(seed in any::<u64>(), bump in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut raw = random_raw(&mut rng, 3.0);
        let (conf, nms) = (0.3, 0.45);
        let before = decode(&raw, conf, nms).unwrap();
        prop_assume!(!before.is_empty());
        let slot = before[rng.random_range(0..before.len())].slot;
        let d = raw.slot_len();
        raw.data[slot * d + 4] += bump;
        let after = decode(&raw, conf, nms).unwrap();
        prop_assert!(after.iter().any(|det| det.slot == slot));
    }

    #[test]
    fn attack_loss_is_non_negative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = random_raw(&mut rng, 10.0);
        let gt = random_gt(&mut rng);
        prop_assert!(detector_loss(&raw, &gt).unwrap() >= 0.0);
    }

    #[test]
    fn regularizers_ignore_masked_out_logits(
        bits in prop::collection::vec(any::<bool>(), 6 * 6),
        logits in prop::collection::vec(-3.0f64..3.0, 6 * 6 * 3),
        noise in prop::collection::vec(-3.0f64..3.0, 6 * 6 * 3),
    ) {
        let mask = Mask::from_bits(6, 6, bits.clone()).unwrap();
        let a = Patch64::from_logits(mask.clone(), logits.clone()).unwrap();
        let changed: Vec<f64> = logits
            .iter()
            .zip(&noise)
            .enumerate()
            .map(|(i, (l, n))| if bits[i / 3] { *l } else { *n })
            .collect();
        let b = Patch64::from_logits(mask.clone(), changed).unwrap();
        let palette = Palette::lattice();
        prop_assert_eq!(tv_loss(&a.pixels(), &mask), tv_loss(&b.pixels(), &mask));
        prop_assert_eq!(
            nps_loss(&a.pixels(), &mask, &palette).unwrap(),
            nps_loss(&b.pixels(), &mask, &palette).unwrap()
        );
        let (_, ga) = tv_loss_grad(&a.pixels(), &mask);
        for (i, g) in ga.iter().enumerate() {
            if !bits[i / 3] {
                prop_assert_eq!(*g, 0.0);
            }
        }
    }
}

#[test]
fn perfect_match_limit_drives_loss_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gt = random_gt(&mut rng);
    let cfg = DetectorConfig::default();
    let mut raw = RawGridPrediction::zeros(4, cfg.anchors.clone(), cfg.num_classes());
    // push objectness and target class up; box terms follow the targets
    let mut losses = Vec::new();
    for big in [2.0, 8.0, 32.0] {
        let d = raw.slot_len();
        for slot in 0..raw.num_slots() {
            raw.data[slot * d + 4] = big;
            for c in 0..4 {
                raw.data[slot * d + 5 + c] = if c == gt.target_class { big } else { -big };
            }
        }
        losses.push(detector_loss(&raw, &gt).unwrap());
    }
    assert!(losses[0] > losses[1] && losses[1] > losses[2], "{losses:?}");
}

#[test]
fn objective_is_sum_of_its_parts() {
    let det = small_detector(5);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let patch = Patch64::random(Mask::full(64, 64), 2.0, &mut rng);
    let ranges = FilterRanges::default();
    let (image, chain) = apply_chain(&[], &ranges, &patch.pixels()).unwrap();
    let gt = random_gt(&mut rng);
    let scenes = vec![Scene {
        chain,
        views: vec![View { image: image.clone(), gt, link: ViewLink::Identity }],
    }];
    let reg = Regularization::default();
    let w = DetectorLossWeights::default();
    let v = total_objective(&patch, &scenes, &det, &reg, &w).unwrap();

    let e = detector_loss(&det.forward(&image), &gt).unwrap();
    let tv = tv_loss(&patch.pixels(), patch.mask());
    let nps = nps_loss(&patch.pixels(), patch.mask(), &reg.palette).unwrap();
    let expect = e + reg.weights.c1 * tv + reg.weights.c2 * nps;
    assert_eq!(v.detection, e);
    assert_eq!(v.tv, tv);
    assert_eq!(v.nps, nps);
    assert!((v.total - expect).abs() <= 1e-12 * expect.abs().max(1.0));

    // identity transforms with a single view: repeated evaluation is exact
    let again = total_objective(&patch, &scenes, &det, &reg, &w).unwrap();
    assert_eq!(v.total.to_bits(), again.total.to_bits());
    assert_eq!(v.grad_logits, again.grad_logits);
}

#[test]
fn loss_formula_examples() {
    let board = Image64::from_fn(2, 2, |x, y| if (x + y) % 2 == 0 { [0.0; 3] } else { [1.0; 3] });
    assert!((tv_loss(&board, &Mask::full(2, 2)) - 1.0).abs() < 1e-9);
    let white = Image64::filled(1, 1, [1.0; 3]);
    let black = Palette::new(vec![[0.0; 3]]).unwrap();
    assert!((nps_loss(&white, &Mask::full(1, 1), &black).unwrap() - 3.0).abs() < 1e-9);
    let (_, g) = nps_loss_grad(&white, &Mask::full(1, 1), &black, Default::default()).unwrap();
    assert!(g.iter().all(|v| *v > 0.0));
}

#[test]
fn gradient_reaches_the_logits_through_renderer_and_filters() {
    let det = small_detector(2);
    for (method, index) in [(Method::Transcender, 1), (Method::TranscenderMc, 1), (Method::ShapeShifter, 5)] {
        let spec = small_spec(method, index, 4);
        let opt = Optimizer::new(&spec, &det).unwrap();
        let state = opt.init_state();
        let (scenes, _, _) = opt.sample_batch(&state, None).unwrap();
        assert!(!scenes.is_empty());
        let v = opt.objective(&state, &scenes).unwrap();
        assert!(v.grad_logits.iter().all(|g| g.is_finite()), "{method:?}");
        assert!(v.grad_logits.iter().any(|g| *g != 0.0), "{method:?}");
    }
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let det = small_detector(8);
    for (method, index) in [(Method::Transcender, 1), (Method::ShapeShifter, 9)] {
        let spec = small_spec(method, index, 21);
        let opt = Optimizer::new(&spec, &det).unwrap();
        let state = opt.init_state();
        let total = |s: &transcender::pipeline::RunState| -> (f64, Vec<f64>) {
            let (scenes, _, _) = opt.sample_batch(s, None).unwrap();
            let v = opt.objective(s, &scenes).unwrap();
            (v.total, v.grad_logits)
        };
        let (_, grad) = total(&state);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        // logits with a negligible gradient only measure rounding noise
        let peak = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let live: Vec<usize> = (0..grad.len()).filter(|&i| grad[i].abs() > 1e-3 * peak).collect();
        assert!(live.len() >= 10);
        let eps = 1e-5;
        for _ in 0..10 {
            let i = live[rng.random_range(0..live.len())];
            let mut hi = state.clone();
            hi.logits[i] += eps;
            let mut lo = state.clone();
            lo.logits[i] -= eps;
            let fd = (total(&hi).0 - total(&lo).0) / (2.0 * eps);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs());
            assert!(rel < 1e-2, "{method:?} logit {i}: {} vs {fd}", grad[i]);
        }
    }
}
