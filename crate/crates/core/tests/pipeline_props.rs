mod common;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use transcender::detector::DetectorConfig;
use transcender::objective::Scene;
use transcender::pipeline::{
    choose_mesh, optimize, step_shapeshifter, StepRecord, step_transcender, step_transcender_mc, Optimizer, RunSpec, RunState,
    ABORT_FILE,
};
use transcender::renderer::{make_mesh, MeshKind, PoseRanges};
use transcender::target::class_by_name;
use transcender::transforms::{enumerate_configs, Method};
use transcender::{toy_classes, Detector64, Error};

fn untrained() -> Detector64 {
    Detector64::new(DetectorConfig::default(), 1).unwrap()
}

fn tiny_spec(method: Method, index: usize, seed: u64) -> RunSpec {
    let mut spec = RunSpec::new(enumerate_configs(method)[index].clone(), toy_classes()[0].clone(), seed);
    spec.patch_size = 8;
    spec.batch_size = 2;
    spec.epochs = 2;
    spec.steps_per_epoch = 3;
    spec
}

/// Index of the filter-free config with the given mesh pool.
fn config_index(method: Method, pool: &[MeshKind]) -> usize {
    let want: BTreeSet<MeshKind> = pool.iter().copied().collect();
    enumerate_configs(method)
        .iter()
        .position(|c| c.filters.is_empty() && c.mesh_pool == want)
        .unwrap()
}

#[test]
fn every_config_runs_under_exactly_one_step_function() {
    let det = untrained();
    type StepFn = fn(&Optimizer<'_, f64>, &mut RunState) -> transcender::Result<StepRecord>;
    let steps: [(Method, StepFn); 3] = [
        (Method::ShapeShifter, step_shapeshifter),
        (Method::Transcender, step_transcender),
        (Method::TranscenderMc, step_transcender_mc),
    ];
    for method in Method::ALL {
        for (i, config) in enumerate_configs(method).into_iter().enumerate() {
            let mut spec = RunSpec::new(config, toy_classes()[1].clone(), i as u64);
            spec.patch_size = 4;
            spec.image_size = 32;
            spec.batch_size = 1;
            let opt = Optimizer::new(&spec, &det).unwrap();
            let mut ok = Vec::new();
            for (m, step) in &steps {
                let mut state = opt.init_state();
                match step(&opt, &mut state) {
                    Ok(_) => ok.push(*m),
                    Err(Error::Contract(_)) => {}
                    Err(e) => panic!("{method:?} config {i}: {e}"),
                }
            }
            assert_eq!(ok, vec![method], "config {i}");
        }
    }
}

#[test]
fn multicam_gradient_is_mean_of_view_gradients() {
    let det = untrained();
    let spec = tiny_spec(Method::TranscenderMc, 1, 3);
    let opt = Optimizer::new(&spec, &det).unwrap();
    let state = opt.init_state();
    let (scenes, _, _) = opt.sample_batch(&state, None).unwrap();
    let scene = &scenes[0];
    assert_eq!(scene.views.len(), 3);
    let joint = opt.objective(&state, &scenes[..1]).unwrap();

    // each view on its own: detection gradient of that view plus the regularizer
    let singles: Vec<_> = scene
        .views
        .iter()
        .map(|v| {
            let one = Scene { chain: scene.chain.clone(), views: vec![v.clone()] };
            opt.objective(&state, &[one]).unwrap()
        })
        .collect();
    for (i, g) in joint.grad_logits.iter().enumerate() {
        let mean = singles.iter().map(|s| s.grad_logits[i]).sum::<f64>() / 3.0;
        assert!((g - mean).abs() <= 1e-12 * g.abs().max(1e-6), "logit {i}: {g} vs {mean}");
    }
    let mean_det = singles.iter().map(|s| s.detection).sum::<f64>() / 3.0;
    assert!((joint.detection - mean_det).abs() < 1e-12);
}

#[test]
fn zero_spacing_multicam_matches_single_view() {
    let det = untrained();
    let pool = [MeshKind::Billboard, MeshKind::Sign];
    let single = tiny_spec(Method::Transcender, config_index(Method::Transcender, &pool), 5);
    let multi = tiny_spec(Method::TranscenderMc, config_index(Method::TranscenderMc, &pool), 5);
    let o1 = Optimizer::new(&single, &det).unwrap();
    let o3 = Optimizer::new(&multi, &det).unwrap();
    let s = o1.init_state();
    let (a, _, _) = o1.sample_batch(&s, None).unwrap();
    let (b, _, _) = o3.sample_batch(&s, Some(0.0)).unwrap();
    for scene in &b {
        let l: Vec<f64> = scene.views.iter().map(|v| det.forward(&v.image).data.iter().sum()).collect();
        assert!(l[0] == l[1] && l[1] == l[2]);
    }
    let va = o1.objective(&s, &a).unwrap();
    let vb = o3.objective(&s, &b).unwrap();
    assert!((va.total - vb.total).abs() < 1e-12);
    for (x, y) in va.grad_logits.iter().zip(&vb.grad_logits) {
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-6));
    }
}

#[test]
fn runs_are_reproducible_and_resume_cleanly() {
    let det = untrained();
    let spec = tiny_spec(Method::TranscenderMc, 4, 17);
    let a = optimize(&spec, &det, None, None).unwrap();
    let b = optimize(&spec, &det, None, None).unwrap();
    assert_eq!(a.state.logits, b.state.logits);
    assert_eq!(a.report.loss_trace, b.report.loss_trace);
    assert_eq!(a.report.loss_trace.len(), a.report.steps_executed);

    let resumed = optimize(&spec, &det, Some(a.state.clone()), None).unwrap();
    assert_eq!(resumed.state.logits, a.state.logits);
    assert_eq!(resumed.report.steps_executed, a.report.steps_executed);

    // stopping halfway and resuming gives the uninterrupted trajectory
    let half = {
        let opt = Optimizer::new(&spec, &det).unwrap();
        let mut state = opt.init_state();
        for _ in 0..spec.total_steps() / 2 {
            opt.step(&mut state).unwrap();
        }
        let text = serde_json::to_string(&state).unwrap();
        serde_json::from_str::<RunState>(&text).unwrap()
    };
    let finished = optimize(&spec, &det, Some(half), None).unwrap();
    assert_eq!(finished.state.logits, a.state.logits);
}

#[test]
fn non_finite_loss_aborts_with_snapshot() {
    let config = DetectorConfig::default();
    let mut params = untrained().params();
    params.iter_mut().for_each(|v| *v = f64::NAN);
    let det = Detector64::from_params(config, &params).unwrap();
    let spec = tiny_spec(Method::ShapeShifter, 0, 2);
    let dir = tempfile::tempdir().unwrap();
    let err = optimize(&spec, &det, None, Some(dir.path())).unwrap_err();
    assert!(matches!(err, Error::Aborted(_)), "{err}");
    let snapshot = RunState::load(&dir.path().join(ABORT_FILE)).unwrap();
    assert_eq!(snapshot.step, 0);
    assert!(snapshot.logits.iter().all(|v| v.is_finite()));
}

#[test]
fn exhausted_skip_budget_aborts() {
    let det = untrained();
    let mut spec = tiny_spec(Method::Transcender, 0, 2);
    let mut ranges = PoseRanges::standard(&spec.intrinsics());
    // cameras pushed far sideways never see the patch
    ranges.h_offset = (40.0, 40.0);
    spec.pose_ranges = Some(ranges);
    let err = optimize(&spec, &det, None, None).unwrap_err();
    assert!(matches!(err, Error::Aborted(_)), "{err}");
    assert!(err.to_string().contains("skipped"));
}

#[test]
fn mesh_choice_is_uniform() {
    let pool: Vec<_> = MeshKind::TRAINING_POOL.iter().map(|&k| make_mesh(k)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut counts = [0usize; 3];
    let n = 10_000;
    for _ in 0..n {
        let m = choose_mesh(&pool, &mut rng);
        counts[pool.iter().position(|p| p.kind == m.kind).unwrap()] += 1;
    }
    let expected = n as f64 / 3.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // chi-square critical value for 2 degrees of freedom at p = 0.01
    assert!(chi2 < 9.210, "chi2 {chi2} for {counts:?}");
}

/// Moving average of the loss over the last third of the A5 toy run. The
/// per-step trace is noisy, so the average is compared at window-sized strides.
#[test]
fn loss_average_falls_over_final_third() {
    let det = common::trained_detector();
    let spec = RunSpec::desk(
        enumerate_configs(Method::TranscenderMc)[config_index(Method::TranscenderMc, &MeshKind::TRAINING_POOL)].clone(),
        class_by_name(&toy_classes(), "stop sign").unwrap(),
        1,
    );
    let trace = optimize(&spec, det, None, None).unwrap().report.loss_trace;
    let window = 50;
    let ma = |end: usize| trace[end - window..end].iter().sum::<f64>() / window as f64;
    let start = trace.len() - trace.len() / 3;
    let mut checkpoints: Vec<usize> = (start..=trace.len()).step_by(window).chain([trace.len()]).collect();
    checkpoints.dedup();
    let values: Vec<f64> = checkpoints.iter().map(|&e| ma(e)).collect();
    let rises = (start..trace.len()).filter(|&e| ma(e + 1) > ma(e)).count();
    eprintln!("moving average at {checkpoints:?}: {values:?}; {rises} single-step rises");
    assert!(values.windows(2).all(|w| w[1] <= w[0]), "{values:?}");
}
