//! Idempotent experiment sweeps on a worker pool.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use transcender::detector::TrainParams;
use transcender::evalrig::{
    append_records_jsonl, read_records_csv, write_records_csv, EvalRecord, EvalSubject,
};
use transcender::scene::BackgroundSource;
use transcender::target::class_by_name;
use transcender::{toy_classes, DetectorModel};

use crate::error::{io_err, CliError, CliResult};
use crate::experiment::ExperimentSpec;
use crate::runs::{
    background_source, build_run_spec, evaluate_run, load_or_train_detector, mesh_pool_names, optimize_into,
    RunKey, DONE_FILE, FAILED_FILE, RUN_RECORDS_FILE,
};

pub const RUNS_DIR: &str = "runs";
pub const RECORDS_CSV: &str = "records.csv";
pub const RECORDS_JSONL: &str = "records.jsonl";
pub const EXPERIMENT_FILE: &str = "experiment.json";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepSummary {
    pub planned: usize,
    /// Completed by an earlier invocation.
    pub already_done: usize,
    pub executed: usize,
    pub failed: Vec<(String, String)>,
    pub records: usize,
    pub records_path: PathBuf,
}

/// Every (method, target, config, seed) cell, sorted.
pub fn plan(exp: &ExperimentSpec) -> CliResult<Vec<(RunKey, transcender::transforms::TransformConfig)>> {
    let mut cells = Vec::new();
    for method in exp.methods() {
        let configs = exp.select_configs(method);
        for target in &exp.targets {
            let target = class_by_name(&toy_classes(), target)?;
            for cfg in &configs {
                for &seed in &exp.seeds {
                    let key = RunKey {
                        method,
                        target: target.name.clone(),
                        config_id: cfg.config_id.clone(),
                        seed,
                    };
                    cells.push((key, cfg.clone()));
                }
            }
        }
    }
    cells.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(cells)
}

pub fn detector_path(exp: &ExperimentSpec) -> PathBuf {
    exp.detector
        .checkpoint
        .clone()
        .unwrap_or_else(|| exp.experiment_dir().join("detector").join("detector.ckpt"))
}

fn execute(
    exp: &ExperimentSpec,
    key: &RunKey,
    cfg: &transcender::transforms::TransformConfig,
    detector: &DetectorModel<f32>,
    backgrounds: &BackgroundSource,
    run_dir: &Path,
) -> CliResult<usize> {
    let target = class_by_name(&toy_classes(), &key.target)?;
    let spec = build_run_spec(cfg.clone(), target.clone(), key.seed, exp.preset, &exp.run, &exp.rig);
    let out = optimize_into(&spec, detector, run_dir)?;
    let subject = EvalSubject {
        patch_id: key.patch_id(),
        config_id: key.config_id.clone(),
        method: key.method.name().into(),
        target: target.id,
        target_name: target.name.clone(),
        mesh_pool: mesh_pool_names(cfg),
        seed: key.seed,
    };
    let records = evaluate_run(
        &out.patch.pixels(),
        detector,
        &subject,
        &exp.rig.geometry(),
        &exp.evaluation,
        backgrounds,
        key.seed,
    )?;
    write_records_csv(&records, &run_dir.join(RUN_RECORDS_FILE))?;
    let done = run_dir.join(DONE_FILE);
    fs::write(&done, format!("{}\n", records.len())).map_err(|e| io_err(&done, e))?;
    Ok(records.len())
}

/// Runs every pending cell, then rebuilds the merged record store from the
/// completed runs. A failing run is marked and the sweep continues.
pub fn run_sweep(exp: &ExperimentSpec) -> CliResult<SweepSummary> {
    let dir = exp.experiment_dir();
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let exp_file = dir.join(EXPERIMENT_FILE);
    let json = serde_json::to_string_pretty(exp).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(&exp_file, json).map_err(|e| io_err(&exp_file, e))?;

    let cells = plan(exp)?;
    let runs_root = dir.join(RUNS_DIR);
    let pending: Vec<_> = cells
        .iter()
        .filter(|(k, _)| !runs_root.join(k.patch_id()).join(DONE_FILE).exists())
        .collect();
    let mut summary = SweepSummary {
        planned: cells.len(),
        already_done: cells.len() - pending.len(),
        ..Default::default()
    };
    log::info!("{}: {} runs planned, {} pending", exp.name, cells.len(), pending.len());

    if !pending.is_empty() {
        let params = TrainParams {
            seed: exp.detector.seed,
            ..TrainParams::default()
        };
        let detector = load_or_train_detector(&detector_path(exp), &params)?;
        let backgrounds = background_source(exp.run.backgrounds.as_ref())?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(exp.parallelism)
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let results: Vec<(String, CliResult<usize>)> = pool.install(|| {
            pending
                .par_iter()
                .map(|(key, cfg)| {
                    let run_dir = runs_root.join(key.patch_id());
                    let res = fs::create_dir_all(&run_dir)
                        .map_err(|e| io_err(&run_dir, e))
                        .and_then(|_| execute(exp, key, cfg, &detector, &backgrounds, &run_dir));
                    if let Err(e) = &res {
                        log::error!("run {} failed: {e}", key.patch_id());
                        let _ = fs::write(run_dir.join(FAILED_FILE), format!("{e}\n"));
                    } else {
                        let _ = fs::remove_file(run_dir.join(FAILED_FILE));
                    }
                    (key.patch_id(), res)
                })
                .collect()
        });
        for (id, res) in results {
            match res {
                Ok(_) => summary.executed += 1,
                Err(e) => summary.failed.push((id, e.to_string())),
            }
        }
    }

    let records = merge_records(&runs_root, cells.iter().map(|(k, _)| k))?;
    summary.records = records.len();
    summary.records_path = dir.join(RECORDS_CSV);
    write_records_csv(&records, &summary.records_path)?;
    let jsonl = dir.join(RECORDS_JSONL);
    if jsonl.exists() {
        fs::remove_file(&jsonl).map_err(|e| io_err(&jsonl, e))?;
    }
    append_records_jsonl(&records, &jsonl)?;
    Ok(summary)
}

/// Records of every completed run, ordered by record key.
pub fn merge_records<'a>(runs_root: &Path, keys: impl Iterator<Item = &'a RunKey>) -> CliResult<Vec<EvalRecord>> {
    let mut all = Vec::new();
    for key in keys {
        let run_dir = runs_root.join(key.patch_id());
        if run_dir.join(DONE_FILE).exists() {
            all.extend(read_records_csv(&run_dir.join(RUN_RECORDS_FILE))?);
        }
    }
    all.sort_by_key(|r| r.key());
    Ok(all)
}
