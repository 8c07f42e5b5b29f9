use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;
use transcender::detector::{save_checkpoint, DetectorConfig};
use transcender::DetectorModel;
use transcender_cli::experiment::{ExperimentSpec, OUTPUT_ROOT_ENV};
use transcender_cli::report::write_report;
use transcender_cli::runs::DONE_FILE;
use transcender_cli::sweep::{run_sweep, RECORDS_CSV, RUNS_DIR};
use transcender_cli::CliError;

const BIN: &str = env!("CARGO_BIN_EXE_transcender");

/// An untrained detector is enough to exercise the plumbing.
fn detector(dir: &Path) -> PathBuf {
    let path = dir.join("det.ckpt");
    let model = DetectorModel::<f32>::new(DetectorConfig::default(), 3).unwrap();
    save_checkpoint(&model, &path).unwrap();
    path
}

fn spec_text(name: &str, root: &Path, det: &Path, methods: &str, configs: &str, seeds: &str) -> String {
    format!(
        r#"name = "{name}"
methods = [{methods}]
targets = ["stop sign"]
seeds = [{seeds}]
configs = {configs}
parallelism = 4
output_root = "{root}"

[detector]
checkpoint = "{det}"

[run]
epochs = 1
steps_per_epoch = 2
batch_size = 1
patch_size = 8
"#,
        root = root.display(),
        det = det.display(),
    )
}

fn parse(text: &str) -> ExperimentSpec {
    ExperimentSpec::parse(text, Path::new("test.toml")).unwrap()
}

/// Header-indexed rows of a plain CSV file without quoted fields.
fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| {
            assert!(!l.contains('"'), "{l}");
            header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect()
        })
        .collect()
}

fn done_dirs(root: &Path) -> BTreeSet<String> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeSet<String>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else if p.file_name().unwrap() == DONE_FILE {
                out.insert(p.parent().unwrap().strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn full_shapeshifter_sweep_runs_every_config_once() {
    let tmp = TempDir::new().unwrap();
    let det = detector(tmp.path());
    let exp = parse(&spec_text("ss", tmp.path(), &det, r#""shapeshifter""#, r#""all""#, "0"));
    let first = run_sweep(&exp).unwrap();
    assert_eq!(first.planned, 128);
    assert_eq!(first.executed, 128);
    assert!(first.failed.is_empty(), "{:?}", first.failed);

    let runs = done_dirs(&tmp.path().join("ss").join(RUNS_DIR));
    assert_eq!(runs.len(), 128);

    let second = run_sweep(&exp).unwrap();
    assert_eq!((second.already_done, second.executed), (128, 0));
    assert_eq!(second.records, first.records);
}

#[test]
fn records_match_run_directories_and_reports_are_reproducible() {
    let tmp = TempDir::new().unwrap();
    let det = detector(tmp.path());
    let text = spec_text(
        "mix",
        tmp.path(),
        &det,
        r#""transcender", "transcender_mc""#,
        "{ stratified = 3 }",
        "1, 2",
    );
    let exp = parse(&text);
    let summary = run_sweep(&exp).unwrap();
    assert_eq!(summary.planned, 2 * 3 * 2);
    assert!(summary.failed.is_empty());

    let exp_dir = tmp.path().join("mix");
    let rows = read_csv(&exp_dir.join(RECORDS_CSV));
    assert_eq!(rows.len(), summary.records);
    // every record points at a finished run and every finished run has records
    let ids: BTreeSet<String> = rows.iter().map(|r| r["patch_id"].clone()).collect();
    let runs = done_dirs(&exp_dir.join(RUNS_DIR));
    assert_eq!(ids, runs);
    for id in &ids {
        let dir = exp_dir.join(RUNS_DIR).join(id);
        assert!(!dir.join("FAILED").exists());
        assert!(dir.join("patch").join("logits.bin").exists());
    }

    let out_a = tmp.path().join("report_a");
    let out_b = tmp.path().join("report_b");
    let files_a = write_report(&exp_dir.join(RECORDS_CSV), &out_a).unwrap();
    let files_b = write_report(&exp_dir.join(RECORDS_CSV), &out_b).unwrap();
    assert_eq!(files_a.len(), files_b.len());
    for (a, b) in files_a.iter().zip(&files_b) {
        let (ta, tb) = (fs::read_to_string(a).unwrap(), fs::read_to_string(b).unwrap());
        if a.file_name().unwrap() == "metadata.md" {
            // names its source path, which differs only by directory
            assert_eq!(ta.lines().count(), tb.lines().count());
        } else {
            assert_eq!(ta, tb, "{}", a.display());
        }
    }

    // top fifth recomputed from the raw store
    // (S, patch id, position) per (target, method)
    type Group = Vec<(f64, String, usize)>;
    let mut groups: BTreeMap<(String, String), Group> = BTreeMap::new();
    for r in rows.iter().filter(|r| r["support"] == "screen") {
        groups
            .entry((r["target"].clone(), r["method"].clone()))
            .or_default()
            .push((r["robustness"].parse().unwrap(), r["patch_id"].clone(), r["position"].parse().unwrap()));
    }
    let scores = read_csv(&out_a.join("scores.csv"));
    assert_eq!(scores.len(), groups.len());
    for row in &scores {
        let mut g = groups[&(row["target"].clone(), row["method"].clone())].clone();
        g.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)).then_with(|| a.2.cmp(&b.2)));
        let k = g.len().div_ceil(5);
        let mean_top = g[..k].iter().map(|x| x.0).sum::<f64>() / k as f64;
        assert_eq!(row["n_top"].parse::<usize>().unwrap(), k);
        let reported: f64 = row["mean_top"].parse().unwrap();
        assert!((reported - mean_top).abs() < 1e-9, "{reported} vs {mean_top}");
    }
}

#[test]
fn empty_or_foreign_record_stores_are_refused() {
    let tmp = TempDir::new().unwrap();
    let missing = write_report(&tmp.path().join("nope.csv"), &tmp.path().join("out")).unwrap_err();
    assert_eq!(missing.exit_code(), 1);

    let header = "schema_version,patch_id,config_id,method,target,seed,mesh_pool,position,distance,support,\
azimuth_deg,elevation_deg,s_left,s_center,s_right,valid_left,valid_center,valid_right,in_frame_left,\
in_frame_center,in_frame_right,strength,robustness";
    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, format!("{header}\n")).unwrap();
    let err = write_report(&empty, &tmp.path().join("out")).unwrap_err();
    assert!(matches!(err, CliError::Validation(_)));
    assert!(err.to_string().contains("empty"));

    let foreign = tmp.path().join("v99.csv");
    fs::write(
        &foreign,
        format!("{header}\n99,p,c,transcender,stop sign,0,,0,1,screen,0,0,0.1,0.2,0.3,false,false,false,true,true,true,failed,0\n"),
    )
    .unwrap();
    let err = write_report(&foreign, &tmp.path().join("out")).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("schema"), "{err}");
    assert!(!tmp.path().join("out").join("scores.csv").exists());
}

#[test]
fn spec_errors_name_the_line() {
    let bad_toml = "name = \"x\"\nmethods = [\"transcender\"]\ntargets = [\"stop sign\"\nseeds = [1]\n";
    let err = ExperimentSpec::parse(bad_toml, Path::new("exp.toml")).unwrap_err();
    assert!(err.to_string().starts_with("exp.toml:"), "{err}");
    assert!(err.to_string().contains(":4:") || err.to_string().contains(":3:"), "{err}");

    let bad_value = "name = \"x\"\nmethods = [\"transcender\"]\ntargets = [\"stop sign\"]\nseeds = [1, 1]\n";
    let err = ExperimentSpec::parse(bad_value, Path::new("exp.toml")).unwrap_err();
    assert!(err.to_string().starts_with("exp.toml:4:"), "{err}");

    let bad_method = "name = \"x\"\nmethods = [\"yolo\"]\ntargets = [\"stop sign\"]\nseeds = [1]\n";
    let err = ExperimentSpec::parse(bad_method, Path::new("exp.toml")).unwrap_err();
    assert!(err.to_string().starts_with("exp.toml:2:"), "{err}");

    let unknown_key = "name = \"x\"\nmethods = [\"transcender\"]\ntargets = [\"stop sign\"]\nseeds = [1]\ncolour = 3\n";
    let err = ExperimentSpec::parse(unknown_key, Path::new("exp.toml")).unwrap_err();
    assert!(err.to_string().starts_with("exp.toml:5:"), "{err}");
}

#[test]
fn binary_exit_codes_and_output_root_override() {
    let tmp = TempDir::new().unwrap();
    let det = detector(tmp.path());

    let ok = Command::new(BIN).arg("--help").output().unwrap();
    assert_eq!(ok.status.code(), Some(0));

    let usage = Command::new(BIN).args(["sweep"]).output().unwrap();
    assert_eq!(usage.status.code(), Some(1));
    let missing = Command::new(BIN).args(["report", "--records", "absent.csv", "--out", "r"]).current_dir(tmp.path()).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));

    // a corrupt checkpoint is bad input
    let junk = tmp.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let spec_path = tmp.path().join("broken.toml");
    fs::write(&spec_path, spec_text("broken", Path::new("unused"), &junk, r#""transcender""#, r#"{ stratified = 1 }"#, "0")).unwrap();
    let bad_input = Command::new(BIN)
        .arg("sweep")
        .arg(&spec_path)
        .env(OUTPUT_ROOT_ENV, tmp.path().join("root_broken"))
        .output()
        .unwrap();
    assert_eq!(bad_input.status.code(), Some(1), "{}", String::from_utf8_lossy(&bad_input.stderr));

    // an output root that is a plain file fails at run time
    let blocker = tmp.path().join("blocker");
    fs::write(&blocker, b"").unwrap();
    let spec_path = tmp.path().join("blocked.toml");
    fs::write(&spec_path, spec_text("blocked", &blocker, &det, r#""transcender""#, r#"{ stratified = 1 }"#, "0")).unwrap();
    let runtime = Command::new(BIN).arg("sweep").arg(&spec_path).env_remove(OUTPUT_ROOT_ENV).output().unwrap();
    assert_eq!(runtime.status.code(), Some(2), "{}", String::from_utf8_lossy(&runtime.stderr));

    let spec_path = tmp.path().join("good.toml");
    fs::write(&spec_path, spec_text("good", Path::new("ignored_root"), &det, r#""transcender_mc""#, r#"{ stratified = 1 }"#, "4")).unwrap();
    let root = tmp.path().join("override");
    let run = Command::new(BIN).arg("sweep").arg(&spec_path).env(OUTPUT_ROOT_ENV, &root).current_dir(tmp.path()).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(root.join("good").join(RECORDS_CSV).exists());
    assert!(!tmp.path().join("ignored_root").exists());

    let report = Command::new(BIN)
        .arg("report")
        .arg("--records")
        .arg(root.join("good").join(RECORDS_CSV))
        .args(["--out", "rep"])
        .env(OUTPUT_ROOT_ENV, &root)
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(report.status.code(), Some(0), "{}", String::from_utf8_lossy(&report.stderr));
    assert!(root.join("rep").join("strength.svg").exists());
}

#[test]
fn readme_experiment_example_is_valid() {
    let readme = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    let block = readme.split("```toml\n").nth(1).unwrap().split("```").next().unwrap();
    let exp = ExperimentSpec::parse(block, Path::new("README.md")).unwrap();
    assert_eq!(exp.methods().len(), 2);
    assert_eq!(exp.evaluation.supports().unwrap().len(), 1);
}
