//! Aggregate tables, charts and a metadata appendix from a record store.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use transcender::evalrig::{
    mean_std, read_records_csv, summarize, table_csv, EvalRecord, Strength, RECORD_SCHEMA_VERSION,
};

use crate::error::{io_err, CliError, CliResult};
use crate::svg::{line_chart, stacked_bars};

/// Mean S and working share per method and rig position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionRow {
    pub method: String,
    pub position: usize,
    pub distance: f64,
    pub n: usize,
    pub mean_robustness: f64,
    pub working_pct: f64,
}

pub fn position_table(records: &[EvalRecord]) -> Vec<PositionRow> {
    let mut groups: BTreeMap<(String, usize), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.support == "screen") {
        groups.entry((r.method.clone(), r.position)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((method, position), rs)| {
            let scores: Vec<f64> = rs.iter().map(|r| r.robustness).collect();
            let working = rs.iter().filter(|r| r.strength.is_working()).count();
            PositionRow {
                method,
                position,
                distance: rs[0].distance,
                n: rs.len(),
                mean_robustness: mean_std(&scores).0,
                working_pct: 100.0 * working as f64 / rs.len() as f64,
            }
        })
        .collect()
}

fn write(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> CliResult<()> {
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    written.push(path);
    Ok(())
}

fn metadata(records: &[EvalRecord], source: &Path) -> String {
    let collect = |f: &dyn Fn(&EvalRecord) -> String| records.iter().map(f).collect::<BTreeSet<_>>();
    let mut s = String::new();
    writeln!(s, "# Run metadata\n").unwrap();
    writeln!(s, "- tool: transcender-cli {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(s, "- record schema version: {RECORD_SCHEMA_VERSION}").unwrap();
    writeln!(s, "- record store: {}", source.display()).unwrap();
    writeln!(s, "- records: {}", records.len()).unwrap();
    let list = |set: BTreeSet<String>| set.into_iter().collect::<Vec<_>>().join(", ");
    writeln!(s, "- methods: {}", list(collect(&|r| r.method.clone()))).unwrap();
    writeln!(s, "- targets: {}", list(collect(&|r| r.target.clone()))).unwrap();
    writeln!(s, "- seeds: {}", list(collect(&|r| r.seed.to_string()))).unwrap();
    writeln!(s, "- supports: {}", list(collect(&|r| r.support.clone()))).unwrap();
    writeln!(s, "- configurations: {}", collect(&|r| r.config_id.clone()).len()).unwrap();
    writeln!(s, "- patches: {}", collect(&|r| r.patch_id.clone()).len()).unwrap();
    writeln!(s, "\n## Conventions\n").unwrap();
    for line in [
        "detection score = objectness x target-class probability, counted only for detections with IoU >= 0.5 against the patch box",
        "a camera is fooled when its score exceeds 0.5",
        "strong / weak / single / failed = 3 / 2 / 1 / 0 fooled cameras, each position counted separately",
        "S = n_valid x (s1 + s2 + s3); sub-threshold scores enter the sum unless the run used strict mode",
        "top 20% = the ceil(n/5) best records by S, ties broken by patch id then position; std is the population std",
        "pool distribution = share of each training mesh among the pools of failed and of strong screen records",
    ] {
        writeln!(s, "- {line}").unwrap();
    }
    s
}

/// Writes the report into `out_dir` and returns the files written.
pub fn write_report(records_path: &Path, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    if !records_path.exists() {
        return Err(CliError::Validation(format!("record store {} does not exist", records_path.display())));
    }
    let records = read_records_csv(records_path)?;
    if records.is_empty() {
        return Err(CliError::Validation(format!(
            "record store {} is empty; run a sweep or evaluate a patch first",
            records_path.display()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let summary = summarize(&records);
    let positions = position_table(&records);
    let mut written = Vec::new();
    write(out_dir.join("strength.csv"), &table_csv(&summary.strength)?, &mut written)?;
    write(out_dir.join("scores.csv"), &table_csv(&summary.scores)?, &mut written)?;
    write(out_dir.join("supports.csv"), &table_csv(&summary.supports)?, &mut written)?;
    write(out_dir.join("pools.csv"), &table_csv(&summary.pools)?, &mut written)?;
    write(out_dir.join("positions.csv"), &table_csv(&positions)?, &mut written)?;

    let bars: Vec<(String, [f64; 4])> = summary
        .strength
        .iter()
        .map(|r| {
            let failed = (100.0 - r.working_pct).max(0.0);
            (format!("{} / {}", r.target, r.method), [r.strong_pct, r.weak_pct, r.single_pct, failed])
        })
        .collect();
    write(out_dir.join("strength.svg"), &stacked_bars("Attack strength per class and method", &bars), &mut written)?;

    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for p in &positions {
        series.entry(p.method.clone()).or_default().push((p.distance, p.mean_robustness));
    }
    write(
        out_dir.join("positions.svg"),
        &line_chart("Mean robustness score per position", "distance (m)", "mean S", 9.0, &series),
        &mut written,
    )?;
    write(out_dir.join("metadata.md"), &metadata(&records, records_path), &mut written)?;
    let strong = records.iter().filter(|r| r.strength == Strength::Strong).count();
    log::info!("report: {} records, {strong} strong, {} files", records.len(), written.len());
    Ok(written)
}
