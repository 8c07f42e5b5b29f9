//! Aggregate tables over evaluation records.

use std::collections::BTreeMap;

use serde::Serialize;

use super::metrics::Strength;
use super::record::EvalRecord;
use crate::error::{Error, Result};

/// Per (target, method) strength percentages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrengthRow {
    pub target: String,
    pub method: String,
    pub n: usize,
    pub strong_pct: f64,
    pub weak_pct: f64,
    pub single_pct: f64,
    pub working_pct: f64,
}

/// Robustness score statistics; std is the population std.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub target: String,
    pub method: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub n_top: usize,
    pub mean_top: f64,
    pub std_top: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportRow {
    pub support: String,
    pub method: String,
    pub n: usize,
    pub strong_pct: f64,
}

/// Share of each mesh among the pools of failed and of strong records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoolRow {
    pub mesh: String,
    pub failed_pct: f64,
    pub strong_pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Summary {
    pub strength: Vec<StrengthRow>,
    pub scores: Vec<ScoreRow>,
    pub supports: Vec<SupportRow>,
    pub pools: Vec<PoolRow>,
}

fn pct(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * k as f64 / n as f64
    }
}

/// Population mean and std; `(0, 0)` for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// The best `ceil(n/5)` records by S; ties go to the smaller patch id, then position.
pub fn top_fifth<'a>(records: &[&'a EvalRecord]) -> Vec<&'a EvalRecord> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| {
        b.robustness
            .total_cmp(&a.robustness)
            .then_with(|| a.patch_id.cmp(&b.patch_id))
            .then_with(|| a.position.cmp(&b.position))
    });
    sorted.truncate(records.len().div_ceil(5));
    sorted
}

fn group_by<K: Ord>(records: &[EvalRecord], key: impl Fn(&EvalRecord) -> K) -> BTreeMap<K, Vec<&EvalRecord>> {
    let mut map: BTreeMap<K, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        map.entry(key(r)).or_default().push(r);
    }
    map
}

fn count(rs: &[&EvalRecord], s: Strength) -> usize {
    rs.iter().filter(|r| r.strength == s).count()
}

/// Percentages and score statistics on plain screen records; the support
/// table covers everything else.
pub fn summarize(records: &[EvalRecord]) -> Summary {
    let screen: Vec<EvalRecord> = records.iter().filter(|r| r.support == "screen").cloned().collect();
    let mut summary = Summary::default();

    for ((target, method), rs) in group_by(&screen, |r| (r.target.clone(), r.method.clone())) {
        let n = rs.len();
        summary.strength.push(StrengthRow {
            target: target.clone(),
            method: method.clone(),
            n,
            strong_pct: pct(count(&rs, Strength::Strong), n),
            weak_pct: pct(count(&rs, Strength::Weak), n),
            single_pct: pct(count(&rs, Strength::Single), n),
            working_pct: pct(rs.iter().filter(|r| r.strength.is_working()).count(), n),
        });
        let all: Vec<f64> = rs.iter().map(|r| r.robustness).collect();
        let top: Vec<f64> = top_fifth(&rs).iter().map(|r| r.robustness).collect();
        let (mean, std) = mean_std(&all);
        let (mean_top, std_top) = mean_std(&top);
        summary.scores.push(ScoreRow {
            target,
            method,
            n,
            mean,
            std,
            n_top: top.len(),
            mean_top,
            std_top,
        });
    }

    let supports: Vec<EvalRecord> = records.iter().filter(|r| r.support != "screen").cloned().collect();
    for ((support, method), rs) in group_by(&supports, |r| (r.support.clone(), r.method.clone())) {
        summary.supports.push(SupportRow {
            support,
            method,
            n: rs.len(),
            strong_pct: pct(count(&rs, Strength::Strong), rs.len()),
        });
    }

    summary.pools = pool_distribution(&screen);
    if summary.strength.is_empty() {
        log::warn!("no screen records to aggregate");
    }
    summary
}

/// Mesh appearance shares among failed and strong records with a non-empty
/// pool. Each column sums to 100 unless its record set is empty.
pub fn pool_distribution(records: &[EvalRecord]) -> Vec<PoolRow> {
    let tally = |s: Strength| {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut total = 0;
        for r in records.iter().filter(|r| r.strength == s) {
            for m in &r.mesh_pool {
                *counts.entry(m.clone()).or_default() += 1;
                total += 1;
            }
        }
        (counts, total)
    };
    let (failed, nf) = tally(Strength::Failed);
    let (strong, ns) = tally(Strength::Strong);
    if nf == 0 {
        log::warn!("no failed records with a mesh pool");
    }
    if ns == 0 {
        log::warn!("no strong records with a mesh pool");
    }
    let mut meshes: Vec<&String> = failed.keys().chain(strong.keys()).collect();
    meshes.sort();
    meshes.dedup();
    meshes
        .into_iter()
        .map(|m| PoolRow {
            mesh: m.clone(),
            failed_pct: pct(failed.get(m).copied().unwrap_or(0), nf),
            strong_pct: pct(strong.get(m).copied().unwrap_or(0), ns),
        })
        .collect()
}

/// Renders any row slice as CSV with fixed float formatting.
pub fn table_csv<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Input(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
}
