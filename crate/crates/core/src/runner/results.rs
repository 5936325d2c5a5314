use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::RunRecord;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: &str = "v1";

/// Mean over seeds of one (method, d_φ, δ) cell. `er_out` is the error rate
/// of the point-estimate policy; `delta_er_out` and `dr_out` describe the
/// bounds policy at radius `delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub d_phi: usize,
    pub delta: f64,
    pub er_out: Option<f64>,
    pub delta_er_out: Option<f64>,
    pub dr_out: f64,
    pub rpehe_in: f64,
    pub rpehe_out: f64,
    pub seeds: usize,
}

/// Machine-readable results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub schema: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub records: Vec<RunRecord>,
    pub aggregate: Vec<AggregateRow>,
}

fn mean(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn std(v: &[f64]) -> f64 {
    let Some(m) = mean(v.iter().copied()) else { return 0.0 };
    if v.len() < 2 {
        return 0.0;
    }
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn cells(records: &[RunRecord]) -> Vec<(String, usize, f64)> {
    let mut keys: Vec<(String, usize, f64)> = Vec::new();
    for r in records {
        for d in &r.deltas {
            let k = (r.method.clone(), r.d_phi, d.delta);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    keys
}

/// Means per (method, d_φ, δ) in order of first appearance. Undefined error
/// rates are skipped; the cell is `None` when no seed defines one.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    cells(records)
        .into_iter()
        .map(|(method, d_phi, delta)| {
            let rows: Vec<(&RunRecord, &super::DeltaResult)> = records
                .iter()
                .filter(|r| r.method == method && r.d_phi == d_phi)
                .filter_map(|r| r.deltas.iter().find(|d| d.delta == delta).map(|d| (r, d)))
                .collect();
            AggregateRow {
                er_out: mean(rows.iter().filter_map(|(r, _)| r.point.error_rate)),
                delta_er_out: mean(rows.iter().filter_map(|(_, d)| d.delta_er)),
                dr_out: mean(rows.iter().map(|(_, d)| d.bounds.deferral_rate)).unwrap_or(0.0),
                rpehe_in: mean(rows.iter().map(|(r, _)| r.rpehe_in)).unwrap_or(f64::NAN),
                rpehe_out: mean(rows.iter().map(|(r, _)| r.rpehe_out)).unwrap_or(f64::NAN),
                seeds: rows.len(),
                method,
                d_phi,
                delta,
            }
        })
        .collect()
}

fn pct(m: Option<f64>, s: f64) -> String {
    match m {
        Some(m) => format!("{:.2}% ± {:.2}", 100.0 * m, 100.0 * s),
        None => "n/a".into(),
    }
}

/// Plain-text table, one line per (method, d_φ, δ), with means ± standard
/// deviations over seeds.
pub fn write_text_table(records: &[RunRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:>5} {:>8}  {:<18} {:<18} {:<18} {:<14} {:<14}",
        "method", "d_phi", "delta", "ER_out", "dER_out", "DR_out", "rPEHE_in", "rPEHE_out"
    );
    for (method, d_phi, delta) in cells(records) {
        let rs: Vec<&RunRecord> = records.iter().filter(|r| r.method == method && r.d_phi == d_phi).collect();
        let ds: Vec<&super::DeltaResult> = rs.iter().filter_map(|r| r.deltas.iter().find(|d| d.delta == delta)).collect();
        let er: Vec<f64> = rs.iter().filter_map(|r| r.point.error_rate).collect();
        let der: Vec<f64> = ds.iter().filter_map(|d| d.delta_er).collect();
        let dr: Vec<f64> = ds.iter().map(|d| d.bounds.deferral_rate).collect();
        let pin: Vec<f64> = rs.iter().map(|r| r.rpehe_in).collect();
        let pout: Vec<f64> = rs.iter().map(|r| r.rpehe_out).collect();
        let _ = writeln!(
            out,
            "{:<28} {:>5} {:>8}  {:<18} {:<18} {:<18} {:<14} {:<14}",
            method,
            d_phi,
            delta,
            pct(mean(er.iter().copied()), std(&er)),
            pct(mean(der.iter().copied()), std(&der)),
            pct(mean(dr.iter().copied()), std(&dr)),
            format!("{:.3} ± {:.3}", mean(pin.iter().copied()).unwrap_or(f64::NAN), std(&pin)),
            format!("{:.3} ± {:.3}", mean(pout.iter().copied()).unwrap_or(f64::NAN), std(&pout)),
        );
    }
    out
}

/// Writes `results.csv` (aggregate), `results.json` (schema `v1`, with every
/// record), `results.txt` (table) and `curve.csv` (ER and DR per seed and δ).
pub fn emit_results(config: &ExperimentConfig, records: &[RunRecord], dir: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no records to write"));
    }
    std::fs::create_dir_all(dir)?;
    let agg = aggregate(records);
    let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
    for row in &agg {
        w.serialize(row)?;
    }
    w.flush()?;

    let doc = ResultsDocument {
        schema: SCHEMA_VERSION.into(),
        config_hash: config.hash(),
        config: ExperimentConfig {
            out_dir: None,
            ..config.clone()
        },
        records: records.to_vec(),
        aggregate: agg,
    };
    std::fs::write(dir.join("results.json"), serde_json::to_string_pretty(&doc)?)?;
    std::fs::write(dir.join("results.txt"), write_text_table(records))?;

    let mut c = csv::Writer::from_path(dir.join("curve.csv"))?;
    c.write_record(["method", "d_phi", "seed", "delta", "er_out", "dr_out", "point_er_out"])?;
    for r in records {
        for d in &r.deltas {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            c.write_record([
                r.method.clone(),
                r.d_phi.to_string(),
                r.seed.to_string(),
                d.delta.to_string(),
                opt(d.bounds.error_rate),
                d.bounds.deferral_rate.to_string(),
                opt(r.point.error_rate),
            ])?;
        }
    }
    c.flush()?;
    Ok(())
}

/// Loads `results.json`, rejecting other schema versions.
pub fn read_results_json(path: &Path) -> Result<ResultsDocument> {
    let doc: ResultsDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if doc.schema != SCHEMA_VERSION {
        return Err(Error::data(format!("unsupported results schema {:?}", doc.schema)));
    }
    Ok(doc)
}
