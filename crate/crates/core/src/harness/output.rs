//! Machine-readable batch artifacts: summary CSV, metadata JSON and plot data.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::batch::ScalingReport;
use crate::harness::config::ExperimentConfig;
use crate::stability::CertificateSummary;

pub const SUMMARY_CSV: &str = "summary.csv";
pub const METADATA_JSON: &str = "metadata.json";
pub const PLOT_REGRET: &str = "plot_regret.txt";
pub const PLOT_BOUND: &str = "plot_bound.txt";
pub const TRACE_DIR: &str = "traces";

pub const CSV_HEADER: [&str; 8] = [
    "T",
    "seed_count",
    "regret_q25",
    "regret_median",
    "regret_q75",
    "regret_q90",
    "bound_value",
    "slope",
];

fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "NA".to_string()
    }
}

/// SHA-256 of the compact JSON form of the configuration.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn summary_csv(report: &ScalingReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    let slope = report.slope.map(num).unwrap_or_else(|| "NA".into());
    for r in &report.rows {
        w.write_record([
            r.t.to_string(),
            r.seed_count.to_string(),
            num(r.regret_q25),
            num(r.regret_median),
            num(r.regret_q75),
            num(r.regret_q90),
            num(r.bound_value),
            slope.clone(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}

/// Two-column plain text with a `#` header line.
pub fn plot_series(header: &str, rows: impl Iterator<Item = (usize, f64)>) -> String {
    let mut out = format!("# {header}\n");
    for (t, v) in rows {
        out.push_str(&format!("{t} {}\n", num(v)));
    }
    out
}

#[derive(Serialize)]
struct Metadata<'a> {
    config: &'a ExperimentConfig,
    config_hash: String,
    crate_version: &'static str,
    certificate: Option<CertificateSummary>,
    report: &'a ScalingReport,
    columns: [&'static str; 8],
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes the CSV, metadata and plot files into `dir`; returns their paths.
pub fn write_artifacts(report: &ScalingReport, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let certificate = cfg.prepare::<f64>().ok().map(|p| p.cert.summary());
    let meta = Metadata {
        config: cfg,
        config_hash: config_hash(cfg)?,
        crate_version: env!("CARGO_PKG_VERSION"),
        certificate,
        report,
        columns: CSV_HEADER,
    };
    Ok(vec![
        write(dir.join(SUMMARY_CSV), &summary_csv(report)?)?,
        write(dir.join(METADATA_JSON), &serde_json::to_string_pretty(&meta)?)?,
        write(
            dir.join(PLOT_REGRET),
            &plot_series("T median_regret", report.rows.iter().map(|r| (r.t, r.regret_median))),
        )?,
        write(
            dir.join(PLOT_BOUND),
            &plot_series("T bound", report.rows.iter().map(|r| (r.t, r.bound_value))),
        )?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_series_layout() {
        assert_eq!(plot_series("T bound", std::iter::empty()), "# T bound\n");
        let s = plot_series("T median_regret", (1..=5).map(|i| (i * 100, i as f64 * 0.5)));
        assert_eq!(s.lines().count(), 6);
        assert_eq!(s.lines().nth(1).unwrap(), "100 0.5");
        assert_eq!(plot_series("x", [(3, f64::NAN)].into_iter()).lines().nth(1).unwrap(), "3 NA");
    }
}
