//! Full cross-product sweep and its CSV / PLY / PPM outputs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, Framework};
use super::pipeline::{run_cell, CellArtifacts, Prepared, RunRecord};
use crate::io::{save_ply, save_ppm};
use crate::Result;

pub const RUNS_CSV: &str = "runs.csv";
pub const SUMMARY_CSV: &str = "summary.csv";

/// One CSV row. Metrics of failed frames are left empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub framework: String,
    pub snr_db: f64,
    pub seed: u64,
    pub frame: u32,
    pub kpe_mean: Option<f64>,
    pub pck: Option<f64>,
    pub p2p_rms: Option<f64>,
    pub p2p_forward: Option<f64>,
    pub p2p_backward: Option<f64>,
    pub td_total: Option<f64>,
    pub td_extract: Option<f64>,
    pub td_airtime: Option<f64>,
    pub td_base: Option<f64>,
    pub td_generate: Option<f64>,
    pub bits_sent: usize,
    pub bit_errors: usize,
    pub status: String,
}

impl From<&RunRecord> for CsvRow {
    fn from(r: &RunRecord) -> Self {
        CsvRow {
            framework: r.framework.name().into(),
            snr_db: r.snr_db,
            seed: r.seed,
            frame: r.frame,
            kpe_mean: r.kpe.as_ref().map(|k| k.mean_px),
            pck: r.kpe.as_ref().map(|k| k.pck_at_d),
            p2p_rms: r.p2point.map(|p| p.rms_m),
            p2p_forward: r.p2point.map(|p| p.forward_rms_m),
            p2p_backward: r.p2point.map(|p| p.backward_rms_m),
            td_total: r.td.map(|t| t.total_s),
            td_extract: r.td.map(|t| t.extract_s),
            td_airtime: r.td.map(|t| t.airtime_s),
            td_base: r.td.map(|t| t.base_airtime_s),
            td_generate: r.td.map(|t| t.generate_s),
            bits_sent: r.bits_sent,
            bit_errors: r.bit_errors,
            status: r.status.clone(),
        }
    }
}

/// Per-(framework, SNR) medians over every successful row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub framework: String,
    pub snr_db: f64,
    pub rows: usize,
    pub kpe_median: f64,
    pub pck_median: f64,
    pub p2p_median: f64,
    pub td_median: f64,
}

/// Median of the values; the mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn summarize(rows: &[CsvRow], cfg: &ExperimentConfig) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for fw in &cfg.frameworks {
        for snr in &cfg.snr_db {
            let cell: Vec<&CsvRow> = rows
                .iter()
                .filter(|r| r.framework == fw.name() && r.snr_db.total_cmp(snr).is_eq())
                .filter(|r| r.kpe_mean.is_some())
                .collect();
            let col = |f: fn(&CsvRow) -> Option<f64>| median(&cell.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            out.push(SummaryRow {
                framework: fw.name().into(),
                snr_db: *snr,
                rows: cell.len(),
                kpe_median: col(|r| r.kpe_mean),
                pck_median: col(|r| r.pck),
                p2p_median: col(|r| r.p2p_rms),
                td_median: col(|r| r.td_total),
            });
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<CsvRow>,
    pub summary: Vec<SummaryRow>,
    /// Rows whose status is an error.
    pub failures: usize,
    pub output_dir: PathBuf,
}

fn snr_label(snr: f64) -> String {
    if snr.is_infinite() {
        "inf".into()
    } else {
        snr.to_string()
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn save_artifacts(dir: &Path, fw: Framework, snr: f64, a: &CellArtifacts) -> Result<()> {
    let stem = format!("{}_snr{}", fw.name(), snr_label(snr));
    save_ply(&a.cloud, &dir.join("clouds").join(format!("{stem}.ply")))?;
    save_ppm(&a.edges, &dir.join("edges").join(format!("{stem}.ppm")))
}

/// Runs every (framework, SNR, seed) cell and writes `runs.csv`,
/// `summary.csv`, and for the first seed of each (framework, SNR) the final
/// edge point cloud (`clouds/*.ply`) and camera-0 edge image (`edges/*.ppm`).
pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    let prep = Prepared::new(cfg)?;
    sweep_prepared(&prep)
}

pub fn sweep_prepared(prep: &Prepared) -> Result<SweepOutcome> {
    let cfg = &prep.config;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(dir.join("clouds"))?;
    fs::create_dir_all(dir.join("edges"))?;

    let mut cells = Vec::new();
    for (fi, fw) in cfg.frameworks.iter().enumerate() {
        for (si, snr) in cfg.snr_db.iter().enumerate() {
            for (ki, seed) in cfg.seeds.iter().enumerate() {
                cells.push(((fi, si, ki), *fw, *snr, *seed));
            }
        }
    }
    let mut results: Vec<_> = cells
        .par_iter()
        .map(|(key, fw, snr, seed)| {
            let out = run_cell(prep, *fw, *snr, *seed, key.2 == 0);
            (*key, *fw, *snr, *seed, out)
        })
        .collect();
    results.sort_by_key(|r| r.0);

    let mut rows = Vec::new();
    for (_, fw, snr, seed, out) in results {
        match out {
            Ok(cell) => {
                rows.extend(cell.records.iter().map(CsvRow::from));
                if let Some(a) = &cell.artifacts {
                    save_artifacts(&dir, fw, snr, a)?;
                }
            }
            Err(e) => {
                let status = format!("error: {e}");
                rows.extend((0..cfg.frames).map(|t| CsvRow {
                    framework: fw.name().into(),
                    snr_db: snr,
                    seed,
                    frame: t,
                    kpe_mean: None,
                    pck: None,
                    p2p_rms: None,
                    p2p_forward: None,
                    p2p_backward: None,
                    td_total: None,
                    td_extract: None,
                    td_airtime: None,
                    td_base: None,
                    td_generate: None,
                    bits_sent: 0,
                    bit_errors: 0,
                    status: status.clone(),
                }));
            }
        }
    }
    let summary = summarize(&rows, cfg);
    write_csv(&dir.join(RUNS_CSV), &rows)?;
    write_csv(&dir.join(SUMMARY_CSV), &summary)?;
    let failures = rows.iter().filter(|r| r.status.starts_with("error")).count();
    Ok(SweepOutcome { rows, summary, failures, output_dir: dir })
}
