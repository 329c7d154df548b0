//! Report and curve files.
//!
//! The report is JSON Lines, one record per (category, metric) with the mean
//! under the category label `mean`. Curves are CSV with header
//! `threshold,category,ap`, one file per curve kind; absent AP is an empty cell.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CurveKind, Curves, EvalReport, Metric, MEAN_LABEL};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub category: String,
    pub metric: String,
    pub ap: Option<f64>,
    pub n_gt: usize,
}

impl EvalReport {
    pub fn records(&self) -> Vec<ReportRecord> {
        let mut out = Vec::new();
        for c in &self.categories {
            for m in Metric::ALL {
                out.push(ReportRecord {
                    category: c.category.clone(),
                    metric: m.name().into(),
                    ap: c.ap[m.index()],
                    n_gt: c.n_gt,
                });
            }
        }
        let n_gt = self.categories.iter().map(|c| c.n_gt).sum();
        for m in Metric::ALL {
            out.push(ReportRecord {
                category: MEAN_LABEL.into(),
                metric: m.name().into(),
                ap: self.mean[m.index()],
                n_gt,
            });
        }
        out
    }
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in report.records() {
        let line = serde_json::to_string(&rec).expect("report record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ReportRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            source_name: path.display().to_string(),
            line: k + 1,
            message: e.to_string(),
        })?;
        if Metric::from_name(&rec.metric).is_none() {
            return Err(Error::Parse {
                source_name: path.display().to_string(),
                line: k + 1,
                message: format!("unknown metric {:?}", rec.metric),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Writes `<prefix>_iou.csv`, `<prefix>_rotation.csv` and
/// `<prefix>_translation.csv` (translation thresholds in meters, rotation in
/// degrees) and returns the paths.
pub fn write_curves(prefix: &Path, curves: &Curves) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for kind in CurveKind::ALL {
        let mut name = prefix.file_name().map(|s| s.to_os_string()).unwrap_or_default();
        name.push(format!("_{}.csv", kind.name()));
        let path = prefix.with_file_name(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(&path, e);
        writeln!(w, "threshold,category,ap").map_err(io)?;
        for p in curves.get(kind) {
            let ap = p.ap.map(|a| a.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{}", p.threshold, p.category, ap).map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
