//! Delimited-text outputs. Every file is written to a temporary sibling
//! and renamed into place, so failures never leave partial output.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::TrialReport;
use crate::theory::{PhasePoint, TheorySolution};

/// Writes `path` atomically through a buffered writer.
pub fn write_atomic(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(tmp.reopen().map_err(|e| Error::io(path, e))?);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))?;
    drop(w);
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Writes CSV rows to `path` atomically.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, |w| write_csv_to(w, header, rows))
}

/// Writes CSV rows to any writer.
pub fn write_csv_to(w: &mut dyn Write, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    for row in rows {
        out.write_record(row)?;
    }
    out.flush()
}

/// Formats a real for tables: full precision, `inf` for divergences.
pub fn fmt(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.16e}")
    }
}

/// Sample sizes print as integers when they are whole.
pub fn fmt_p(p: f64) -> String {
    if p.fract() == 0.0 && p.abs() < 1e15 {
        format!("{}", p as i64)
    } else {
        fmt(p)
    }
}

pub const CURVE_HEADER: [&str; 7] = ["P", "kappa", "gamma", "eg", "bias", "variance", "diverged"];

pub fn curve_rows(curve: &[TheorySolution]) -> Vec<Vec<String>> {
    curve
        .iter()
        .map(|s| {
            vec![
                fmt_p(s.sample_size),
                fmt(s.kappa),
                fmt(s.gamma),
                fmt(s.eg),
                fmt(s.bias),
                fmt(s.variance),
                s.diverged.to_string(),
            ]
        })
        .collect()
}

pub const REPORT_HEADER: [&str; 8] = [
    "P",
    "eg_theory",
    "eg_emp_mean",
    "eg_emp_std",
    "bias_emp",
    "variance_emp",
    "z_score",
    "failures",
];

pub fn report_rows(report: &TrialReport) -> Vec<Vec<String>> {
    report
        .points
        .iter()
        .map(|r| {
            vec![
                r.p.to_string(),
                r.eg_theory.map_or_else(|| "nan".into(), fmt),
                fmt(r.eg_mean),
                fmt(r.eg_std),
                fmt(r.bias),
                fmt(r.variance),
                r.z_score.map_or_else(|| "nan".into(), fmt),
                r.failures.to_string(),
            ]
        })
        .collect()
}

pub const PHASE_HEADER: [&str; 5] = ["lambda", "sigma2", "classification", "boundary", "optimal_ridge"];

/// One row per cell; `boundary` is the analytic threshold noise for the
/// cell's ridge and `optimal_ridge` the ridge that minimizes error at the
/// cell's noise level.
pub fn phase_rows(points: &[PhasePoint]) -> Result<Vec<Vec<String>>> {
    points
        .iter()
        .map(|pt| {
            Ok(vec![
                fmt(pt.ridge),
                fmt(pt.noise_sq),
                pt.classification.as_str().to_string(),
                fmt(crate::theory::phase_boundary(pt.ridge)?),
                fmt(crate::theory::optimal_ridge(pt.noise_sq)?),
            ])
        })
        .collect()
}
