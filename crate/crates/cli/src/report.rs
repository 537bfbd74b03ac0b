//! Study CSV rows and the comparison report.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use seaice_core::adaptivity::{cost_model, ladder_cost, COST_CONSTANT};
use seaice_core::estimator::ErrorReport;

use crate::error::{CliError, CliResult};
use crate::table;

pub const STUDY_COLUMNS: [&str; 8] = ["h_km", "k_hours", "J", "eta_total", "eta_h", "eta_k", "eta_beta", "effectivity"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub h_km: f64,
    pub k_hours: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub eta_total: f64,
    pub eta_h: f64,
    pub eta_k: f64,
    pub eta_beta: f64,
    pub effectivity: Option<f64>,
}

impl StudyRow {
    pub fn new(h_km: f64, k_hours: f64, r: &ErrorReport) -> Self {
        StudyRow {
            h_km,
            k_hours,
            j: r.j_value,
            eta_total: r.eta_total,
            eta_h: r.eta_h,
            eta_k: r.eta_k,
            eta_beta: r.eta_beta,
            effectivity: r.effectivity,
        }
    }
}

/// Appends rows, writing the header when the file is new or empty.
pub fn append_rows(path: &Path, rows: &[StudyRow]) -> CliResult<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rows(path: &Path, rows: &[StudyRow]) -> CliResult<()> {
    if path.exists() {
        std::fs::remove_file(path)?;
    }
    append_rows(path, rows)
}

/// Reads a study CSV; a missing required column is a configuration error.
pub fn read_rows(path: &Path) -> CliResult<Vec<StudyRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_rows(&text)
}

pub fn parse_rows(text: &str) -> CliResult<Vec<StudyRow>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let headers = rd.headers()?.clone();
    if let Some(missing) = STUDY_COLUMNS[..7].iter().find(|c| !headers.iter().any(|h| h == **c)) {
        return Err(CliError::Config(format!("study CSV lacks column '{missing}'")));
    }
    let mut rows = Vec::new();
    for rec in rd.deserialize() {
        rows.push(rec.map_err(|e| CliError::Config(format!("bad study row: {e}")))?);
    }
    Ok(rows)
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

/// Comparison against the reference table, followed by effort figures.
pub fn format_report(rows: &[StudyRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>8} {:>5} | {:>9} {:>10} {:>10} {:>10} {:>10} {:>10} {:>6} | {:>9} {:>10} {:>6} {:>6} {:>6} {:>6}",
        "h_km", "k_h", "J", "eta", "eta_h", "eta_k", "eta_beta", "J_err", "eff", "J_ref_tab", "dJ", "eta_r", "h_r", "k_r", "b_r"
    );
    for r in rows {
        let _ = write!(
            s,
            "{:>8.3} {:>5} | {:>9.6} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e} {:>10} {:>6} |",
            r.h_km,
            r.k_hours,
            r.j,
            r.eta_total,
            r.eta_h,
            r.eta_k,
            r.eta_beta,
            r.effectivity.map_or_else(|| "-".into(), |e| format!("{:.3e}", e * r.eta_total)),
            opt(r.effectivity)
        );
        match table::lookup(r.h_km, r.k_hours) {
            Some(p) => {
                let _ = writeln!(
                    s,
                    " {:>9.5} {:>10.3e} {:>6.2} {:>6.2} {:>6.2} {:>6.2}",
                    p.j,
                    r.j - p.j,
                    r.eta_total / p.eta_total,
                    r.eta_h / p.eta_h,
                    r.eta_k / p.eta_k,
                    r.eta_beta / p.eta_beta
                );
            }
            None => {
                let _ = writeln!(s, " {:>9}", "-");
            }
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "effort model E(k, h) = C / (k h^2), C = {COST_CONSTANT}");
    if !rows.is_empty() {
        let total: f64 = rows.iter().map(|r| cost_model(r.k_hours, r.h_km, COST_CONSTANT)).sum();
        let _ = writeln!(s, "  rows of this study:          {total:.2}");
    }
    let _ = writeln!(s, "  uniform ladder (8,64)(4,32)(2,16): {}", ladder_cost(&[(8.0, 64.0), (4.0, 32.0), (2.0, 16.0)]));
    let _ = writeln!(s, "  balanced ladder (8,64)(4,64)(2,64): {}", ladder_cost(&[(8.0, 64.0), (4.0, 64.0), (2.0, 64.0)]));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(h: f64, k: f64) -> StudyRow {
        StudyRow {
            h_km: h,
            k_hours: k,
            j: 1.5,
            eta_total: 2e-3,
            eta_h: 1e-3,
            eta_k: 2.5e-3,
            eta_beta: 5e-4,
            effectivity: None,
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("study.csv");
        let mut a = row(62.5, 8.0);
        a.effectivity = Some(0.9);
        append_rows(&p, &[a.clone()]).unwrap();
        append_rows(&p, &[row(31.25, 4.0)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), STUDY_COLUMNS.join(","));
        assert_eq!(text.lines().count(), 3);
        assert_eq!(read_rows(&p).unwrap(), vec![a, row(31.25, 4.0)]);
    }

    #[test]
    fn missing_column_is_config_error() {
        let e = parse_rows("h_km,k_hours,J\n1,2,3\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("eta_total"));
    }

    #[test]
    fn empty_study() {
        assert!(parse_rows("").unwrap().is_empty());
        let r = format_report(&[]);
        assert!(r.contains("73") && r.contains(": 7"));
    }

    #[test]
    fn report_compares_with_table() {
        let r = format_report(&[row(62.5, 8.0)]);
        assert!(r.contains("1.49763"));
        assert!(r.contains("rows of this study:          1.05"));
    }
}
