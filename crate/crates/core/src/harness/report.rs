use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::error::Result;
use crate::stats::summarize;

/// Aggregate estimate of one quantity with its Monte Carlo error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimand {
    pub name: String,
    pub estimate: Option<f64>,
    pub std_error: Option<f64>,
    pub theory: Option<f64>,
    pub z_score: Option<f64>,
    pub n: usize,
}

impl Estimand {
    pub fn from_samples(name: &str, xs: &[f64], theory: Option<f64>) -> Self {
        let s = summarize(xs);
        let estimate = s.map(|s| s.mean);
        let std_error = s.and_then(|s| s.std_error);
        let z_score = match (estimate, std_error, theory) {
            (Some(m), Some(se), Some(t)) if se > 0.0 => Some((m - t) / se),
            _ => None,
        };
        Self {
            name: name.to_string(),
            estimate,
            std_error,
            theory,
            z_score,
            n: xs.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub index: u64,
    pub stopped: bool,
    pub stop_index: Option<usize>,
    pub stop_time: Option<f64>,
    pub half_qv_at_stop: Option<f64>,
    pub u_at_stop: Option<f64>,
    pub overshoot: Option<f64>,
    pub error: Option<String>,
}

impl ReplicateSummary {
    pub(super) fn failed(index: u64, error: String) -> Self {
        Self {
            index,
            stopped: false,
            stop_index: None,
            stop_time: None,
            half_qv_at_stop: None,
            u_at_stop: None,
            overshoot: None,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub threshold: f64,
    pub theory_g: f64,
    pub theory_h: f64,
    pub n_replicates: usize,
    pub n_stopped: usize,
    pub n_failed: usize,
    /// Fraction of completed replicates that never alarmed.
    pub censor_rate: f64,
    pub estimands: Vec<Estimand>,
    pub replicates: Vec<ReplicateSummary>,
}

impl ExperimentReport {
    pub fn estimand(&self, name: &str) -> Option<&Estimand> {
        self.estimands.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Writes every float with 17 significant digits so values round-trip exactly.
struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }
}

/// Compact JSON with full-precision floats and a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// JSON text of a report; byte-identical for equal reports.
pub fn canonical_json(report: &ExperimentReport) -> Result<String> {
    to_json(report)
}

fn csv_cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.16e}")).unwrap_or_default()
}

fn estimand_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("name,estimate,std_error,theory,z_score,n,censor_rate\n");
    for e in &report.estimands {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.16e}",
            e.name,
            csv_cell(e.estimate),
            csv_cell(e.std_error),
            csv_cell(e.theory),
            csv_cell(e.z_score),
            e.n,
            report.censor_rate
        );
    }
    out
}

/// Per-replicate rows for plotting; blank cells where a replicate never alarmed.
pub fn replicates_csv(report: &ExperimentReport) -> String {
    let mut out =
        String::from("index,stopped,stop_time,half_qv_at_stop,u_at_stop,overshoot,error\n");
    for r in &report.replicates {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.index,
            r.stopped,
            csv_cell(r.stop_time),
            csv_cell(r.half_qv_at_stop),
            csv_cell(r.u_at_stop),
            csv_cell(r.overshoot),
            r.error.as_deref().unwrap_or("").replace(',', ";")
        );
    }
    out
}

pub fn write_report(report: &ExperimentReport, path: &Path, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Json => canonical_json(report)?,
        ReportFormat::Csv => estimand_csv(report),
    };
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run_experiment;
    use crate::harness::tests::small_config;

    #[test]
    fn json_round_trips_exactly() {
        let report = run_experiment(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_report(&report, &path, ReportFormat::Json).unwrap();
        let back = read_report(&path).unwrap();
        assert_eq!(back, report);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
        assert!(!text.contains("workers"));
    }

    #[test]
    fn csv_has_blank_cells_for_missing_theory() {
        let report = run_experiment(&small_config()).unwrap();
        let csv = estimand_csv(&report);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "name,estimate,std_error,theory,z_score,n,censor_rate"
        );
        let overshoot = csv.lines().find(|l| l.starts_with("overshoot,")).unwrap();
        let cells: Vec<&str> = overshoot.split(',').collect();
        assert_eq!(cells.len(), 7);
        assert_eq!(cells[3], "");
        assert_eq!(cells[4], "");
        let value: f64 = cells[1].parse().unwrap();
        assert_eq!(Some(value), report.estimand("overshoot").unwrap().estimate);
    }

    #[test]
    fn z_score_needs_error_and_theory() {
        let e = Estimand::from_samples("x", &[1.0], Some(0.0));
        assert_eq!(e.z_score, None);
        let e = Estimand::from_samples("x", &[1.0, 3.0], Some(0.0));
        assert_eq!(e.z_score, Some(2.0));
        let e = Estimand::from_samples("x", &[], Some(0.0));
        assert_eq!((e.estimate, e.n), (None, 0));
    }
}
