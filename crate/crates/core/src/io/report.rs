//! JSON and CSV renderings of analysis and evaluation reports.
//!
//! The CSV `entropy` column carries the raw spectral entropy in nats; the
//! normalized value is available in the JSON form.

use serde::Serialize;

use super::CaptureError;
use crate::detector::EvalReport;
use crate::diagnostics::TrajectoryReport;

pub const CSV_HEADER: &str =
    "layer,energy,smi,entropy,hfer,fiedler,fiedler_norm,mad,energy_ratio,cos_sim";
pub const EVAL_CSV_HEADER: &str = "method,domain,tp,fp,tn,fn,total,accuracy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(format!(
                "unknown report format {other:?} (expected json or csv)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ReportRef<'a> {
    Trajectory(&'a TrajectoryReport),
    Eval(&'a [EvalReport]),
}

fn report_err(e: impl std::fmt::Display) -> CaptureError {
    CaptureError::Report(e.to_string())
}

fn json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CaptureError> {
    let mut out = serde_json::to_vec_pretty(value).map_err(report_err)?;
    out.push(b'\n');
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn trajectory_csv(report: &TrajectoryReport) -> Result<Vec<u8>, CaptureError> {
    let mut w = csv_writer();
    w.write_record(CSV_HEADER.split(',')).map_err(report_err)?;
    for l in &report.layers {
        w.write_record([
            l.layer.to_string(),
            l.energy.to_string(),
            l.smi.to_string(),
            l.entropy_raw.to_string(),
            l.hfer.to_string(),
            l.fiedler.to_string(),
            l.fiedler_norm.to_string(),
            l.mad.to_string(),
            opt(l.energy_ratio),
            opt(l.cos_sim),
        ])
        .map_err(report_err)?;
    }
    w.into_inner().map_err(report_err)
}

fn eval_csv(reports: &[EvalReport]) -> Result<Vec<u8>, CaptureError> {
    let mut w = csv_writer();
    w.write_record(EVAL_CSV_HEADER.split(','))
        .map_err(report_err)?;
    for r in reports {
        let rows = std::iter::once(("*", &r.confusion, r.accuracy)).chain(
            r.per_domain
                .iter()
                .map(|(d, e)| (d.as_str(), &e.confusion, e.accuracy)),
        );
        for (domain, c, acc) in rows {
            w.write_record([
                r.method.clone(),
                domain.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.tn.to_string(),
                c.fn_.to_string(),
                c.total().to_string(),
                acc.to_string(),
            ])
            .map_err(report_err)?;
        }
    }
    w.into_inner().map_err(report_err)
}

/// Renders a report. Trajectory CSV has one row per layer; evaluation CSV
/// has an overall row (`domain = *`) and one row per domain for each method.
pub fn write_report(report: ReportRef<'_>, format: ReportFormat) -> Result<Vec<u8>, CaptureError> {
    match report {
        ReportRef::Trajectory(r) => {
            if r.layers.is_empty() {
                return Err(CaptureError::EmptyReport);
            }
            match format {
                ReportFormat::Json => json(r),
                ReportFormat::Csv => trajectory_csv(r),
            }
        }
        ReportRef::Eval(r) => match format {
            ReportFormat::Json => json(r),
            ReportFormat::Csv => eval_csv(r),
        },
    }
}

pub fn read_trajectory_report(bytes: &[u8]) -> Result<TrajectoryReport, CaptureError> {
    let report: TrajectoryReport = serde_json::from_slice(bytes).map_err(report_err)?;
    if report.layers.is_empty() {
        return Err(CaptureError::EmptyReport);
    }
    Ok(report)
}
