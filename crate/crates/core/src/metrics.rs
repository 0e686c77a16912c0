//! Code-level ground truth, confusion counts and the precision/recall/F1
//! report written after evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// A code is anomalous when any frame in its provenance is.
pub fn resolve_code_labels<'a, I>(provenances: I, frame_labels: &[bool]) -> Result<Vec<bool>>
where
    I: IntoIterator<Item = &'a [u64]>,
{
    provenances
        .into_iter()
        .map(|frames| {
            frames.iter().try_fold(false, |acc, &f| {
                let label = frame_labels.get(f as usize).ok_or(Error::LabelGap(f))?;
                Ok(acc | *label)
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(predictions: &[bool], truth: &[bool]) -> Result<Confusion> {
    if predictions.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions against {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let mut c = Confusion::default();
    for (&p, &t) in predictions.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    /// Precision in percent.
    pub pr: f64,
    /// Recall in percent.
    pub rc: f64,
    pub f1: f64,
    pub fpr: f64,
    pub t2f_s: f64,
    pub t2t_s: f64,
}

/// Harmonic mean of precision and recall given in percent, as a fraction.
pub fn f1_score(pr: f64, rc: f64) -> f64 {
    if pr + rc == 0.0 {
        0.0
    } else {
        2.0 * pr * rc / (pr + rc) / 100.0
    }
}

/// Recall is 100 % with no positives in the data and precision is 100 %
/// with no positive predictions.
pub fn compute_metrics(c: Confusion, t2f_s: f64, t2t_s: f64) -> MetricsReport {
    let ratio = |num: u64, den: u64, empty: f64| {
        if den == 0 {
            empty
        } else {
            num as f64 / den as f64
        }
    };
    let rc = ratio(c.tp, c.tp + c.fn_, 1.0) * 100.0;
    let pr = ratio(c.tp, c.tp + c.fp, 1.0) * 100.0;
    MetricsReport {
        pr,
        rc,
        f1: f1_score(pr, rc),
        fpr: ratio(c.fp, c.fp + c.tn, 0.0),
        t2f_s,
        t2t_s,
    }
}

pub const REPORT_HEADER: &str = "detector,fragment_mode,n,fpr,pr,rc,f1,t2f_s,t2t_s";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub detector: String,
    pub fragment_mode: String,
    pub n: usize,
    pub metrics: MetricsReport,
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            r.detector, r.fragment_mode, r.n, m.fpr, m.pr, m.rc, m.f1, m.t2f_s, m.t2t_s
        );
    }
    out
}

pub fn write_report(path: impl AsRef<Path>, rows: &[ReportRow]) -> Result<()> {
    Ok(fs::write(path, report_csv(rows))?)
}

pub fn parse_report(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(Error::UnsupportedFormat(
            "metrics report header mismatch".into(),
        ));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(Error::UnsupportedFormat(format!(
                    "metrics row has {} fields: {line}",
                    f.len()
                )));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::UnsupportedFormat(format!("non-numeric metric `{s}`")))
            };
            Ok(ReportRow {
                detector: f[0].to_string(),
                fragment_mode: f[1].to_string(),
                n: f[2].parse().map_err(|_| {
                    Error::UnsupportedFormat(format!("bad window length `{}`", f[2]))
                })?,
                metrics: MetricsReport {
                    fpr: num(f[3])?,
                    pr: num(f[4])?,
                    rc: num(f[5])?,
                    f1: num(f[6])?,
                    t2f_s: num(f[7])?,
                    t2t_s: num(f[8])?,
                },
            })
        })
        .collect()
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    parse_report(&fs::read_to_string(path)?)
}
