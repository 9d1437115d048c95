//! Report files: a CSV with one row per (trial, k) and a JSON summary.

use std::path::Path;

use fpcp_core::metrics::Auc;
use serde::Serialize;

use crate::artifacts::save_json;
use crate::error::{io_err, Result};
use crate::harness::{Aggregate, Fit, Method, SweepReport, TrialReport};

/// One CSV row. Empty cells mark values that do not apply (for example
/// `delta` and `ssfp_k_delta` under k-FP control).
#[derive(Debug, Serialize)]
struct Row {
    method: Method,
    k: f64,
    delta: Option<f64>,
    trial: usize,
    tpr: f64,
    avg_fp: f64,
    avg_size: f64,
    ssfp_k: f64,
    ssfp_k_delta: Option<f64>,
    frac_fp_le_k: f64,
    frac_no_fp: f64,
    coverage: f64,
    rule: &'static str,
    /// `t_star`, `tau`, or `k_prime`, depending on the rule.
    fitted: String,
}

fn ext(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

fn rows(report: &TrialReport) -> impl Iterator<Item = Row> + '_ {
    report.per_trial.iter().map(|r| {
        let (rule, fitted) = match r.fit {
            Fit::Threshold { t_star } => ("threshold", ext(t_star)),
            Fit::Topk { k_prime } => ("topk", k_prime.to_string()),
            Fit::Inner { tau, .. } => ("inner", ext(tau)),
            Fit::Outer { tau, .. } => ("outer", ext(tau)),
        };
        Row {
            method: report.method,
            k: report.k,
            delta: report.delta,
            trial: r.trial,
            tpr: r.metrics.tpr,
            avg_fp: r.metrics.avg_fp,
            avg_size: r.metrics.avg_size,
            ssfp_k: r.metrics.ssfp_k,
            ssfp_k_delta: r.metrics.ssfp_k_delta,
            frac_fp_le_k: r.metrics.frac_fp_le_k,
            frac_no_fp: r.frac_no_fp,
            coverage: r.coverage,
            rule,
            fitted,
        }
    })
}

/// Writes the per-trial rows of every report, in order.
pub fn write_csv<'r>(
    reports: impl IntoIterator<Item = &'r TrialReport>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    for report in reports {
        for row in rows(report) {
            w.serialize(row)?;
        }
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Serialize)]
struct KSummary<'a> {
    k: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    trials: usize,
    aggregate: &'a Aggregate,
}

#[derive(Debug, Serialize)]
struct EvaluateSummary<'a> {
    method: Method,
    split_frac: f64,
    seed: u64,
    #[serde(flatten)]
    result: KSummary<'a>,
}

#[derive(Debug, Serialize)]
struct SweepSummary<'a> {
    method: Method,
    split_frac: f64,
    seed: u64,
    k_grid: &'a [f64],
    per_k: Vec<KSummary<'a>>,
    tpr_auc: Auc,
}

fn k_summary(r: &TrialReport) -> KSummary<'_> {
    KSummary {
        k: r.k,
        delta: r.delta,
        trials: r.per_trial.len(),
        aggregate: &r.aggregate,
    }
}

pub fn write_evaluate_summary(report: &TrialReport, path: impl AsRef<Path>) -> Result<()> {
    save_json(
        &EvaluateSummary {
            method: report.method,
            split_frac: report.split_frac,
            seed: report.seed,
            result: k_summary(report),
        },
        path,
    )
}

pub fn write_sweep_summary(sweep: &SweepReport, path: impl AsRef<Path>) -> Result<()> {
    let first = &sweep.reports[0];
    save_json(
        &SweepSummary {
            method: sweep.method,
            split_frac: first.split_frac,
            seed: first.seed,
            k_grid: &sweep.k_grid,
            per_k: sweep.reports.iter().map(k_summary).collect(),
            tpr_auc: sweep.tpr_auc,
        },
        path,
    )
}
