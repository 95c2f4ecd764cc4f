//! CSV and plain-text renderings of results.
//!
//! Numbers are written with Rust's shortest round-trip float formatting, so
//! the same values always produce the same bytes. Missing values (a size bin
//! without ground truth) are written as `n/a`.

use std::fmt::Write as _;

use logattn_core::annotations::DatasetStats;
use logattn_core::attention::DiscrepancyRow;
use logattn_core::detector::TrainingLog;
use logattn_core::evaluation::PrPoint;
use logattn_core::EvalReport;
use serde::Serialize;

pub const DISCREPANCY_HEADER: &str = "f,analytic,paper_eq2,abs_diff";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| x.to_string())
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.1}", 100.0 * x))
}

pub fn training_log_csv(log: &TrainingLog) -> String {
    let mut s = String::from("epoch,mean_loss\n");
    for e in &log.epochs {
        let _ = writeln!(s, "{},{}", e.epoch, e.mean_loss);
    }
    s
}

pub fn pr_curve_csv(points: &[PrPoint]) -> String {
    let mut s = String::from("recall,precision\n");
    for p in points {
        let _ = writeln!(s, "{},{}", p.recall, p.precision);
    }
    s
}

pub fn discrepancy_csv(rows: &[DiscrepancyRow]) -> String {
    let mut s = String::from(DISCREPANCY_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.f, r.analytic, r.reciprocal_variant, r.abs_diff);
    }
    s
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize") + "\n"
}

/// One trained-and-evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub variant: String,
    pub seed: String,
    pub ap: f64,
    pub mean_iou: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
}

impl CompareRow {
    pub fn from_report(variant: &str, seed: u64, r: &EvalReport) -> Self {
        Self {
            variant: variant.into(),
            seed: seed.to_string(),
            ap: r.ap,
            mean_iou: r.mean_iou,
            ap_small: r.ap_small,
            ap_medium: r.ap_medium,
            ap_large: r.ap_large,
        }
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Per-variant means over seeds, in first-appearance order. A column's mean
/// skips seeds where it is `n/a`.
pub fn summarize(rows: &[CompareRow]) -> Vec<CompareRow> {
    let mut variants: Vec<&str> = Vec::new();
    for r in rows {
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    variants
        .into_iter()
        .map(|v| {
            let mine: Vec<&CompareRow> = rows.iter().filter(|r| r.variant == v).collect();
            CompareRow {
                variant: v.to_string(),
                seed: "mean".into(),
                ap: mine.iter().map(|r| r.ap).sum::<f64>() / mine.len() as f64,
                mean_iou: mean_of(mine.iter().map(|r| r.mean_iou)),
                ap_small: mean_of(mine.iter().map(|r| r.ap_small)),
                ap_medium: mean_of(mine.iter().map(|r| r.ap_medium)),
                ap_large: mean_of(mine.iter().map(|r| r.ap_large)),
            }
        })
        .collect()
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut s = String::from("variant,seed,ap,mean_iou,ap_small,ap_medium,ap_large\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.variant,
            r.seed,
            r.ap,
            opt(r.mean_iou),
            opt(r.ap_small),
            opt(r.ap_medium),
            opt(r.ap_large)
        );
    }
    s
}

/// Aligned table with values as percentages to one decimal.
pub fn compare_table(rows: &[CompareRow]) -> String {
    let header = ["variant", "seed", "AP", "IoU", "AP_S", "AP_M", "AP_L"];
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.variant.clone(),
                r.seed.clone(),
                pct(Some(r.ap)),
                pct(r.mean_iou),
                pct(r.ap_small),
                pct(r.ap_medium),
                pct(r.ap_large),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut s = String::new();
    let line = |s: &mut String, row: &[&str]| {
        let parts: Vec<String> = row
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(s, "{}", parts.join("  ").trim_end());
    };
    line(&mut s, &header);
    for row in &cells {
        line(&mut s, &row.each_ref().map(String::as_str));
    }
    s
}

pub fn eval_summary(r: &EvalReport) -> String {
    format!(
        "AP@{}: {}  IoU: {}  AP_S: {}  AP_M: {}  AP_L: {}  (tp {}, fp {}, fn {})\n",
        r.iou_threshold,
        pct(Some(r.ap)),
        pct(r.mean_iou),
        pct(r.ap_small),
        pct(r.ap_medium),
        pct(r.ap_large),
        r.counts.tp,
        r.counts.fp,
        r.counts.fn_
    )
}

/// Statistics before and after the minimum-size filter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub unfiltered: DatasetStats,
    pub filtered: DatasetStats,
    pub removed_by_min_size: usize,
}

pub fn stats_table(r: &StatsReport) -> String {
    let mut s = String::from("bin      count  share\n");
    let f = &r.filtered;
    for (name, n, p) in [
        ("small", f.small, f.proportions.small),
        ("medium", f.medium, f.proportions.medium),
        ("large", f.large, f.proportions.large),
    ] {
        let _ = writeln!(s, "{name:<7} {n:>6}  {:>5.1}", 100.0 * p);
    }
    let _ = writeln!(
        s,
        "{} objects in {} images ({} removed by the minimum-size rule)",
        f.total_objects, f.total_images, r.removed_by_min_size
    );
    s
}
