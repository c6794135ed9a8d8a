//! Metric reports and ablation tables as JSON, CSV and markdown.

use std::fmt::Write as _;

use super::{format_f64, to_json};
use crate::error::{Error, Result};
use crate::evalkit::EvalReport;
use crate::pipeline::AblationTable;

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::param("csv", e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::param("csv", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
}

pub fn eval_json(report: &EvalReport) -> Result<String> {
    to_json(report)
}

/// One row per metric value: `metric,delta,label,value`. Per-class APs of
/// classes without ground truth have an empty value.
pub fn eval_csv(report: &EvalReport) -> Result<String> {
    let row = |m: &str, d: Option<f64>, l: String, v: String| vec![m.to_string(), d.map(format_f64).unwrap_or_default(), l, v];
    let all = || "all".to_string();
    let mut rows = Vec::new();
    for m in &report.video_map {
        rows.push(row("video_map", Some(m.delta), all(), format_f64(m.map)));
        for c in &m.per_class {
            rows.push(row("video_ap", Some(m.delta), c.label.to_string(), c.ap.map(format_f64).unwrap_or_default()));
        }
    }
    rows.push(row("video_map_50_95", None, all(), format_f64(report.video_map_50_95)));
    rows.push(row("frame_map", Some(0.5), all(), format_f64(report.frame_map_50)));
    rows.push(row("v_mabo", None, all(), format_f64(report.v_mabo)));
    let b = &report.breakdown;
    for (name, n) in [
        ("true_positive", b.true_positive),
        ("wrong_classification", b.wrong_classification),
        ("bad_localization", b.bad_localization),
        ("duplicate_detection", b.duplicate_detection),
    ] {
        rows.push(row(name, Some(0.5), all(), n.to_string()));
    }
    for (name, n) in [
        ("num_videos", report.num_videos),
        ("num_ground_truth", report.num_ground_truth),
        ("num_detections", report.num_detections),
    ] {
        rows.push(row(name, None, all(), n.to_string()));
    }
    csv_text(&["metric", "delta", "label", "value"], rows)
}

fn setting_name(sigma: Option<f64>) -> String {
    match sigma {
        None => "no_refine".to_string(),
        Some(s) => format!("sigma={s}"),
    }
}

pub fn ablation_json(table: &AblationTable) -> Result<String> {
    to_json(table)
}

pub fn ablation_csv(table: &AblationTable) -> Result<String> {
    let mut rows = Vec::new();
    for r in &table.rows {
        for (k, c) in table.orders.iter().zip(&r.cells) {
            rows.push(vec![
                setting_name(r.sigma),
                k.to_string(),
                format_f64(c.video_map_50),
                format_f64(c.v_mabo),
            ]);
        }
    }
    csv_text(&["setting", "order", "video_map_50", "v_mabo"], rows)
}

/// Two tables (video-mAP@0.5 and v-MABO, in percent): refinement settings
/// as rows, polynomial orders as columns.
pub fn ablation_markdown(table: &AblationTable) -> String {
    let mut out = String::new();
    type Getter = fn(&crate::pipeline::CellMetrics) -> f64;
    let metrics: [(&str, Getter); 2] =
        [("video-mAP@0.5 (%)", |c| c.video_map_50), ("v-MABO (%)", |c| c.v_mabo)];
    for (i, (title, get)) in metrics.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "### {title}\n");
        out.push_str("| setting |");
        for k in &table.orders {
            let _ = write!(out, " k={k} |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(table.orders.len()));
        out.push('\n');
        for r in &table.rows {
            let name = match r.sigma {
                None => "no refine".to_string(),
                Some(s) => format!("σ={s}"),
            };
            let _ = write!(out, "| {name} |");
            for c in &r.cells {
                let _ = write!(out, " {:.2} |", 100.0 * get(c));
            }
            out.push('\n');
        }
    }
    out
}
