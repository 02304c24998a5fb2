//! Metric tables (CSV/JSON) and self-contained SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::explain::SummaryRow;
use crate::metrics::{format_metric, MetricReport, METRIC_COLUMNS};
use crate::pipeline::config::ModelKind;
use crate::pipeline::run::ExperimentResult;
use crate::seed::splitmix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// One table: a header row, then one row per model with four-decimal metrics.
pub fn metrics_table_csv(rows: &BTreeMap<ModelKind, MetricReport>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["Model"];
    header.extend(METRIC_COLUMNS);
    w.write_record(&header)?;
    for (model, report) in rows {
        let mut record = vec![model.display().to_string()];
        record.extend(report.values().iter().map(|&v| format_metric(v)));
        w.write_record(&record)?;
    }
    finish_csv(w)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidData(e.to_string()))
}

/// Every antibiotic's rows in one long table.
pub fn combined_metrics_csv(result: &ExperimentResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["Antibiotic", "Model"];
    header.extend(METRIC_COLUMNS);
    w.write_record(&header)?;
    for ab in &result.antibiotics {
        for (model, report) in &ab.metrics {
            let mut record = vec![ab.antibiotic.clone(), model.display().to_string()];
            record.extend(report.values().iter().map(|&v| format_metric(v)));
            w.write_record(&record)?;
        }
    }
    finish_csv(w)
}

/// Writes the report files for `result` into `dir`; returns the paths written.
pub fn emit_reports(result: &ExperimentResult, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if formats.contains(&ReportFormat::Csv) {
        let path = dir.join("metrics.csv");
        fs::write(&path, combined_metrics_csv(result)?)?;
        written.push(path);
        for ab in &result.antibiotics {
            let path = dir.join(format!("metrics_{}.csv", ab.antibiotic));
            fs::write(&path, metrics_table_csv(&ab.metrics)?)?;
            written.push(path);
        }
    }
    if formats.contains(&ReportFormat::Json) {
        let path = dir.join("metrics.json");
        write_json(&path, &result.metrics_by_antibiotic())?;
        written.push(path);
    }
    if formats.contains(&ReportFormat::Svg) {
        for ab in &result.antibiotics {
            let path = dir.join(format!("metrics_{}.svg", ab.antibiotic));
            fs::write(&path, metric_bars_svg(&ab.antibiotic, &ab.metrics))?;
            written.push(path);
        }
    }
    Ok(written)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const TOKEN_COLORS: [(char, &str); 5] = [
    ('A', "#1b9e77"),
    ('C', "#d95f02"),
    ('G', "#7570b3"),
    ('T', "#e7298a"),
    ('N', "#999999"),
];

/// Beeswarm-style strip plot: one row per feature (in order of first appearance), SHAP on x,
/// points colored by token with deterministic vertical jitter.
pub fn beeswarm_svg(title: &str, rows: &[SummaryRow]) -> String {
    let mut features: Vec<&str> = Vec::new();
    for r in rows {
        if !features.contains(&r.feature.as_str()) {
            features.push(&r.feature);
        }
    }
    let (left, right, top, row_h) = (120.0, 40.0, 50.0, 36.0);
    let width = 760.0;
    let plot_w = width - left - right;
    let height = top + row_h * features.len().max(1) as f64 + 60.0;
    let extent = rows
        .iter()
        .map(|r| r.shap.abs())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let x_of = |v: f64| left + plot_w * (v + extent) / (2.0 * extent);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<text x="{}" y="24" font-size="14">{}</text>"#, left, escape(title));
    let zero = x_of(0.0);
    let bottom = height - 50.0;
    let _ = writeln!(svg, r##"<line x1="{zero:.2}" y1="{top}" x2="{zero:.2}" y2="{bottom}" stroke="#444"/>"##);
    for (i, f) in features.iter().enumerate() {
        let y = top + row_h * (i as f64 + 0.5);
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 8.0,
            y + 4.0,
            escape(f)
        );
    }
    for (k, r) in rows.iter().enumerate() {
        let i = features.iter().position(|f| *f == r.feature).unwrap_or(0);
        let jitter = (splitmix64(k as u64) % 1000) as f64 / 1000.0 - 0.5;
        let y = top + row_h * (i as f64 + 0.5) + jitter * row_h * 0.6;
        let color = TOKEN_COLORS
            .iter()
            .find(|(t, _)| *t == r.token)
            .map_or("#000000", |(_, c)| c);
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{y:.2}" r="3" fill="{color}" fill-opacity="0.7"/>"#,
            x_of(r.shap)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">SHAP value (log-odds)</text>"#,
        left + plot_w / 2.0,
        height - 20.0
    );
    for (j, (t, c)) in TOKEN_COLORS.iter().enumerate() {
        let x = width - right - 5.0 * 36.0 + j as f64 * 36.0;
        let _ = writeln!(svg, r#"<circle cx="{x}" cy="20" r="4" fill="{c}"/><text x="{}" y="24">{t}</text>"#, x + 7.0);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Grouped bars: one group per metric, one bar per model.
pub fn metric_bars_svg(title: &str, metrics: &BTreeMap<ModelKind, MetricReport>) -> String {
    const PALETTE: [&str; 4] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759"];
    let (left, top, plot_h, group_w) = (50.0, 50.0, 220.0, 90.0);
    let width = left + group_w * METRIC_COLUMNS.len() as f64 + 30.0;
    let height = top + plot_h + 90.0;
    let bar_w = (group_w - 20.0) / metrics.len().max(1) as f64;
    let base = top + plot_h;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<text x="{left}" y="24" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(svg, r##"<line x1="{left}" y1="{base}" x2="{:.2}" y2="{base}" stroke="#444"/>"##, width - 20.0);
    for (g, name) in METRIC_COLUMNS.iter().enumerate() {
        let gx = left + g as f64 * group_w;
        for (m, report) in metrics.values().enumerate() {
            let v = report.values()[g].max(0.0);
            let h = plot_h * v;
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{}"/>"#,
                gx + 10.0 + m as f64 * bar_w,
                base - h,
                bar_w - 2.0,
                PALETTE[m % PALETTE.len()]
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            gx + group_w / 2.0,
            base + 16.0,
            escape(name)
        );
    }
    for (m, model) in metrics.keys().enumerate() {
        let y = base + 40.0 + 14.0 * (m / 2) as f64;
        let x = left + 260.0 * (m % 2) as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{x}" y="{:.2}" width="10" height="10" fill="{}"/><text x="{}" y="{y:.2}">{}</text>"#,
            y - 9.0,
            PALETTE[m % PALETTE.len()],
            x + 14.0,
            escape(model.display())
        );
    }
    svg.push_str("</svg>\n");
    svg
}
