//! Report serialization and the grouped bar chart of cross-validated AUC and
//! F1 per antibiotic.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::eval::CvReport;

pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

/// Pretty-printed JSON with a trailing newline.
pub fn report_json(report: &CvReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

const METRICS: [&str; 2] = ["auc", "f1"];

fn metric_values(summary: &crate::eval::AntibioticSummary, metric: &str) -> (f64, f64) {
    match metric {
        "auc" => (summary.auc_mean, summary.auc_sd),
        _ => (summary.f1_mean, summary.f1_sd),
    }
}

/// `model,antibiotic,metric,mean,sd`, one row per model × antibiotic × metric.
pub fn figure_csv(report: &CvReport) -> String {
    let mut out = String::from("model,antibiotic,metric,mean,sd\n");
    for model in &report.models {
        for ab in &model.antibiotics {
            for metric in METRICS {
                let (mean, sd) = metric_values(ab, metric);
                let _ = writeln!(out, "{},{},{metric},{mean},{sd}", model.name, csv_field(&ab.name));
            }
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#aec7e8", "#ff7f0e", "#ffbb78", "#2ca02c", "#98df8a", "#d62728", "#ff9896",
];

// Layout, in SVG user units.
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 50.0;
const PLOT_HEIGHT: f64 = 300.0;
const LABEL_SPACE: f64 = 110.0;
const LEGEND_SPACE: f64 = 30.0;
const BAR_WIDTH: f64 = 14.0;
const GROUP_GAP: f64 = 20.0;
const LEGEND_ITEM_WIDTH: f64 = 110.0;

/// Grouped bars: one group per antibiotic, one bar per (model, metric), SD
/// error bars, y axis fixed to [0, 1]. The output depends only on the report.
pub fn figure_svg(report: &CvReport) -> String {
    let antibiotics: BTreeSet<&str> = report
        .models
        .iter()
        .flat_map(|m| m.antibiotics.iter().map(|a| a.name.as_str()))
        .collect();
    let series: Vec<(&str, &str)> = report
        .models
        .iter()
        .flat_map(|m| METRICS.iter().map(move |metric| (m.name.as_str(), *metric)))
        .collect();
    let group_width = series.len() as f64 * BAR_WIDTH + GROUP_GAP;
    let plot_width = (antibiotics.len() as f64 * group_width).max(group_width);
    let legend_width = series.len() as f64 * LEGEND_ITEM_WIDTH;
    let width = MARGIN_LEFT + plot_width.max(legend_width) + MARGIN_RIGHT;
    let height = MARGIN_TOP + PLOT_HEIGHT + LABEL_SPACE + LEGEND_SPACE;
    let y_of = |v: f64| MARGIN_TOP + PLOT_HEIGHT * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">Cross-validated AUC and F1 by antibiotic</text>"#,
        width / 2.0
    );

    // Axis with gridlines every 0.2.
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let y = y_of(v);
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_LEFT:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
            MARGIN_LEFT + plot_width
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            MARGIN_LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_LEFT:.1}" y1="{MARGIN_TOP:.1}" x2="{MARGIN_LEFT:.1}" y2="{:.1}" stroke="black"/>"#,
        MARGIN_TOP + PLOT_HEIGHT
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_LEFT:.1}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="black"/>"#,
        MARGIN_TOP + PLOT_HEIGHT,
        MARGIN_LEFT + plot_width
    );

    for (g, ab) in antibiotics.iter().enumerate() {
        let group_x = MARGIN_LEFT + g as f64 * group_width + GROUP_GAP / 2.0;
        for (k, (model_name, metric)) in series.iter().enumerate() {
            let summary = report
                .models
                .iter()
                .find(|m| m.name == *model_name)
                .and_then(|m| m.antibiotics.iter().find(|a| a.name == *ab));
            let Some(summary) = summary else { continue };
            let (mean, sd) = metric_values(summary, metric);
            let x = group_x + k as f64 * BAR_WIDTH;
            let top = y_of(mean);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{} {} {}: {mean:.3} ± {sd:.3}</title></rect>"#,
                BAR_WIDTH - 2.0,
                MARGIN_TOP + PLOT_HEIGHT - top,
                PALETTE[k % PALETTE.len()],
                xml_escape(model_name),
                xml_escape(ab),
                metric
            );
            let cx = x + (BAR_WIDTH - 2.0) / 2.0;
            let (lo, hi) = (y_of(mean - sd), y_of(mean + sd));
            let _ = writeln!(
                s,
                r#"<path d="M{cx:.1} {lo:.1}V{hi:.1}M{:.1} {lo:.1}H{:.1}M{:.1} {hi:.1}H{:.1}" stroke="black" fill="none"/>"#,
                cx - 3.0,
                cx + 3.0,
                cx - 3.0,
                cx + 3.0
            );
        }
        let label_x = group_x + (series.len() as f64 * BAR_WIDTH) / 2.0;
        let label_y = MARGIN_TOP + PLOT_HEIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<text x="{label_x:.1}" y="{label_y:.1}" text-anchor="end" transform="rotate(-40 {label_x:.1} {label_y:.1})">{}</text>"#,
            xml_escape(ab)
        );
    }

    let legend_y = MARGIN_TOP + PLOT_HEIGHT + LABEL_SPACE;
    for (k, (model_name, metric)) in series.iter().enumerate() {
        let x = MARGIN_LEFT + k as f64 * LEGEND_ITEM_WIDTH;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{legend_y:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{} {}</text>"#,
            PALETTE[k % PALETTE.len()],
            x + 16.0,
            legend_y + 10.0,
            xml_escape(model_name),
            metric.to_uppercase()
        );
    }
    s.push_str("</svg>\n");
    s
}
