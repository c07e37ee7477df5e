//! Tabular reports, plot data and an SVG scatter of the calibrated losses.

use std::fmt::Write as _;

use serde::Serialize;

use super::pareto::{front_by_values, ParetoRow, ValueSource, ADS_ANCHOR, SAT_ANCHOR};
use crate::error::{Error, Result};

#[derive(Debug, Serialize)]
struct ReportLine<'a> {
    policy: &'a str,
    beta: Option<f64>,
    source: ValueSource,
    v_sat: f64,
    v_ads: f64,
    sat_loss_pct: f64,
    ads_loss_pct: f64,
    non_dominated: bool,
}

#[derive(Debug, Serialize)]
struct PlotPoint<'a> {
    series: &'static str,
    label: &'a str,
    x_sat_loss_pct: f64,
    y_ads_loss_pct: f64,
    front: bool,
}

fn series(row: &ParetoRow) -> &'static str {
    if row.beta.is_some() {
        "learned"
    } else if row.policy_name == SAT_ANCHOR || row.policy_name == ADS_ANCHOR {
        "anchor"
    } else {
        "baseline"
    }
}

/// Front membership, computed separately for each value source.
fn front_flags(rows: &[ParetoRow]) -> Vec<bool> {
    let mut flags = vec![false; rows.len()];
    for source in [ValueSource::TrueValue, ValueSource::DrEstimate] {
        let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].source == source).collect();
        let subset: Vec<ParetoRow> = idx.iter().map(|&i| rows[i].clone()).collect();
        for j in front_by_values(&subset) {
            flags[idx[j]] = true;
        }
    }
    flags
}

fn to_csv<T: Serialize>(lines: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for l in lines {
        w.serialize(l).map_err(|e| Error::Data(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(format!("csv: {e}")))
}

pub fn report_csv(rows: &[ParetoRow]) -> Result<String> {
    let flags = front_flags(rows);
    to_csv(rows.iter().zip(flags).map(|(r, f)| ReportLine {
        policy: &r.policy_name,
        beta: r.beta,
        source: r.source,
        v_sat: r.v_sat,
        v_ads: r.v_ads,
        sat_loss_pct: r.sat_loss_pct,
        ads_loss_pct: r.ads_loss_pct,
        non_dominated: f,
    }))
}

/// Plot data for the true-value rows (falling back to estimates when no
/// true values are present).
pub fn plot_data_csv(rows: &[ParetoRow]) -> Result<String> {
    let rows = plotted(rows);
    let flags = front_flags(&rows);
    to_csv(rows.iter().zip(flags).map(|(r, f)| PlotPoint {
        series: series(r),
        label: &r.policy_name,
        x_sat_loss_pct: r.sat_loss_pct,
        y_ads_loss_pct: r.ads_loss_pct,
        front: f,
    }))
}

fn plotted(rows: &[ParetoRow]) -> Vec<ParetoRow> {
    let source = if rows.iter().any(|r| r.source == ValueSource::TrueValue) {
        ValueSource::TrueValue
    } else {
        ValueSource::DrEstimate
    };
    rows.iter().filter(|r| r.source == source).cloned().collect()
}

// ── SVG ──

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter of SAT loss (x) against ads loss (y) on 0-100 axes, with the
/// non-dominated points joined.
pub fn render_svg(rows: &[ParetoRow]) -> String {
    let rows = plotted(rows);
    let flags = front_flags(&rows);
    let lo = rows
        .iter()
        .flat_map(|r| [r.sat_loss_pct, r.ads_loss_pct])
        .fold(0.0f64, f64::min)
        .floor();
    let hi = rows
        .iter()
        .flat_map(|r| [r.sat_loss_pct, r.ads_loss_pct])
        .fold(100.0f64, f64::max)
        .ceil();
    let span = hi - lo;
    let px = |x: f64| MARGIN + (x - lo) / span * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - lo) / span * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for k in 0..=4 {
        let v = lo + span * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{x}" y1="{y0}" x2="{x}" y2="{y1}" stroke="#ddd"/><text x="{x}" y="{ty}" text-anchor="middle">{v:.0}</text>"##,
            x = px(v),
            y0 = py(lo),
            y1 = py(hi),
            ty = py(lo) + 16.0
        );
        let _ = writeln!(
            s,
            r##"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="#ddd"/><text x="{tx}" y="{ty}" text-anchor="end">{v:.0}</text>"##,
            x0 = px(lo),
            x1 = px(hi),
            y = py(v),
            tx = px(lo) - 6.0,
            ty = py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">SAT loss (%)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">Ads loss (%)</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    let mut front: Vec<&ParetoRow> = rows.iter().zip(&flags).filter(|(_, &f)| f).map(|(r, _)| r).collect();
    front.sort_by(|a, b| a.sat_loss_pct.total_cmp(&b.sat_loss_pct));
    if front.len() > 1 {
        let pts: Vec<String> = front
            .iter()
            .map(|r| format!("{:.2},{:.2}", px(r.sat_loss_pct), py(r.ads_loss_pct)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#888" stroke-dasharray="4 3"/>"##,
            pts.join(" ")
        );
    }
    for r in &rows {
        let color = match series(r) {
            "learned" => "#d62728",
            "anchor" => "#555555",
            _ => "#1f77b4",
        };
        let (x, y) = (px(r.sat_loss_pct), py(r.ads_loss_pct));
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{color}"><title>{name}: ({sl:.1}, {al:.1})</title></circle><text x="{tx:.2}" y="{ty:.2}">{name}</text>"#,
            name = escape(&r.policy_name),
            sl = r.sat_loss_pct,
            al = r.ads_loss_pct,
            tx = x + 6.0,
            ty = y - 6.0
        );
    }
    s.push_str("</svg>\n");
    s
}
