//! Standalone SVG figures: correlation bars and drop-rate heatmaps.

use std::fmt::Write as _;

use crate::ablation::{Family, Heatmap};
use crate::eval_metrics::CorrelationReport;

/// Viridis anchors, dark to bright.
const RAMP: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

/// Colour for `t` in `[0, 1]`, monotone in lightness.
pub fn ramp(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let f = x - i as f64;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    let mix = |p: f64, q: f64| (p + (q - p) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(s: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">
<rect width="{w}" height="{h}" fill="white"/>"#
    );
}

fn text(s: &mut String, x: f64, y: f64, anchor: &str, fill: &str, body: &str) {
    let _ = writeln!(
        s,
        r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" fill="{fill}">{}</text>"#,
        escape(body)
    );
}

/// Bar chart of every report row with its confidence interval.
pub fn correlation_svg(report: &CorrelationReport, title: &str) -> String {
    let (left, top, bar_h, gap, width) = (90.0, 40.0, 14.0, 4.0, 360.0);
    let h = top + report.rows.len() as f64 * (bar_h + gap) + 40.0;
    let w = left + width + 60.0;
    let x_of = |r: f64| left + (r.clamp(-1.0, 1.0) + 1.0) / 2.0 * width;
    let mut s = String::new();
    header(&mut s, w, h);
    text(&mut s, w / 2.0, 20.0, "middle", "black", title);
    let zero = x_of(0.0);
    let _ = writeln!(
        s,
        r#"<line x1="{zero:.1}" y1="{top}" x2="{zero:.1}" y2="{:.1}" stroke="gray"/>"#,
        h - 30.0
    );
    for (i, row) in report.rows.iter().enumerate() {
        let y = top + i as f64 * (bar_h + gap);
        let (x0, x1) = (zero.min(x_of(row.r)), zero.max(x_of(row.r)));
        text(&mut s, left - 6.0, y + bar_h - 3.0, "end", "black", &row.name);
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.1}" y="{y:.1}" width="{:.1}" height="{bar_h}" fill="{}"/>"#,
            x1 - x0,
            ramp((row.r + 1.0) / 2.0)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
            x_of(row.ci_low),
            y + bar_h / 2.0,
            x_of(row.ci_high),
            y + bar_h / 2.0
        );
        text(&mut s, left + width + 8.0, y + bar_h - 3.0, "start", "black", &format!("{:.3}", row.r));
    }
    for r in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        text(&mut s, x_of(r), h - 14.0, "middle", "black", &format!("{r}"));
    }
    s.push_str("</svg>\n");
    s
}

/// Electrode × feature grid coloured by association strength and labelled
/// with the drop rate.
pub fn heatmap_svg(h: &Heatmap) -> String {
    let mut columns: Vec<String> = h.sensors.clone();
    columns.extend(["pitch".to_string(), "loudness".to_string()]);
    let values: Vec<Vec<f64>> = (0..h.electrodes.len())
        .map(|e| {
            let mut row = h.drop[e].to_vec();
            row.extend([h.pitch[e], h.loudness[e]]);
            row
        })
        .collect();
    let assoc: Vec<f64> = values
        .iter()
        .flatten()
        .map(|&v| h.association(v).clamp(-1.0, 1.0))
        .filter(|v| v.is_finite())
        .collect();
    let lo = assoc.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = assoc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let (left, top, cell) = (80.0, 50.0, 52.0);
    let w = left + columns.len() as f64 * cell + 20.0;
    let hgt = top + h.electrodes.len() as f64 * cell + 20.0;
    let mut s = String::new();
    header(&mut s, w, hgt);
    let title = match h.family {
        Family::Remove => "Correlation drop rate, electrode removed",
        Family::UseOnly => "Correlation drop rate, electrode used alone",
    };
    text(&mut s, w / 2.0, 20.0, "middle", "black", title);
    for (c, name) in columns.iter().enumerate() {
        text(&mut s, left + (c as f64 + 0.5) * cell, top - 8.0, "middle", "black", name);
    }
    for (e, id) in h.electrodes.iter().enumerate() {
        let y = top + e as f64 * cell;
        text(&mut s, left - 8.0, y + cell / 2.0 + 4.0, "end", "black", &format!("ch.{id}"));
        for (c, &v) in values[e].iter().enumerate() {
            let t = (h.association(v).clamp(-1.0, 1.0) - lo) / span;
            let x = left + c as f64 * cell;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="{}" stroke="white"/>"#,
                ramp(t)
            );
            let ink = if t > 0.6 { "black" } else { "white" };
            text(&mut s, x + cell / 2.0, y + cell / 2.0 + 4.0, "middle", ink, &format!("{v:.2}"));
        }
    }
    s.push_str("</svg>\n");
    s
}
