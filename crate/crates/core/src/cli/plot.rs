//! Frontier CSV reading and SVG scatter rendering.

use std::fmt::Write as _;
use std::path::Path;

use super::experiment::FRONTIER_HEADER;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    /// `(epoch, accuracy, ci_accuracy, p_err, ci_p_err)`, sorted by epoch.
    pub points: Vec<(usize, f64, f64, f64, f64)>,
}

pub fn read_frontier(path: &Path) -> Result<Series> {
    let format_err = |row: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        message: format!("row {row}: {message}"),
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => format_err(1, format!("{other:?}")),
        })?;
    let header = reader.headers().map_err(|e| format_err(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != FRONTIER_HEADER {
        return Err(format_err(1, format!("expected header {FRONTIER_HEADER}")));
    }
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| format_err(row, e.to_string()))?;
        let epoch: usize = record[0]
            .parse()
            .map_err(|_| format_err(row, format!("epoch '{}' is not an integer", &record[0])))?;
        let mut vals = [0.0; 4];
        for (j, v) in vals.iter_mut().enumerate() {
            let field = &record[j + 1];
            *v = field
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| {
                    format_err(
                        row,
                        format!("column {}: '{field}' is not a finite number", j + 2),
                    )
                })?;
        }
        points.push((epoch, vals[0], vals[1], vals[2], vals[3]));
    }
    if points.is_empty() {
        return Err(format_err(2, "no data rows".into()));
    }
    points.sort_by_key(|p| p.0);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Series { name, points })
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

fn axis_range(values: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (v, ci) in values {
        lo = lo.min(v - ci);
        hi = hi.max(v + ci);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.05 };
    (lo - pad, hi + pad)
}

fn star(cx: f64, cy: f64, r: f64) -> String {
    (0..10)
        .map(|i| {
            let radius = if i % 2 == 0 { r } else { 0.45 * r };
            let angle = std::f64::consts::PI * (i as f64 / 5.0 - 0.5);
            format!(
                "{:.2},{:.2}",
                cx + radius * angle.cos(),
                cy + radius * angle.sin()
            )
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Accuracy on x, attack error on y. The first epoch is a triangle, the last a star, and the
/// rest dots on a dotted line; each point carries its CI cross-hair.
pub fn render_svg(series: &[Series], title: Option<&str>) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = axis_range(all().map(|p| (p.1, p.2)));
    let (y0, y1) = axis_range(all().map(|p| (p.3, p.4)));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let Some(t) = title {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(t)
        );
    }
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<g class="axes" stroke="black"><line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}"/><line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}"/></g>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{xv:.3}</text><text x="{}" y="{:.2}" text-anchor="end">{yv:.3}</text>"#,
            sx(xv),
            bottom + 18.0,
            left - 6.0,
            sy(yv) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">accuracy</text>"#,
        WIDTH / 2.0,
        HEIGHT - 18.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">attack error</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    for (idx, ser) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<g class="series" data-name="{}" stroke="{color}" fill="{color}">"#,
            escape(&ser.name)
        );
        let path: Vec<String> = ser
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.1), sy(p.3)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="trajectory" points="{}" fill="none" stroke-dasharray="2,3"/>"#,
            path.join(" ")
        );
        let last = ser.points.len() - 1;
        for (i, &(_, acc, ci_acc, perr, ci_perr)) in ser.points.iter().enumerate() {
            let (cx, cy) = (sx(acc), sy(perr));
            let _ = writeln!(
                s,
                r#"<line class="ci" x1="{:.2}" y1="{cy:.2}" x2="{:.2}" y2="{cy:.2}" stroke-width="0.8"/><line class="ci" x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke-width="0.8"/>"#,
                sx(acc - ci_acc),
                sx(acc + ci_acc),
                sy(perr - ci_perr),
                sy(perr + ci_perr)
            );
            if i == 0 {
                let _ = writeln!(
                    s,
                    r#"<polygon class="marker-first" points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}"/>"#,
                    cx,
                    cy - 7.0,
                    cx - 6.0,
                    cy + 5.0,
                    cx + 6.0,
                    cy + 5.0
                );
            } else if i == last {
                let _ = writeln!(
                    s,
                    r#"<polygon class="marker-last" points="{}"/>"#,
                    star(cx, cy, 8.0)
                );
            } else {
                let _ = writeln!(
                    s,
                    r#"<circle class="marker-mid" cx="{cx:.2}" cy="{cy:.2}" r="3"/>"#
                );
            }
        }
        let ly = top + 16.0 * idx as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="10" height="10"/><text x="{}" y="{}" stroke="none">{}</text>"#,
            right - 120.0,
            ly - 9.0,
            right - 105.0,
            ly,
            escape(&ser.name)
        );
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
