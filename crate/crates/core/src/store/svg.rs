//! Minimal static SVG charts. Output depends only on the inputs.

use std::fmt::Write;

use crate::error::{validate, Result};

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];
const TICKS: usize = 5;

pub(crate) struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

pub(crate) struct Axes<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, axes: &Axes<'_>) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(axes.title)
    );
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 0.0 { lo.abs() * 0.05 } else { 0.5 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn tick_label(v: f64, log: bool) -> String {
    let v = if log { 10f64.powf(v) } else { v };
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

/// Frame, ticks and labels; returns the data-to-pixel mapping.
fn frame(
    out: &mut String,
    axes: &Axes<'_>,
    (x0, x1): (f64, f64),
    (y0, y1): (f64, f64),
    log: bool,
) -> impl Fn(f64, f64) -> (f64, f64) {
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=TICKS {
        let t = i as f64 / TICKS as f64;
        let px = LEFT + t * pw;
        let py = TOP + ph - t * ph;
        let _ = writeln!(
            out,
            r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            TOP + ph + 16.0,
            tick_label(x0 + t * (x1 - x0), log)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            py + 4.0,
            tick_label(y0 + t * (y1 - y0), log)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" class="x-label">{}</text>"#,
        LEFT + pw / 2.0,
        H - 18.0,
        escape(axes.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})" class="y-label">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(axes.y_label)
    );
    move |x, y| {
        (
            LEFT + (x - x0) / (x1 - x0) * pw,
            TOP + ph - (y - y0) / (y1 - y0) * ph,
        )
    }
}

pub(crate) fn line_chart(axes: &Axes<'_>, series: &[Series<'_>]) -> String {
    let mut out = String::new();
    header(&mut out, axes);
    let xr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let map = frame(&mut out, axes, xr, yr, false);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| {
                let (px, py) = map(x, y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}" text-anchor="end">{}</text>"#,
            W - RIGHT - 6.0,
            TOP + 16.0 + 14.0 * i as f64,
            escape(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

pub(crate) fn scatter(axes: &Axes<'_>, points: &[(f64, f64)], log_log: bool) -> Result<String> {
    if log_log {
        validate(points.iter().all(|&(x, y)| x > 0.0 && y > 0.0), || {
            "log-log axes need strictly positive values".into()
        })?;
    }
    let tr: Vec<(f64, f64)> = if log_log {
        points
            .iter()
            .map(|&(x, y)| (x.log10(), y.log10()))
            .collect()
    } else {
        points.to_vec()
    };
    let mut out = String::new();
    header(&mut out, axes);
    let map = frame(
        &mut out,
        axes,
        range(tr.iter().map(|p| p.0)),
        range(tr.iter().map(|p| p.1)),
        log_log,
    );
    for &(x, y) in &tr {
        let (px, py) = map(x, y);
        let _ = writeln!(
            out,
            r#"<circle class="point" cx="{px:.2}" cy="{py:.2}" r="3" fill="{}"/>"#,
            PALETTE[0]
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Blue (0) to red (1) color ramp.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (40.0 + 215.0 * t).round() as u8;
    let b = (255.0 - 215.0 * t).round() as u8;
    format!("#{r:02x}40{b:02x}")
}

/// Square heatmap of values in `[0, 1]`, one `class="cell"` rectangle per
/// entry.
pub(crate) fn heatmap(title: &str, labels: &[String], values: &[Vec<f64>]) -> String {
    let n = labels.len().max(1);
    let side = (H - TOP - BOTTOM).min(W - 2.0 * LEFT - RIGHT);
    let cell = side / n as f64;
    let x0 = LEFT + 60.0;
    let mut out = String::new();
    header(
        &mut out,
        &Axes {
            title,
            x_label: "",
            y_label: "",
        },
    );
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<rect class="cell" x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{}"><title>{} / {}: {v:.4}</title></rect>"#,
                x0 + j as f64 * cell,
                TOP + i as f64 * cell,
                ramp(v),
                escape(&labels[i]),
                escape(&labels[j])
            );
        }
    }
    for (i, l) in labels.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="9">{}</text>"#,
            x0 - 4.0,
            TOP + (i as f64 + 0.5) * cell + 3.0,
            escape(l)
        );
    }
    out.push_str("</svg>\n");
    out
}
