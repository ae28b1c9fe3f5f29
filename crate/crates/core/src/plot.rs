//! Bare-bones SVG output: line charts and heatmaps.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn header(out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0,
        escape(ylabel)
    );
}

fn axes(out: &mut String, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) {
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let px = LEFT + f * pw;
        let py = TOP + ph - f * ph;
        let _ = writeln!(
            out,
            r#"<text x="{px}" y="{}" text-anchor="middle">{}</text>"#,
            TOP + ph + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            py + 4.0,
            tick(yv)
        );
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{:.3}", v)
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

/// Lines (with point markers) for each series. Non-finite points are skipped.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    chart(title, xlabel, ylabel, series, true)
}

/// Point clouds, one color per series.
pub fn scatter_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    chart(title, xlabel, ylabel, series, false)
}

fn chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series], lines: bool) -> String {
    let xr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let sx = |x: f64| LEFT + (x - xr.0) / (xr.1 - xr.0) * pw;
    let sy = |y: f64| TOP + ph - (y - yr.0) / (yr.1 - yr.0) * ph;

    let mut out = String::new();
    header(&mut out, title, xlabel, ylabel);
    axes(&mut out, xr, yr);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if lines {
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
        }
        let r = if lines { 2.5 } else { 1.2 };
        for p in &pts {
            let (x, y) = p.split_once(',').unwrap();
            let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="{r}" fill="{color}"/>"#);
        }
        let ly = TOP + 12.0 + 18.0 * i as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn color_ramp(f: f64) -> String {
    // white to dark blue
    let f = f.clamp(0.0, 1.0);
    let r = (255.0 * (1.0 - f) + 8.0 * f) as u8;
    let g = (255.0 * (1.0 - f) + 48.0 * f) as u8;
    let b = (255.0 * (1.0 - f) + 107.0 * f) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn diverging(f: f64) -> String {
    // blue (-1) to white (0) to red (+1)
    let f = f.clamp(-1.0, 1.0);
    let (r, g, b) = if f < 0.0 {
        let a = -f;
        (255.0 * (1.0 - a) + 33.0 * a, 255.0 * (1.0 - a) + 102.0 * a, 255.0 * (1.0 - a) + 172.0 * a)
    } else {
        (255.0 * (1.0 - f) + 178.0 * f, 255.0 * (1.0 - f) + 24.0 * f, 255.0 * (1.0 - f) + 43.0 * f)
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

/// Heatmap of `values[row][col]` with column axis `xs` and row axis `ys`.
/// A diverging palette centered at 0 is used when values change sign.
pub fn heatmap(title: &str, xlabel: &str, ylabel: &str, xs: &[f64], ys: &[f64], values: &[Vec<f64>]) -> String {
    let xr = range(xs.iter().copied());
    let yr = range(ys.iter().copied());
    let (vlo, vhi) = range(values.iter().flatten().copied());
    let signed = vlo < 0.0 && vhi > 0.0;
    let vmax = vlo.abs().max(vhi.abs());
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let cw = pw / xs.len().max(1) as f64;
    let ch = ph / ys.len().max(1) as f64;

    let mut out = String::new();
    header(&mut out, title, xlabel, ylabel);
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                continue;
            }
            let fill = if signed {
                diverging(v / vmax)
            } else {
                color_ramp((v - vlo) / (vhi - vlo))
            };
            // row 0 is drawn at the top when ys descend, at the bottom when they ascend
            let ascending = ys.len() < 2 || ys[0] < ys[ys.len() - 1];
            let yi = if ascending { ys.len() - 1 - i } else { i };
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                LEFT + j as f64 * cw,
                TOP + yi as f64 * ch,
                cw + 0.5,
                ch + 0.5
            );
        }
    }
    axes(&mut out, xr, yr);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}">{} .. {}</text>"#,
        W - RIGHT + 12.0,
        TOP + 12.0,
        tick(vlo),
        tick(vhi)
    );
    out.push_str("</svg>\n");
    out
}
