//! Minimal SVG line charts: linear axes, polylines, fixed 800×500 canvas.

use std::fmt::Write;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 500.0;
const MAX_POINTS: usize = 2000;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

#[derive(Clone, Copy)]
struct Rect {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn extent(panel: &Panel) -> ((f64, f64), (f64, f64)) {
    let mut xr = (f64::INFINITY, f64::NEG_INFINITY);
    let mut yr = xr;
    for (x, y) in panel.series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite()) {
        xr = (xr.0.min(*x), xr.1.max(*x));
        yr = (yr.0.min(*y), yr.1.max(*y));
    }
    let widen = |(lo, hi): (f64, f64)| {
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo <= f64::EPSILON * lo.abs().max(1e-300) {
            let pad = lo.abs().max(1e-12) * 0.05;
            (lo - pad, hi + pad)
        } else {
            (lo, hi)
        }
    };
    (widen(xr), widen(yr))
}

fn draw_panel(out: &mut String, panel: &Panel, r: Rect) {
    let ((x0, x1), (y0, y1)) = extent(panel);
    let px = |x: f64| r.x + (x - x0) / (x1 - x0) * r.w;
    let py = |y: f64| r.y + r.h - (y - y0) / (y1 - y0) * r.h;
    let _ = writeln!(out, r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##, r.x, r.y, r.w, r.h);
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#, r.x + r.w / 2.0, r.y - 6.0, escape(&panel.title));
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#, r.x + r.w / 2.0, r.y + r.h + 26.0, escape(&panel.x_label));
    let _ = writeln!(
        out,
        r#"<text x="{0:.1}" y="{1:.1}" font-size="10" text-anchor="middle" transform="rotate(-90 {0:.1} {1:.1})">{2}</text>"#,
        r.x - 44.0,
        r.y + r.h / 2.0,
        escape(&panel.y_label)
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="middle">{:.3e}</text>"#, px(xv), r.y + r.h + 12.0, xv);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="end">{:.3e}</text>"#, r.x - 3.0, py(yv) + 3.0, yv);
    }
    for (i, s) in panel.series.iter().enumerate() {
        let stride = s.points.len().div_ceil(MAX_POINTS).max(1);
        let mut pts = String::new();
        for (x, y) in s.points.iter().step_by(stride).filter(|p| p.0.is_finite() && p.1.is_finite()) {
            let _ = write!(pts, "{:.2},{:.2} ", px(*x), py(*y));
        }
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#, pts.trim_end());
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="9" fill="{color}">{}</text>"#,
            r.x + r.w - 70.0,
            r.y + 12.0 + 11.0 * i as f64,
            escape(&s.label)
        );
    }
}

/// Lays out up to three panels: the first spans the top row, the others
/// share the bottom row.
pub fn render(panels: &[Panel]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (left, top, gap) = (60.0, 22.0, 40.0);
    let row_h = (HEIGHT - 2.0 * top - gap - 30.0) / 2.0;
    let full_w = WIDTH - left - 20.0;
    let half_w = (WIDTH - 2.0 * left - 20.0 - 10.0) / 2.0;
    let rects = [
        Rect { x: left, y: top, w: full_w, h: row_h },
        Rect { x: left, y: top + row_h + gap + 15.0, w: half_w, h: row_h },
        Rect { x: 2.0 * left + half_w + 10.0, y: top + row_h + gap + 15.0, w: half_w, h: row_h },
    ];
    for (p, r) in panels.iter().zip(rects) {
        draw_panel(&mut out, p, r);
    }
    out.push_str("</svg>\n");
    out
}
