//! Minimal SVG plots: lines, scatter, heatmap. Output is plain text and
//! deterministic for identical input.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 450.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Series {
    pub fn new(label: &str, x: &[f64], y: &[f64]) -> Self {
        Self {
            label: label.into(),
            x: x.to_vec(),
            y: y.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Labels {
    pub title: String,
    pub x: String,
    pub y: String,
}

impl Labels {
    pub fn new(title: &str, x: &str, y: &str) -> Self {
        Self {
            title: title.into(),
            x: x.into(),
            y: y.into(),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn bounds<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-300 + 1e-12 * hi.abs() {
        let pad = if hi == 0.0 { 1.0 } else { 0.5 * hi.abs() };
        return (lo - pad, hi + pad);
    }
    let pad = 0.04 * (hi - lo);
    (lo - pad, hi + pad)
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn open(out: &mut String, labels: &Labels) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(&labels.title)
    );
}

fn axes(out: &mut String, f: &Frame, labels: &Labels) {
    let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        out,
        r#"<rect x="{l}" y="{t}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        r - l,
        b - t
    );
    for i in 0..=4 {
        let xv = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
        let px = f.px(xv);
        let _ = writeln!(
            out,
            r#"<line x1="{px:.1}" y1="{b}" x2="{px:.1}" y2="{:.1}" stroke="black"/>"#,
            b + 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            b + 19.0,
            fmt_tick(xv)
        );
        let yv = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let py = f.py(yv);
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{py:.1}" x2="{l}" y2="{py:.1}" stroke="black"/>"#,
            l - 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            l - 8.0,
            py + 4.0,
            fmt_tick(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        HEIGHT - 15.0,
        escape(&labels.x)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(&labels.y)
    );
}

fn legend(out: &mut String, series: &[Series]) {
    for (i, s) in series.iter().enumerate() {
        let y = TOP + 14.0 + 18.0 * i as f64;
        let x = WIDTH - RIGHT + 12.0;
        let c = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{:.1}" width="12" height="12" fill="{c}"/>"#,
            y - 10.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{y:.1}">{}</text>"#,
            x + 18.0,
            escape(&s.label)
        );
    }
}

fn frame(series: &[Series]) -> Frame {
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.x.iter()));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.y.iter()));
    Frame { x0, x1, y0, y1 }
}

pub fn line_plot(series: &[Series], labels: &Labels) -> String {
    let mut out = String::new();
    open(&mut out, labels);
    let f = frame(series);
    axes(&mut out, &f, labels);
    for (i, s) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        // Break the polyline at non-finite samples.
        let mut pts = String::new();
        let flush = |pts: &mut String, out: &mut String| {
            if !pts.is_empty() {
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#,
                    pts.trim_end()
                );
                pts.clear();
            }
        };
        for (&x, &y) in s.x.iter().zip(&s.y) {
            if x.is_finite() && y.is_finite() {
                let _ = write!(pts, "{:.2},{:.2} ", f.px(x), f.py(y));
            } else {
                flush(&mut pts, &mut out);
            }
        }
        flush(&mut pts, &mut out);
    }
    legend(&mut out, series);
    out.push_str("</svg>\n");
    out
}

pub fn scatter_plot(series: &[Series], labels: &Labels) -> String {
    let mut out = String::new();
    open(&mut out, labels);
    let f = frame(series);
    axes(&mut out, &f, labels);
    for (i, s) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        for (&x, &y) in s.x.iter().zip(&s.y) {
            if x.is_finite() && y.is_finite() {
                let _ = writeln!(
                    out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{c}" fill-opacity="0.7"/>"#,
                    f.px(x),
                    f.py(y)
                );
            }
        }
    }
    legend(&mut out, series);
    out.push_str("</svg>\n");
    out
}

/// Diverging blue-white-red scale on [-1, 1].
fn diverging(s: f64) -> String {
    let s = s.clamp(-1.0, 1.0);
    let (r, g, b) = if s >= 0.0 {
        (255.0, 255.0 * (1.0 - s), 255.0 * (1.0 - s))
    } else {
        (255.0 * (1.0 + s), 255.0 * (1.0 + s), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// `values[i][j]` is the value at time `t[i]` and position `x[j]`. Large
/// inputs are subsampled to at most 240 × 240 cells.
pub fn heatmap(x: &[f64], t: &[f64], values: &[Vec<f64>], labels: &Labels) -> String {
    let mut out = String::new();
    open(&mut out, labels);
    let (x0, x1) = bounds(x.iter());
    let (t0, t1) = bounds(t.iter());
    let f = Frame { x0, x1, y0: t0, y1: t1 };
    axes(&mut out, &f, labels);
    let scale = values
        .iter()
        .flatten()
        .filter(|v| v.is_finite())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let xs = x.len().div_ceil(240).max(1);
    let ts = t.len().div_ceil(240).max(1);
    let cw = (f.px(x0 + (x1 - x0) * xs as f64 / x.len().max(1) as f64) - f.px(x0)).abs() + 0.5;
    let ch = if t.len() > 1 {
        (f.py(t[0]) - f.py(t[ts.min(t.len() - 1)])).abs() + 0.5
    } else {
        HEIGHT - TOP - BOTTOM
    };
    for i in (0..t.len()).step_by(ts) {
        for j in (0..x.len()).step_by(xs) {
            let v = values[i][j];
            if !v.is_finite() {
                continue;
            }
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{cw:.2}" height="{ch:.2}" fill="{}"/>"#,
                f.px(x[j]),
                f.py(t[i]) - ch,
                diverging(v / scale)
            );
        }
    }
    let lx = WIDTH - RIGHT + 20.0;
    for k in 0..=10 {
        let s = 1.0 - 0.2 * k as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{lx}" y="{:.1}" width="16" height="20" fill="{}"/>"#,
            TOP + 20.0 * k as f64,
            diverging(s)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
        lx + 22.0,
        TOP + 14.0,
        fmt_tick(scale)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
        lx + 22.0,
        TOP + 214.0,
        fmt_tick(-scale)
    );
    out.push_str("</svg>\n");
    out
}
