//! Static SVG charts. Output depends only on the inputs, so repeated runs
//! produce identical files.

use std::fmt::Write;

use chrono::NaiveDate;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 70.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

pub struct Band<'a> {
    pub mean: &'a [f64],
    pub lo: &'a [f64],
    pub hi: &'a [f64],
}

/// Series drawn as points, on the right axis when `right_axis`.
pub struct Overlay<'a> {
    pub label: &'a str,
    pub values: &'a [Option<f64>],
    pub right_axis: bool,
}

pub struct TimeChart<'a> {
    pub title: &'a str,
    pub y_label: &'a str,
    pub dates: &'a [NaiveDate],
    pub band: Band<'a>,
    /// Horizontal reference line, e.g. `R = 1`.
    pub reference: Option<f64>,
    /// 0-based weeks to shade.
    pub missing: &'a [usize],
    pub overlay: Option<Overlay<'a>>,
}

struct Axis {
    lo: f64,
    hi: f64,
    ticks: Vec<f64>,
}

impl Axis {
    fn new(lo: f64, hi: f64) -> Axis {
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5 * lo.abs().max(1.0), hi + 0.5 * hi.abs().max(1.0))
        };
        let raw = (hi - lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 2.5, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| *s >= raw)
            .unwrap_or(10.0 * mag);
        let lo = (lo / step).floor() * step;
        let hi = (hi / step).ceil() * step;
        let n = ((hi - lo) / step).round() as usize;
        let ticks = (0..=n).map(|i| lo + i as f64 * step).collect();
        Axis { lo, hi, ticks }
    }

    fn to_px(&self, v: f64) -> f64 {
        let frac = (v - self.lo) / (self.hi - self.lo);
        HEIGHT - BOTTOM - frac * (HEIGHT - TOP - BOTTOM)
    }
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && (a >= 1e5 || a < 1e-2) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn y_axis(out: &mut String, axis: &Axis, x: f64, label: &str, right: bool) {
    let _ = writeln!(
        out,
        "<line x1=\"{x:.2}\" y1=\"{TOP}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
        HEIGHT - BOTTOM
    );
    let (dx, anchor) = if right { (6.0, "start") } else { (-6.0, "end") };
    for &t in &axis.ticks {
        let y = axis.to_px(t);
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"{anchor}\">{}</text>",
            x + dx,
            y + 4.0,
            tick_label(t)
        );
    }
    let lx = if right { WIDTH - 12.0 } else { 16.0 };
    let _ = writeln!(
        out,
        "<text x=\"{lx:.2}\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 {lx:.2} {:.2})\">{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(label)
    );
}

fn polyline(points: &[(f64, f64)]) -> String {
    let mut s = String::new();
    for (i, (x, y)) in points.iter().enumerate() {
        let _ = write!(s, "{}{x:.2},{y:.2}", if i == 0 { "M" } else { " L" });
    }
    s
}

/// Weekly band chart with optional missing-week shading and an overlay of
/// observed values.
pub fn time_chart(c: &TimeChart) -> String {
    let n = c.dates.len();
    let x_px = |t: f64| LEFT + (t + 0.5) / n.max(1) as f64 * (WIDTH - LEFT - RIGHT);

    let overlay_same_axis = c.overlay.as_ref().filter(|o| !o.right_axis);
    let (mut lo, mut hi) = finite_range(c.band.lo.iter().chain(c.band.hi).chain(c.band.mean).copied());
    if let Some(o) = overlay_same_axis {
        let (a, b) = finite_range(o.values.iter().flatten().copied());
        lo = lo.min(a);
        hi = hi.max(b);
    }
    if let Some(r) = c.reference {
        lo = lo.min(r);
        hi = hi.max(r);
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let axis = Axis::new(lo, hi);

    let mut out = String::new();
    header(&mut out, c.title);
    let week_w = (WIDTH - LEFT - RIGHT) / n.max(1) as f64;
    for &m in c.missing {
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{TOP}\" width=\"{week_w:.2}\" height=\"{:.2}\" fill=\"#d9d9d9\"/>",
            x_px(m as f64) - week_w / 2.0,
            HEIGHT - TOP - BOTTOM
        );
    }
    y_axis(&mut out, &axis, LEFT, c.y_label, false);
    let _ = writeln!(
        out,
        "<line x1=\"{LEFT}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
        HEIGHT - BOTTOM,
        WIDTH - RIGHT,
        HEIGHT - BOTTOM
    );
    let step = (n / 8).max(1);
    for t in (0..n).step_by(step) {
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            x_px(t as f64),
            HEIGHT - BOTTOM + 18.0,
            c.dates[t].format("%Y-%m-%d")
        );
    }

    if n > 0 {
        let mut ring: Vec<(f64, f64)> = (0..n).map(|t| (x_px(t as f64), axis.to_px(c.band.hi[t]))).collect();
        ring.extend((0..n).rev().map(|t| (x_px(t as f64), axis.to_px(c.band.lo[t]))));
        let _ = writeln!(
            out,
            "<path d=\"{} Z\" fill=\"#4477aa\" fill-opacity=\"0.3\" stroke=\"none\"/>",
            polyline(&ring)
        );
        let mean: Vec<(f64, f64)> = (0..n).map(|t| (x_px(t as f64), axis.to_px(c.band.mean[t]))).collect();
        let _ = writeln!(
            out,
            "<path d=\"{}\" fill=\"none\" stroke=\"#224488\" stroke-width=\"2\"/>",
            polyline(&mean)
        );
    }
    if let Some(r) = c.reference {
        let y = axis.to_px(r);
        let _ = writeln!(
            out,
            "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"black\" stroke-dasharray=\"4 4\"/>",
            WIDTH - RIGHT
        );
    }
    if let Some(o) = &c.overlay {
        let o_axis = if o.right_axis {
            let (a, b) = finite_range(o.values.iter().flatten().copied());
            let a2 = if a.is_finite() { Axis::new(a, b) } else { Axis::new(0.0, 1.0) };
            y_axis(&mut out, &a2, WIDTH - RIGHT, o.label, true);
            a2
        } else {
            axis
        };
        for (t, v) in o.values.iter().enumerate() {
            if let Some(v) = v {
                let _ = writeln!(
                    out,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"#cc6677\"/>",
                    x_px(t as f64),
                    o_axis.to_px(*v)
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter of paired values with the dashed identity line.
pub fn scatter_chart(title: &str, x_label: &str, y_label: &str, xs: &[f64], ys: &[f64]) -> String {
    let (lo, hi) = finite_range(xs.iter().chain(ys).copied());
    let axis = if lo.is_finite() { Axis::new(lo, hi) } else { Axis::new(0.0, 1.0) };
    let plot_w = WIDTH - LEFT - RIGHT;
    let x_px = |v: f64| LEFT + (v - axis.lo) / (axis.hi - axis.lo) * plot_w;

    let mut out = String::new();
    header(&mut out, title);
    y_axis(&mut out, &axis, LEFT, y_label, false);
    let _ = writeln!(
        out,
        "<line x1=\"{LEFT}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
        HEIGHT - BOTTOM,
        WIDTH - RIGHT,
        HEIGHT - BOTTOM
    );
    for &t in &axis.ticks {
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            x_px(t),
            HEIGHT - BOTTOM + 18.0,
            tick_label(t)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-dasharray=\"6 4\"/>",
        x_px(axis.lo),
        axis.to_px(axis.lo),
        x_px(axis.hi),
        axis.to_px(axis.hi)
    );
    for (x, y) in xs.iter().zip(ys) {
        if x.is_finite() && y.is_finite() {
            let _ = writeln!(
                out,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#4477aa\" fill-opacity=\"0.8\"/>",
                x_px(*x),
                axis.to_px(*y)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
