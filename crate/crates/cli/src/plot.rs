//! Minimal self-contained SVG plots.

use std::fmt::Write;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Axis { lo: 0.0, hi: 1.0 };
        }
        if hi - lo < 1e-12 {
            return Axis {
                lo: lo - 0.5,
                hi: hi + 0.5,
            };
        }
        let pad = 0.05 * (hi - lo);
        Axis {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn to_x(&self, v: f64) -> f64 {
        MARGIN + (v - self.lo) / (self.hi - self.lo) * (WIDTH - 2.0 * MARGIN)
    }

    fn to_y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.lo) / (self.hi - self.lo) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn open(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">
<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>
<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>
<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>
<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH / 2.0,
        escape(title),
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_label),
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label),
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN,
    );
}

/// Scatter plot with one `<circle>` per point, colored by class when given.
pub fn scatter(points: &[(f64, f64)], classes: Option<&[usize]>, title: &str) -> String {
    let xa = Axis::fit(points.iter().map(|p| p.0));
    let ya = Axis::fit(points.iter().map(|p| p.1));
    let mut out = String::new();
    open(&mut out, title, "PC1", "PC2");
    for (i, &(x, y)) in points.iter().enumerate() {
        let color = classes.map_or(PALETTE[0], |c| PALETTE[c[i] % PALETTE.len()]);
        let _ = writeln!(
            out,
            r#"<circle cx="{:.3}" cy="{:.3}" r="2.5" fill="{color}" fill-opacity="0.7"/>"#,
            xa.to_x(x),
            ya.to_y(y)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// One point of a line plot with a vertical error bar.
#[derive(Debug, Clone, Copy)]
pub struct ErrorPoint {
    pub x: f64,
    pub y: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Line through the points with error bars, x on a log2 axis, and an
/// optional horizontal reference band.
pub fn line_with_errors(
    points: &[ErrorPoint],
    reference: Option<ErrorPoint>,
    title: &str,
    x_label: &str,
) -> String {
    let log = |x: f64| x.max(f64::MIN_POSITIVE).log2();
    let xa = Axis::fit(points.iter().map(|p| log(p.x)));
    let ys = points
        .iter()
        .chain(reference.iter())
        .flat_map(|p| [p.lo, p.hi, p.y]);
    let ya = Axis::fit(ys);
    let mut out = String::new();
    open(&mut out, title, x_label, "Spearman rho");

    if let Some(r) = reference {
        let (x0, x1) = (MARGIN, WIDTH - MARGIN);
        let _ = writeln!(
            out,
            r##"<rect x="{x0:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="#cccccc" fill-opacity="0.5"/>
<line x1="{x0:.3}" y1="{y:.3}" x2="{x1:.3}" y2="{y:.3}" stroke="#555555" stroke-dasharray="4 3"/>"##,
            ya.to_y(r.hi),
            x1 - x0,
            (ya.to_y(r.lo) - ya.to_y(r.hi)).max(0.0),
            y = ya.to_y(r.y),
        );
    }

    let path: Vec<String> = points
        .iter()
        .map(|p| format!("{:.3},{:.3}", xa.to_x(log(p.x)), ya.to_y(p.y)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
        path.join(" "),
        PALETTE[0]
    );
    for p in points {
        let x = xa.to_x(log(p.x));
        let _ = writeln!(
            out,
            r#"<line x1="{x:.3}" y1="{:.3}" x2="{x:.3}" y2="{:.3}" stroke="black"/>"#,
            ya.to_y(p.lo),
            ya.to_y(p.hi)
        );
        let _ = writeln!(
            out,
            r#"<text x="{x:.3}" y="{:.3}" text-anchor="middle" font-size="10">{}</text>"#,
            HEIGHT - MARGIN + 14.0,
            p.x
        );
        let _ = writeln!(
            out,
            r#"<circle cx="{x:.3}" cy="{:.3}" r="3" fill="{}"/>"#,
            ya.to_y(p.y),
            PALETTE[0]
        );
    }
    out.push_str("</svg>\n");
    out
}
