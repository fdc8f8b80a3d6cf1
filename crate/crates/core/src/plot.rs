//! Minimal SVG charts for the report. The numbers behind every chart are
//! also written as CSV.

use std::fmt::Write as _;

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        Self {
            x: span(&mut xs.clone()),
            y: span(&mut ys.clone()),
        }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * PAD)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(svg: &mut String, title: &str, xlabel: &str, ylabel: &str, f: &Frame) {
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = write!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (PAD, W - PAD, H - PAD, PAD);
    let _ = write!(
        svg,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#
    );
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 10.0,
        escape(xlabel)
    );
    let _ = write!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    for (v, x, y, anchor) in [
        (f.x.0, x0, y0 + 14.0, "start"),
        (f.x.1, x1, y0 + 14.0, "end"),
        (f.y.0, x0 - 4.0, y0, "end"),
        (f.y.1, x0 - 4.0, y1 + 4.0, "end"),
    ] {
        let _ = write!(svg, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{v:.4}</text>"#);
    }
}

/// Polyline with point markers.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64)]) -> String {
    let f = Frame::new(points.iter().map(|p| p.0), points.iter().map(|p| p.1));
    let mut svg = String::new();
    open(&mut svg, title, xlabel, ylabel, &f);
    let path: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
        .collect();
    let _ = write!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        path.join(" ")
    );
    for &(x, y) in points {
        let _ = write!(
            svg,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4"/>"##,
            f.px(x),
            f.py(y)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Histogram bin with the part of its count that is highlighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub highlighted: usize,
}

/// `n` equal-width bins over the data range; `flags` marks highlighted values.
pub fn histogram_bins(values: &[f64], flags: &[bool], n: usize) -> Vec<Bin> {
    assert_eq!(values.len(), flags.len());
    let n = n.max(1);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return Vec::new();
    }
    let width = if hi > lo { (hi - lo) / n as f64 } else { 1.0 };
    let mut bins: Vec<Bin> = (0..n)
        .map(|i| Bin {
            lo: lo + i as f64 * width,
            hi: lo + (i + 1) as f64 * width,
            count: 0,
            highlighted: 0,
        })
        .collect();
    for (&v, &flag) in values.iter().zip(flags) {
        let i = (((v - lo) / width) as usize).min(n - 1);
        bins[i].count += 1;
        bins[i].highlighted += usize::from(flag);
    }
    bins
}

/// Bars with the highlighted part of each bin stacked in a second color.
pub fn histogram(title: &str, xlabel: &str, bins: &[Bin]) -> String {
    let f = Frame::new(
        bins.iter().flat_map(|b| [b.lo, b.hi]),
        bins.iter().map(|b| b.count as f64).chain([0.0]),
    );
    let mut svg = String::new();
    open(&mut svg, title, xlabel, "count", &f);
    for b in bins {
        let (x0, x1) = (f.px(b.lo), f.px(b.hi));
        let base = f.py(0.0);
        for (count, color) in [(b.count, "#9ecae1"), (b.highlighted, "#d62728")] {
            let top = f.py(count as f64);
            let _ = write!(
                svg,
                r#"<rect x="{x0:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{color}" stroke="white"/>"#,
                (x1 - x0).max(0.0),
                (base - top).max(0.0)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
