//! Small deterministic SVG charts: accuracy curves, stacked proportions and
//! bar charts. Coordinates are printed with fixed precision so identical
//! input gives identical bytes.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Frame {
    out: String,
    x0: f64,
    x1: f64,
}

impl Frame {
    fn new(title: &str, xlabel: &str, ylabel: &str, x0: f64, x1: f64) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(out, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#, (LEFT + W - RIGHT) / 2.0, esc(title));
        let (pl, pr, pt, pb) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(out, r#"<line x1="{pl}" y1="{pb}" x2="{pr}" y2="{pb}" stroke="black"/>"#);
        let _ = writeln!(out, r#"<line x1="{pl}" y1="{pt}" x2="{pl}" y2="{pb}" stroke="black"/>"#);
        for i in 0..=5 {
            let v = i as f64 / 5.0;
            let y = pb - v * (pb - pt);
            let _ = writeln!(out, r##"<line x1="{:.1}" y1="{y:.1}" x2="{pl}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{:.0}%</text>"##, pl - 4.0, pl - 6.0, y + 4.0, v * 100.0);
        }
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (pl + pr) / 2.0, H - 16.0, esc(xlabel));
        let _ = writeln!(
            out,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            (pt + pb) / 2.0,
            (pt + pb) / 2.0,
            esc(ylabel)
        );
        Self { out, x0, x1 }
    }

    fn x(&self, v: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        LEFT + (v - self.x0) / span * (W - RIGHT - LEFT)
    }

    fn y(&self, v: f64) -> f64 {
        (H - BOTTOM) - v.clamp(0.0, 1.0) * (H - BOTTOM - TOP)
    }

    fn x_ticks(&mut self, ticks: &[(f64, String)]) {
        for (v, label) in ticks {
            let x = self.x(*v);
            let y = H - BOTTOM;
            let _ = writeln!(self.out, r#"<line x1="{x:.1}" y1="{y}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, y + 4.0, y + 18.0, esc(label));
        }
    }

    fn legend(&mut self, names: &[&str]) {
        for (i, n) in names.iter().enumerate() {
            let y = TOP + 10.0 + 18.0 * i as f64;
            let x = W - RIGHT + 12.0;
            let _ = writeln!(
                self.out,
                r#"<rect x="{x:.1}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                y - 10.0,
                PALETTE[i % PALETTE.len()],
                x + 18.0,
                y,
                esc(n)
            );
        }
    }

    fn empty_note(&mut self) {
        let _ = writeln!(
            self.out,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="#888">no data</text>"##,
            (LEFT + W - RIGHT) / 2.0,
            (TOP + H - BOTTOM) / 2.0
        );
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn x_range(series: &[Series]) -> (f64, f64) {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

fn tick_labels(series: &[Series]) -> Vec<(f64, String)> {
    let mut xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let step = xs.len().div_ceil(10).max(1);
    xs.into_iter().step_by(step).map(|x| (x, format!("{x:.2}"))).collect()
}

/// Accuracy (in `[0, 1]`) against a grid parameter, one polyline per series.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let (x0, x1) = x_range(series);
    let mut f = Frame::new(title, xlabel, ylabel, x0, x1);
    if series.iter().all(|s| s.points.is_empty()) {
        f.empty_note();
        return f.finish();
    }
    f.x_ticks(&tick_labels(series));
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", f.x(x), f.y(y))).collect();
        let _ = writeln!(f.out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        for &(x, y) in &s.points {
            let _ = writeln!(f.out, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, f.x(x), f.y(y));
        }
    }
    let names: Vec<&str> = series.iter().map(|s| s.name.as_str()).collect();
    f.legend(&names);
    f.finish()
}

/// Stacked areas whose heights at each x sum to at most 1; `layers` share the
/// x grid of the first layer.
pub fn stacked_chart(title: &str, xlabel: &str, layers: &[Series]) -> String {
    let (x0, x1) = x_range(layers);
    let mut f = Frame::new(title, xlabel, "proportion", x0, x1);
    let xs: Vec<f64> = layers.first().map(|l| l.points.iter().map(|p| p.0).collect()).unwrap_or_default();
    if xs.is_empty() {
        f.empty_note();
        return f.finish();
    }
    f.x_ticks(&tick_labels(&layers[..1]));
    let mut base = vec![0.0; xs.len()];
    for (i, l) in layers.iter().enumerate() {
        let top: Vec<f64> = base.iter().zip(&l.points).map(|(b, p)| b + p.1).collect();
        let mut pts: Vec<String> = xs.iter().zip(&top).map(|(&x, &y)| format!("{:.1},{:.1}", f.x(x), f.y(y))).collect();
        pts.extend(xs.iter().zip(&base).rev().map(|(&x, &y)| format!("{:.1},{:.1}", f.x(x), f.y(y))));
        let _ = writeln!(
            f.out,
            r#"<polygon points="{}" fill="{}" fill-opacity="0.8" stroke="none"/>"#,
            pts.join(" "),
            PALETTE[i % PALETTE.len()]
        );
        base = top;
    }
    let names: Vec<&str> = layers.iter().map(|s| s.name.as_str()).collect();
    f.legend(&names);
    f.finish()
}

/// One bar per `(label, value)` with values in `[0, 1]`.
pub fn bar_chart(title: &str, xlabel: &str, ylabel: &str, bars: &[(String, f64)]) -> String {
    let n = bars.len().max(1) as f64;
    let mut f = Frame::new(title, xlabel, ylabel, 0.0, n);
    if bars.is_empty() {
        f.empty_note();
        return f.finish();
    }
    for (i, (label, v)) in bars.iter().enumerate() {
        let (xa, xb) = (f.x(i as f64 + 0.15), f.x(i as f64 + 0.85));
        let (y, base) = (f.y(*v), f.y(0.0));
        let _ = writeln!(
            f.out,
            r#"<rect class="bar" x="{xa:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
            xb - xa,
            base - y,
            PALETTE[0]
        );
        let _ = writeln!(
            f.out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text><text x="{:.1}" y="{:.1}" text-anchor="middle">{:.1}%</text>"#,
            (xa + xb) / 2.0,
            base + 18.0,
            esc(label),
            (xa + xb) / 2.0,
            y - 4.0,
            100.0 * v
        );
    }
    f.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s() -> Vec<Series> {
        vec![Series {
            name: "@1".into(),
            points: vec![(0.0, 0.9), (0.2, 0.8), (1.8, 0.05)],
        }]
    }

    #[test]
    fn same_input_same_bytes() {
        assert_eq!(line_chart("t", "x", "y", &s()), line_chart("t", "x", "y", &s()));
    }

    #[test]
    fn empty_input_draws_labelled_axes() {
        let svg = line_chart("Accuracy vs eps", "epsilon", "accuracy", &[]);
        assert!(svg.contains("Accuracy vs eps") && svg.contains("epsilon") && svg.contains("no data"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(bar_chart("b", "x", "y", &[]).contains("no data"));
        assert!(stacked_chart("s", "alpha", &[]).contains("no data"));
    }

    #[test]
    fn bar_count_matches_input() {
        let bars: Vec<(String, f64)> = ["0-0.4", "0.6-1.0", "1.2-1.8"].iter().zip([0.9, 0.4, 0.1]).map(|(l, v)| (l.to_string(), v)).collect();
        assert_eq!(bar_chart("bins", "eps", "acc", &bars).matches(r#"class="bar""#).count(), 3);
    }

    #[test]
    fn labels_are_escaped() {
        assert!(line_chart("a<b", "x", "y", &s()).contains("a&lt;b"));
    }
}
