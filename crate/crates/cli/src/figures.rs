//! Static SVG charts and the data behind them. Every number is printed
//! with fixed precision so output is byte-stable for a fixed input.

use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Draw as a right-continuous step function.
    pub step: bool,
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let mut b = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for (x, y) in series.iter().flat_map(|s| s.points.iter()) {
        b.0 = b.0.min(*x);
        b.1 = b.1.max(*x);
        b.2 = b.2.min(*y);
        b.3 = b.3.max(*y);
    }
    if !b.0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = pad(b.0, b.1);
    let (y0, y1) = pad(b.2, b.3);
    (x0, x1, y0, y1)
}

/// Line chart with a legend on the right. Empty series lists still give a
/// valid (blank) chart.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let (x0, x1, y0, y1) = bounds(series);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" font-size="14" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(xv),
            TOP + ph + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            sy(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        TOP + ph / 2.0,
        escape(ylabel)
    );
    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        let mut prev: Option<(f64, f64)> = None;
        for &(x, y) in &s.points {
            match prev {
                None => {
                    let _ = write!(d, "M{:.2},{:.2}", sx(x), sy(y));
                }
                Some((_, py)) if s.step => {
                    let _ = write!(d, " L{:.2},{:.2} L{:.2},{:.2}", sx(x), sy(py), sx(x), sy(y));
                }
                Some(_) => {
                    let _ = write!(d, " L{:.2},{:.2}", sx(x), sy(y));
                }
            }
            prev = Some((x, y));
        }
        if s.points.len() == 1 {
            let (x, y) = s.points[0];
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#,
                sx(x),
                sy(y)
            );
        } else if !d.is_empty() {
            let _ = writeln!(
                out,
                r#"<path d="{d}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#
            );
        }
        let ly = TOP + 12.0 + 16.0 * i as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Locally weighted linear fit at each point of `at`: tricube weights over
/// the nearest `ceil(span * n)` points, a single pass without robustness
/// reweighting. For spans above 1 the bandwidth grows by the span.
pub fn lowess(x: &[f64], y: &[f64], span: f64, at: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return vec![f64::NAN; at.len()];
    }
    let q = ((span * n as f64).ceil() as usize).clamp(1, n);
    at.iter()
        .map(|&t| {
            let d: Vec<f64> = x.iter().map(|&xi| (xi - t).abs()).collect();
            let mut scratch = d.clone();
            let mut h = *scratch.select_nth_unstable_by(q - 1, f64::total_cmp).1;
            if span > 1.0 {
                h *= span;
            }
            let w: Vec<f64> = d
                .iter()
                .map(|&di| {
                    if h <= 0.0 {
                        f64::from(u8::from(di == 0.0))
                    } else if di < h {
                        (1.0 - (di / h).powi(3)).powi(3)
                    } else {
                        0.0
                    }
                })
                .collect();
            let sw: f64 = w.iter().sum();
            if sw <= 0.0 {
                return f64::NAN;
            }
            let mx = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() / sw;
            let my = w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / sw;
            let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * (x - mx) * (x - mx)).sum();
            let sxy: f64 = w
                .iter()
                .zip(x)
                .zip(y)
                .map(|((w, x), y)| w * (x - mx) * (y - my))
                .sum();
            let range = x.iter().fold(0.0f64, |a, &b| a.max((b - t).abs()));
            if sxx <= 1e-12 * (range * range).max(1e-300) * sw {
                my
            } else {
                my + sxy / sxx * (t - mx)
            }
        })
        .collect()
}

/// `count` evenly spaced points over the range of `x`.
pub fn grid(x: &[f64], count: usize) -> Vec<f64> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return Vec::new();
    }
    if hi == lo || count < 2 {
        return vec![lo];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Step points of the empirical CDF: `(x_(i), i/n)` for the sorted sample,
/// starting from `(x_(1), 0)`. Ties collapse onto the top of their step.
pub fn ecdf_points(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut pts = Vec::with_capacity(v.len() + 1);
    if let Some(&first) = v.first() {
        pts.push((first, 0.0));
    }
    for (i, &x) in v.iter().enumerate() {
        if v.get(i + 1) == Some(&x) {
            continue;
        }
        pts.push((x, (i + 1) as f64 / n));
    }
    pts
}

/// Densities on `bins` equal-width bins over `[lo, hi]`, returned as
/// `(left_edge, right_edge, density)`.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64, f64)> {
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = values.len().max(1) as f64;
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let l = lo + i as f64 * width;
            (l, l + width, c as f64 / (n * width))
        })
        .collect()
}

/// Histogram densities as step points closing at the last edge.
pub fn histogram_steps(h: &[(f64, f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = h.iter().map(|&(l, _, d)| (l, d)).collect();
    if let Some(&(_, r, d)) = h.last() {
        pts.push((r, d));
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowess_reproduces_a_line() {
        let x: Vec<f64> = (0..30).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        for (t, f) in [0.0, 7.5, 29.0]
            .iter()
            .zip(lowess(&x, &y, 1.0, &[0.0, 7.5, 29.0]))
        {
            assert!((f - (2.0 * t - 1.0)).abs() < 1e-9, "{t} {f}");
        }
    }

    #[test]
    fn lowess_constant_and_single_x() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!(lowess(&x, &[5.0; 4], 1.0, &[2.5])
            .iter()
            .all(|v| (v - 5.0).abs() < 1e-12));
        assert_eq!(
            lowess(&[3.0; 4], &[1.0, 2.0, 3.0, 6.0], 1.0, &[3.0]),
            vec![3.0]
        );
    }

    #[test]
    fn ecdf_steps_through_empirical_quantiles() {
        let pts = ecdf_points(&[0.3, 0.1, 0.3, 0.9]);
        assert_eq!(pts, vec![(0.1, 0.0), (0.1, 0.25), (0.3, 0.75), (0.9, 1.0)]);
    }

    #[test]
    fn histogram_integrates_to_one() {
        let v: Vec<f64> = (0..100).map(|i| f64::from(i) / 99.0).collect();
        let h = histogram(&v, 0.0, 1.0, 20);
        let area: f64 = h.iter().map(|(l, r, d)| (r - l) * d).sum();
        assert!((area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chart_is_deterministic_svg() {
        let s = vec![Series {
            name: "a<b".into(),
            points: vec![(0.0, 0.0), (1.0, 1.0)],
            step: true,
        }];
        let a = line_chart("t", "x", "y", &s);
        assert_eq!(a, line_chart("t", "x", "y", &s));
        assert!(a.starts_with("<svg") && a.contains("a&lt;b"));
        assert!(line_chart("t", "x", "y", &[]).ends_with("</svg>\n"));
    }
}
