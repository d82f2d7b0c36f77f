//! Static SVG line charts: one mean line per band with a shaded one-standard-
//! deviation region.

use std::fmt::Write;

use crate::metrics::AggregateBand;

pub struct Band<'a> {
    pub label: &'a str,
    pub band: &'a AggregateBand,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

/// Render bands on shared axes. Empty input yields an empty frame.
pub fn line_chart_svg(title: &str, y_label: &str, bands: &[Band<'_>]) -> String {
    let xs = bands.iter().flat_map(|b| b.band.epochs.iter().map(|&e| e as f64));
    let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let ys = bands.iter().flat_map(|b| {
        b.band
            .mean
            .iter()
            .zip(&b.band.std)
            .flat_map(|(m, s)| [m - s, m + s])
            .collect::<Vec<_>>()
    });
    let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-9 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    for k in 0..=4 {
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.2}</text><text x="{:.1}" y="{}" text-anchor="middle">{:.0}</text>"#,
            PAD - 4.0,
            sy(fy) + 4.0,
            fy,
            sx(fx),
            H - PAD + 16.0,
            fx
        );
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, W / 2.0, H - 10.0);
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for (i, b) in bands.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let band = b.band;
        let upper = band.epochs.iter().zip(band.mean.iter().zip(&band.std));
        let mut area: Vec<String> = upper
            .clone()
            .map(|(&e, (m, s))| format!("{:.2},{:.2}", sx(e as f64), sy(m + s)))
            .collect();
        area.extend(upper.rev().map(|(&e, (m, s))| format!("{:.2},{:.2}", sx(e as f64), sy(m - s))));
        let line: Vec<String> = band
            .epochs
            .iter()
            .zip(&band.mean)
            .map(|(&e, m)| format!("{:.2},{:.2}", sx(e as f64), sy(*m)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            area.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - PAD - 120.0,
            PAD + 16.0 * i as f64,
            escape(b.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Scatter plot of 2-D points colored by group, e.g. a PCA projection of
/// embeddings colored by cluster.
pub fn scatter_svg(title: &str, points: &[[f64; 2]], groups: &[usize]) -> String {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    for (p, &g) in points.iter().zip(groups) {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}" fill-opacity="0.5"/>"#,
            sx(p[0]),
            sy(p[1]),
            COLORS[g % COLORS.len()]
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
