//! Static SVG rendering of risk–coverage curves.

use std::fmt::Write;

use selpred_core::RiskCoverageCurve;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Step plot of risk against coverage on fixed [0, 1] axes.
pub fn render_curve(curve: &RiskCoverageCurve, title: &str, aurcc: f64) -> String {
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let x = |c: f64| MARGIN + c * plot_w;
    let y = |r: f64| HEIGHT - MARGIN - r * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{} (AURCC {:.4})</text>"#,
        WIDTH / 2.0,
        escape(title),
        aurcc
    );
    // axes and ticks
    let _ = writeln!(
        svg,
        r#"<path d="M{:.1} {:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        x(0.0),
        y(1.0),
        y(0.0),
        x(1.0)
    );
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="10">{t:.1}</text>"#,
            x(t),
            y(0.0) + 14.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="10">{t:.1}</text>"#,
            x(0.0) - 6.0,
            y(t) + 3.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12">coverage</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {:.1})">risk</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    // right-endpoint steps, matching the AURCC rectangles
    let mut pts = Vec::with_capacity(curve.points.len() * 2);
    let mut prev = 0.0;
    for p in &curve.points {
        pts.push(format!("{:.2},{:.2}", x(prev), y(p.risk)));
        pts.push(format!("{:.2},{:.2}", x(p.coverage), y(p.risk)));
        prev = p.coverage;
    }
    let _ = writeln!(svg, r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
    svg.push_str("</svg>\n");
    svg
}
