//! Cumulative-regret plot as a standalone SVG.

use std::fmt::Write as _;

use mnl_lab::AggregateResult;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Mean cumulative regret per policy with a shaded one-standard-deviation band.
pub fn regret_svg(agg: &AggregateResult) -> String {
    let horizon = agg.policies.iter().map(|p| p.mean.len()).max().unwrap_or(0).max(1);
    let y_max = agg
        .policies
        .iter()
        .flat_map(|p| p.mean.iter().zip(&p.std).map(|(m, s)| m + s))
        .filter(|v| v.is_finite())
        .fold(0.0_f64, f64::max)
        .max(1e-9);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |t: usize| MARGIN + plot_w * t as f64 / horizon as f64;
    let sy = |v: f64| HEIGHT - MARGIN - plot_h * (v.max(0.0) / y_max);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(svg, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let t = horizon * k / 4;
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.1}</text>"#, x0 - 6.0, sy(v) + 4.0, v);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{t}</text>"#, sx(t), y0 + 18.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">round</text>"#, WIDTH / 2.0, HEIGHT - 12.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">cumulative regret</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    for (k, p) in agg.policies.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let upper: Vec<String> = p
            .mean
            .iter()
            .zip(&p.std)
            .enumerate()
            .map(|(t, (m, s))| format!("{:.2},{:.2}", sx(t + 1), sy(m + s)))
            .collect();
        let lower: Vec<String> = p
            .mean
            .iter()
            .zip(&p.std)
            .enumerate()
            .rev()
            .map(|(t, (m, s))| format!("{:.2},{:.2}", sx(t + 1), sy(m - s)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = p
            .mean
            .iter()
            .enumerate()
            .map(|(t, m)| format!("{:.2},{:.2}", sx(t + 1), sy(*m)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
        let ly = MARGIN + 8.0 + 18.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            x0 + 12.0,
            x0 + 36.0,
            x0 + 42.0,
            ly + 4.0,
            escape(&p.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
