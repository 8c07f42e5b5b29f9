//! Minimal deterministic SVG charts.

use std::collections::BTreeMap;
use std::fmt::Write;

const W: f64 = 640.0;
const ROW_H: f64 = 28.0;
const LEFT: f64 = 220.0;
const TOP: f64 = 40.0;

pub const STRENGTH_COLORS: [(&str, &str); 4] = [
    ("strong", "#1b7837"),
    ("weak", "#7fbf7b"),
    ("single", "#d9f0d3"),
    ("failed", "#bbbbbb"),
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Horizontal bars of strong/weak/single/failed percentages, one per label.
pub fn stacked_bars(title: &str, rows: &[(String, [f64; 4])]) -> String {
    let plot_w = W - LEFT - 20.0;
    let h = TOP + ROW_H * rows.len() as f64 + 50.0;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{h}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title)).unwrap();
    for (i, (label, pcts)) in rows.iter().enumerate() {
        let y = TOP + ROW_H * i as f64;
        writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 16.0, escape(label)).unwrap();
        let mut x = LEFT;
        for ((name, color), pct) in STRENGTH_COLORS.iter().zip(pcts) {
            let w = plot_w * pct / 100.0;
            if w > 0.0 {
                writeln!(
                    s,
                    r#"<rect class="{name}" x="{x:.2}" y="{y:.1}" width="{w:.2}" height="{:.1}" fill="{color}" data-pct="{pct:.3}"/>"#,
                    ROW_H - 6.0
                )
                .unwrap();
            }
            x += w;
        }
    }
    let ly = h - 20.0;
    for (i, (name, color)) in STRENGTH_COLORS.iter().enumerate() {
        let x = LEFT + 90.0 * i as f64;
        writeln!(s, r#"<rect x="{x}" y="{}" width="12" height="12" fill="{color}"/>"#, ly - 10.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{ly}">{name}</text>"#, x + 16.0).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// One polyline per series over shared x positions.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, y_max: f64, series: &BTreeMap<String, Vec<(f64, f64)>>) -> String {
    const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let (h, l, r, t, b) = (400.0, 60.0, 160.0, 40.0, 50.0);
    let xs: Vec<f64> = series.values().flatten().map(|p| p.0).collect();
    let x_min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let px = |x: f64| l + (W - l - r) * (x - x_min) / span;
    let py = |y: f64| h - b - (h - t - b) * (y / y_max).clamp(0.0, 1.0);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{h}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title)).unwrap();
    writeln!(s, r#"<line x1="{l}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - b, W - r, h - b).unwrap();
    writeln!(s, r#"<line x1="{l}" y1="{t}" x2="{l}" y2="{}" stroke="black"/>"#, h - b).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + W - r) / 2.0, h - 12.0, escape(x_label)).unwrap();
    writeln!(s, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#, h / 2.0, h / 2.0, escape(y_label)).unwrap();
    for k in 0..=4 {
        let y = y_max * k as f64 / 4.0;
        writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{y:.2}</text>"#, l - 4.0, py(y) + 4.0).unwrap();
    }
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{x}</text>"#, px(x), h - b + 16.0).unwrap();
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        writeln!(s, r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" ")).unwrap();
        for &(x, y) in pts {
            writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y)).unwrap();
        }
        let ly = t + 18.0 * i as f64;
        writeln!(s, r#"<rect x="{}" y="{}" width="12" height="3" fill="{color}"/>"#, W - r + 10.0, ly + 4.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, W - r + 26.0, ly + 9.0, escape(name)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_strong_bar_spans_the_plot() {
        let svg = stacked_bars("t", &[("a".into(), [100.0, 0.0, 0.0, 0.0])]);
        assert_eq!(svg.matches("<rect class=").count(), 1);
        assert!(svg.contains(r#"class="strong""#) && svg.contains(r#"data-pct="100.000""#));
    }

    #[test]
    fn labels_are_escaped() {
        let svg = stacked_bars("a<b", &[]);
        assert!(svg.contains("a&lt;b"));
    }

    #[test]
    fn line_chart_has_one_polyline_per_series() {
        let mut series = BTreeMap::new();
        series.insert("x".to_string(), vec![(1.0, 1.0), (2.0, 3.0)]);
        series.insert("y".to_string(), vec![(1.0, 2.0), (2.0, 0.5)]);
        let svg = line_chart("t", "d", "S", 9.0, &series);
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
