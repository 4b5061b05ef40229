//! Minimal static SVG line charts on log-log axes.

use std::fmt::Write as _;

use super::{group, summarize, BenchRecord, Metric};

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn log_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| *v > 0.0)
        .map(f64::log10)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Render `series` as polylines; both axes are log10-scaled.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1) = log_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = log_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let px = |x: f64| MARGIN + (x.log10() - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y.log10() - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{b}" stroke="black"/>"#,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for (v, anchor_x, anchor_y, label) in [(x0, px(10f64.powf(x0)), HEIGHT - MARGIN + 16.0, "start"), (x1, px(10f64.powf(x1)), HEIGHT - MARGIN + 16.0, "end")] {
        let _ = writeln!(s, r#"<text x="{anchor_x:.1}" y="{anchor_y:.1}" text-anchor="{label}">{}</text>"#, tick(v));
    }
    for (v, y) in [(y0, HEIGHT - MARGIN), (y1, MARGIN)] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, MARGIN - 4.0, y + 4.0, tick(v));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 16.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">{}</text>"#,
        escape(y_label),
        y = HEIGHT / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0 > 0.0 && p.1 > 0.0)
            .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for p in &pts {
            let (cx, cy) = p.split_once(',').expect("formatted point");
            let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
        }
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{color}">{}</text>"#,
            MARGIN + 10.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(log_value: f64) -> String {
    let v = 10f64.powf(log_value);
    if (1e-2..1e5).contains(&v) {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn middle(mut values: Vec<usize>) -> usize {
    values.sort_unstable();
    values.dedup();
    values[values.len() / 2]
}

/// The four standard charts, `{metric}_vs_{axis}.svg`. Charts against `n`
/// hold `d` at the median swept value, and vice versa.
pub fn sweep_plots(records: &[BenchRecord]) -> Vec<(String, String)> {
    if records.is_empty() {
        return Vec::new();
    }
    let fixed_d = middle(records.iter().map(|r| r.d).collect());
    let fixed_n = middle(records.iter().map(|r| r.n).collect());
    let mut out = Vec::new();
    for (metric, mname, unit) in [(Metric::Bytes, "bytes", "peak transient bytes"), (Metric::Seconds, "seconds", "forward seconds (min of reps)")] {
        for axis in ["n", "d"] {
            let mut series = Vec::new();
            for (mech, recs) in group(records.iter(), |r| r.mechanism) {
                let sel: Vec<&BenchRecord> = recs
                    .iter()
                    .filter(|r| if axis == "n" { r.d == fixed_d } else { r.n == fixed_n })
                    .collect();
                let points = group(sel.into_iter(), |r| if axis == "n" { r.n } else { r.d })
                    .into_iter()
                    .map(|(x, g)| {
                        let (b, s) = summarize(&g);
                        (x as f64, if metric == Metric::Bytes { b as f64 } else { s })
                    })
                    .collect();
                series.push(Series {
                    label: mech.to_string(),
                    points,
                });
            }
            let title = if axis == "n" {
                format!("{unit} vs sequence length (d = {fixed_d})")
            } else {
                format!("{unit} vs model dim (n = {fixed_n})")
            };
            let x_label = if axis == "n" { "sequence length n" } else { "dimension d" };
            out.push((format!("{mname}_vs_{axis}.svg"), line_plot_svg(&title, x_label, unit, &series)));
        }
    }
    out
}
