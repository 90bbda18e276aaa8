//! Static SVG line charts drawn from emitted CSV files.

use anyhow::{anyhow, Context, Result};
use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    /// Horizontal reference line, e.g. an acceptance threshold.
    pub reference: Option<f64>,
}

/// Reads `x_col` against `y_col`, one series per distinct value of `group_col`.
pub fn series_from_csv(text: &str, x_col: &str, y_col: &str, group_col: Option<&str>) -> Result<Vec<Series>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| anyhow!("no column `{name}`"));
    let (xi, yi) = (col(x_col)?, col(y_col)?);
    let gi = group_col.map(col).transpose()?;
    let mut out: Vec<Series> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| rec[i].trim().parse::<f64>().with_context(|| format!("bad number `{}`", &rec[i]));
        let (x, y) = (parse(xi)?, parse(yi)?);
        let label = match gi {
            Some(g) => format!("{group} = {}", &rec[g], group = group_col.unwrap_or_default()),
            None => y_col.to_string(),
        };
        match out.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push((x, y)),
            None => out.push(Series { label, points: vec![(x, y)] }),
        }
    }
    Ok(out)
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 70.0;
const MR: f64 = 150.0;
const MT: f64 = 40.0;
const MB: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn transform(v: f64, log: bool) -> Option<f64> {
    if log {
        (v > 0.0).then(|| v.log10())
    } else {
        v.is_finite().then_some(v)
    }
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick(v: f64, log: bool) -> String {
    let x = if log { 10f64.powf(v) } else { v };
    if x != 0.0 && (x.abs() < 1e-2 || x.abs() >= 1e4) {
        format!("{x:.1e}")
    } else {
        format!("{:.3}", x).trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Each data point is also emitted as a circle carrying its untransformed values in
/// `data-x`/`data-y`, so a chart can be checked against its CSV.
pub fn render_svg(chart: &Chart, series: &[Series]) -> String {
    let pts = || series.iter().flat_map(|s| s.points.iter().filter_map(|&(x, y)| Some((transform(x, chart.log_x)?, transform(y, chart.log_y)?))));
    let (x0, x1) = range(pts().map(|p| p.0));
    let ry = pts().map(|p| p.1).chain(chart.reference.and_then(|r| transform(r, chart.log_y)));
    let (y0, y1) = range(ry);
    let px = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, (ML + W - MR) / 2.0, esc(&chart.title));
    let _ = writeln!(s, r#"<rect x="{ML}" y="{MT}" width="{}" height="{}" fill="none" stroke="black"/>"#, W - ML - MR, H - MT - MB);
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, px(fx), H - MB + 16.0, tick(fx, chart.log_x));
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, ML - 6.0, py(fy) + 4.0, tick(fy, chart.log_y));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (ML + W - MR) / 2.0, H - 12.0, esc(&chart.x_label));
    let _ = writeln!(s, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#, H / 2.0, H / 2.0, esc(&chart.y_label));
    if let Some(r) = chart.reference.and_then(|r| transform(r, chart.log_y)) {
        let _ = writeln!(s, r##"<line x1="{ML}" x2="{}" y1="{:.2}" y2="{:.2}" stroke="#888" stroke-dasharray="5,4"/>"##, W - MR, py(r), py(r));
    }
    for (i, se) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let mut line = String::new();
        let mut dots = String::new();
        for &(x, y) in &se.points {
            let (Some(tx), Some(ty)) = (transform(x, chart.log_x), transform(y, chart.log_y)) else { continue };
            let _ = write!(line, "{:.2},{:.2} ", px(tx), py(ty));
            let _ = writeln!(dots, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}" data-x="{x:e}" data-y="{y:e}"/>"#, px(tx), py(ty));
        }
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, line.trim_end());
        s.push_str(&dots);
        let ly = MT + 14.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" x2="{}" y1="{ly}" y2="{ly}" stroke="{c}" stroke-width="2"/>"#, W - MR + 10.0, W - MR + 30.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, W - MR + 35.0, ly + 4.0, esc(&se.label));
    }
    s.push_str("</svg>\n");
    s
}

/// `(data-x, data-y)` of every marker in a chart produced by [`render_svg`].
pub fn markers(svg: &str) -> Vec<(f64, f64)> {
    let attr = |seg: &str, key: &str| -> Option<f64> {
        let i = seg.find(key)? + key.len();
        let rest = &seg[i..];
        rest[..rest.find('"')?].parse().ok()
    };
    svg.lines().filter(|l| l.starts_with("<circle")).filter_map(|l| Some((attr(l, "data-x=\"")?, attr(l, "data-y=\"")?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markers_match_csv() {
        let csv = "kappa,t,combined\n1,0.5,0.2\n10,0.5,0.07\n100,0.5,0.012\n1,1,0.15\n10,1,0.05\n100,1,0.01\n";
        let series = series_from_csv(csv, "kappa", "combined", Some("t")).unwrap();
        assert_eq!(series.len(), 2);
        let svg = render_svg(&Chart { log_x: true, log_y: true, reference: Some(0.05), ..Chart::default() }, &series);
        let m = markers(&svg);
        assert_eq!(m, vec![(1.0, 0.2), (10.0, 0.07), (100.0, 0.012), (1.0, 0.15), (10.0, 0.05), (100.0, 0.01)]);
    }

    #[test]
    fn missing_column_is_an_error() {
        assert!(series_from_csv("a,b\n1,2\n", "a", "c", None).is_err());
    }
}
