//! Static SVG rendering of metrics and comparison CSVs.
//!
//! Output depends only on the input text: coordinates are printed with a fixed
//! number of decimals and series keep their input order.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::evalsuite::COMPARISON_HEADER;
use crate::trainer::METRICS_HEADER;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

/// What a CSV was recognised as.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    LossCurve,
    Comparison,
}

/// Picks the chart from the header line and renders it.
pub fn render_csv(text: &str) -> Result<(PlotKind, String)> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("").trim();
    let body: Vec<&str> = lines.map(str::trim).filter(|l| !l.is_empty()).collect();
    if header == METRICS_HEADER {
        Ok((PlotKind::LossCurve, loss_curve(&parse_loss_rows(&body)?)))
    } else if header == COMPARISON_HEADER {
        Ok((PlotKind::Comparison, comparison_bars(&parse_comparison_rows(&body)?)))
    } else {
        Err(Error::BadHeader(format!("unrecognised header '{header}'")))
    }
}

fn number(field: &str, lineno: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("row {lineno}: '{field}' is not a number")))
}

fn parse_loss_rows(body: &[&str]) -> Result<Vec<(f64, f64)>> {
    let columns = METRICS_HEADER.split(',').count();
    body.iter()
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != columns {
                return Err(Error::Parse(format!("row {}: expected {columns} fields", i + 1)));
            }
            Ok((number(fields[0], i + 1)?, number(fields[1], i + 1)?))
        })
        .collect()
}

/// Per-objective means of recall@1 (image to text) and rho over per-seed rows.
/// Summary rows (`mean`, `std` in the seed column) are skipped.
fn parse_comparison_rows(body: &[&str]) -> Result<Vec<(String, f64, f64)>> {
    let columns = COMPARISON_HEADER.split(',').count();
    let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for (i, line) in body.iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns {
            return Err(Error::Parse(format!("row {}: expected {columns} fields", i + 1)));
        }
        if fields[1].parse::<u64>().is_err() {
            continue;
        }
        let point = (number(fields[2], i + 1)?, number(fields[6], i + 1)?);
        match groups.iter_mut().find(|(name, _)| name == fields[0]) {
            Some((_, v)) => v.push(point),
            None => groups.push((fields[0].to_string(), vec![point])),
        }
    }
    Ok(groups
        .into_iter()
        .map(|(name, v)| {
            let n = v.len() as f64;
            let recall = v.iter().map(|p| p.0).sum::<f64>() / n;
            let rho = v.iter().map(|p| p.1).sum::<f64>() / n;
            (name, recall, rho)
        })
        .collect())
}

fn open_svg(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{HEIGHT:.0}" viewBox="0 0 {WIDTH:.0} {HEIGHT:.0}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>"#,
        WIDTH / 2.0
    );
    s
}

fn axes(s: &mut String, x_label: &str, y_label: &str, y_lo: f64, y_hi: f64) {
    let (x0, y0, x1, y1) = (LEFT, HEIGHT - BOTTOM, WIDTH - RIGHT, TOP);
    let _ = writeln!(
        s,
        r#"<g class="axes" stroke="black" stroke-width="1"><line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}"/><line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}"/></g>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="12">{x_label}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {:.2})">{y_label}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    for (v, y) in [(y_lo, y0), (y_hi, y1)] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.4}</text>"#,
            x0 - 4.0,
            y + 4.0
        );
    }
}

/// Range padded so that a constant series still gets a non-empty span.
fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Polyline of `loss_total` against `step`, one vertex per row.
pub fn loss_curve(points: &[(f64, f64)]) -> String {
    let (x_lo, x_hi) = span(points.iter().map(|p| p.0));
    let (y_lo, y_hi) = span(points.iter().map(|p| p.1));
    let mut s = open_svg("training loss");
    axes(&mut s, "step", "loss_total", y_lo, y_hi);
    if !points.is_empty() {
        let (w, h) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
        let coords: Vec<String> = points
            .iter()
            .map(|&(x, y)| {
                let px = LEFT + (x - x_lo) / (x_hi - x_lo) * w;
                let py = HEIGHT - BOTTOM - (y - y_lo) / (y_hi - y_lo) * h;
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Two bars per objective: mean recall@1 and mean rho.
pub fn comparison_bars(groups: &[(String, f64, f64)]) -> String {
    let (lo, hi) = span(groups.iter().flat_map(|g| [g.1, g.2]).chain([0.0, 1.0]));
    let mut s = open_svg("objective comparison (recall@1, rho)");
    axes(&mut s, "objective", "mean over seeds", lo, hi);
    let (w, h) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let y_of = |v: f64| HEIGHT - BOTTOM - (v - lo) / (hi - lo) * h;
    let slot = w / groups.len().max(1) as f64;
    let bar = slot / 3.0;
    for (i, (name, recall, rho)) in groups.iter().enumerate() {
        let x = LEFT + i as f64 * slot + bar / 2.0;
        for (k, (v, colour)) in [(*recall, "steelblue"), (*rho, "darkorange")].into_iter().enumerate() {
            let (top, bottom) = (y_of(v.max(0.0)), y_of(v.min(0.0)));
            let _ = writeln!(
                s,
                r#"<rect class="bar" x="{:.2}" y="{top:.2}" width="{bar:.2}" height="{:.2}" fill="{colour}"/>"#,
                x + k as f64 * bar,
                bottom - top
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="11">{name}</text>"#,
            x + bar,
            HEIGHT - BOTTOM + 14.0
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics_csv(rows: usize) -> String {
        let mut s = format!("{METRICS_HEADER}\n");
        for i in 0..rows {
            s.push_str(&format!("{i},{},1.0,,,,,0,0.994,1,0.5\n", 3.0 - i as f64 * 0.1));
        }
        s
    }

    #[test]
    fn ten_rows_give_ten_vertices() {
        let (kind, svg) = render_csv(&metrics_csv(10)).unwrap();
        assert_eq!(kind, PlotKind::LossCurve);
        let points = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(points.split(' ').count(), 10);
    }

    #[test]
    fn empty_body_has_axes_only() {
        let (_, svg) = render_csv(&metrics_csv(0)).unwrap();
        assert!(svg.contains("class=\"axes\""));
        assert!(!svg.contains("polyline"));
        let (_, svg) = render_csv(&format!("{COMPARISON_HEADER}\n")).unwrap();
        assert!(!svg.contains("class=\"bar\""));
    }

    #[test]
    fn output_is_deterministic() {
        let csv = metrics_csv(7);
        assert_eq!(render_csv(&csv).unwrap().1, render_csv(&csv).unwrap().1);
    }

    #[test]
    fn comparison_skips_summary_rows() {
        let csv = format!(
            "{COMPARISON_HEADER}\nmcd,0,0.2,0.1,0.5,0.5,0.4\nmcd,1,0.4,0.1,0.5,0.5,0.6\nmcd,mean,9,9,9,9,9\nclip,0,0.1,0.1,0.3,0.3,0.2\n"
        );
        let groups = parse_comparison_rows(&csv.lines().skip(1).collect::<Vec<_>>()).unwrap();
        assert_eq!(groups.len(), 2);
        assert!((groups[0].1 - 0.3).abs() < 1e-12 && (groups[0].2 - 0.5).abs() < 1e-12);
        let (kind, svg) = render_csv(&csv).unwrap();
        assert_eq!(kind, PlotKind::Comparison);
        assert_eq!(svg.matches("class=\"bar\"").count(), 4);
    }

    #[test]
    fn unknown_header_is_rejected() {
        assert!(matches!(render_csv("a,b,c\n1,2,3\n"), Err(Error::BadHeader(_))));
        assert!(matches!(render_csv(""), Err(Error::BadHeader(_))));
    }
}
