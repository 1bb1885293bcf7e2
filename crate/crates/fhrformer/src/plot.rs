//! Minimal SVG line plots for inspecting forecasts and inpainted signals.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, Result};

const WIDTH: f64 = 1000.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 40.0;

/// One polyline. NaN values break the line.
pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub start: usize,
    pub values: &'a [f64],
}

pub fn render(title: &str, series: &[Series<'_>]) -> String {
    let end = series.iter().map(|s| s.start + s.values.len()).max().unwrap_or(1).max(1);
    let finite = series.iter().flat_map(|s| s.values.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0), lo.max(0.0) + 1.0) };
    let x = |i: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / end as f64;
    let y = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{MARGIN}" y="20">{}</text>"#, escape(title));
    let _ = writeln!(svg, r#"<text x="4" y="{:.1}">{hi:.1}</text><text x="4" y="{:.1}">{lo:.1}</text>"#, y(hi) + 4.0, y(lo));
    for (k, s) in series.iter().enumerate() {
        let mut run = String::new();
        let flush = |run: &mut String, svg: &mut String| {
            if !run.is_empty() {
                let _ = writeln!(svg, r#"<polyline fill="none" stroke="{}" stroke-width="1" points="{}"/>"#, s.color, run.trim_end());
                run.clear();
            }
        };
        for (i, &v) in s.values.iter().enumerate() {
            if v.is_finite() {
                let _ = write!(run, "{:.1},{:.1} ", x(s.start + i), y(v));
            } else {
                flush(&mut run, &mut svg);
            }
        }
        flush(&mut run, &mut svg);
        let ly = 20.0 + 14.0 * k as f64;
        let _ = writeln!(svg, r#"<text x="{:.0}" y="{ly}" fill="{}">{}</text>"#, WIDTH - 200.0, s.color, escape(s.label));
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn save(path: &Path, title: &str, series: &[Series<'_>]) -> Result<()> {
    std::fs::write(path, render(title, series)).map_err(|e| CliError::io(path, e))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
