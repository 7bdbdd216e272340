//! Scatter artifacts: a CSV of coordinates and a self-contained SVG.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{io_err, AtlasError};

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub sample_id: String,
    pub label: String,
    pub x: f64,
    pub y: f64,
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn color(i: usize) -> String {
    match PALETTE.get(i) {
        Some(c) => c.to_string(),
        None => format!("hsl({:.0}, 65%, 45%)", (i as f64 * 137.508) % 360.0),
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Labels in order of first appearance.
fn label_order(points: &[ScatterPoint]) -> Vec<&str> {
    let mut out: Vec<&str> = Vec::new();
    for p in points {
        if !out.contains(&p.label.as_str()) {
            out.push(&p.label);
        }
    }
    out
}

pub fn render_csv(points: &[ScatterPoint]) -> String {
    let mut out = String::from("sample_id,x,y,label\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", csv_field(&p.sample_id), p.x, p.y, csv_field(&p.label));
    }
    out
}

pub fn render_svg(points: &[ScatterPoint], title: &str) -> String {
    const W: f64 = 760.0;
    const H: f64 = 560.0;
    const PAD: f64 = 30.0;
    const LEGEND_W: f64 = 180.0;
    let labels = label_order(points);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let sx = if x1 > x0 { (W - 2.0 * PAD) / (x1 - x0) } else { 1.0 };
    let sy = if y1 > y0 { (H - 2.0 * PAD) / (y1 - y0) } else { 1.0 };
    let s = sx.min(sy);
    let cx = |x: f64| PAD + (x - x0) * s;
    let cy = |y: f64| H - PAD - (y - y0) * s;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{H}" viewBox="0 0 {} {H}" font-family="sans-serif" font-size="12">"#,
        W + LEGEND_W,
        W + LEGEND_W
    );
    let _ = writeln!(out, r#"<title>{}</title>"#, xml_escape(title));
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    out.push_str("<g class=\"points\">\n");
    for p in points {
        let c = labels.iter().position(|l| *l == p.label).expect("label listed");
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.8"><title>{}</title></circle>"#,
            cx(p.x),
            cy(p.y),
            color(c),
            xml_escape(&p.sample_id)
        );
    }
    out.push_str("</g>\n<g class=\"legend\">\n");
    for (i, l) in labels.iter().enumerate() {
        let y = PAD + 20.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<g class="legend-entry"><circle cx="{:.0}" cy="{y:.0}" r="5" fill="{}"/><text x="{:.0}" y="{:.0}">{}</text></g>"#,
            W + 10.0,
            color(i),
            W + 22.0,
            y + 4.0,
            xml_escape(l)
        );
    }
    out.push_str("</g>\n</svg>\n");
    out
}

/// Writes the CSV and SVG scatter files.
pub fn emit_scatter(points: &[ScatterPoint], csv_path: &Path, svg_path: &Path) -> Result<(), AtlasError> {
    if points.is_empty() {
        return Err(AtlasError::EmptyCorpus);
    }
    if let Some(i) = points.iter().position(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(AtlasError::NonFinite(i));
    }
    std::fs::write(csv_path, render_csv(points)).map_err(io_err(csv_path))?;
    std::fs::write(svg_path, render_svg(points, "t-SNE of reasoning embeddings")).map_err(io_err(svg_path))
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => fields.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

pub fn read_scatter_csv(path: &Path) -> Result<Vec<ScatterPoint>, AtlasError> {
    let raw = std::fs::read_to_string(path).map_err(io_err(path))?;
    let parse = |line: usize, message: String| AtlasError::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    raw.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f = split_csv_line(l);
            if f.len() != 4 {
                return Err(parse(i + 1, format!("expected 4 fields, found {}", f.len())));
            }
            Ok(ScatterPoint {
                sample_id: f[0].clone(),
                x: f[1].parse().map_err(|e| parse(i + 1, format!("x: {e}")))?,
                y: f[2].parse().map_err(|e| parse(i + 1, format!("y: {e}")))?,
                label: f[3].clone(),
            })
        })
        .collect()
}

pub fn write_kl_series(path: &Path, series: &[f64]) -> Result<(), AtlasError> {
    let mut out = String::from("iteration,kl\n");
    for (i, k) in series.iter().enumerate() {
        let _ = writeln!(out, "{i},{k}");
    }
    std::fs::write(path, out).map_err(io_err(path))
}
