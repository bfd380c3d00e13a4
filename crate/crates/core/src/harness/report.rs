//! CSV reports and SVG loss curves.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use super::{io_err, HarnessError};
use crate::flow::TeacherRecord;
use crate::isc::Stage1Record;
use crate::refine::Stage2Record;

/// `%g`-style formatting with 6 significant digits.
pub fn format_g6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        trim_zeros(&format!("{x:.*}", (5 - exp) as usize)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_g6(*v),
            Cell::Text(s) if s.contains([',', '"', '\n', '\r']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// A CSV row type with a fixed column order.
pub trait Record {
    fn header() -> Vec<&'static str>;
    fn cells(&self) -> Vec<Cell>;
}

impl Record for TeacherRecord {
    fn header() -> Vec<&'static str> {
        vec!["iteration", "loss"]
    }

    fn cells(&self) -> Vec<Cell> {
        vec![Cell::Int(self.iteration), Cell::Float(self.loss)]
    }
}

impl Record for Stage1Record {
    fn header() -> Vec<&'static str> {
        vec!["iteration", "branch", "loss"]
    }

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Int(self.iteration),
            Cell::Text(self.branch.to_string()),
            Cell::Float(self.loss),
        ]
    }
}

impl Record for Stage2Record {
    fn header() -> Vec<&'static str> {
        vec![
            "iteration",
            "isc",
            "reconstruction",
            "vsd_grad_norm",
            "generator",
            "total",
            "regularizer",
            "discriminator",
        ]
    }

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Int(self.iteration),
            Cell::Float(self.isc),
            Cell::Float(self.reconstruction),
            Cell::Float(self.vsd_grad_norm),
            Cell::Float(self.generator),
            Cell::Float(self.total),
            Cell::Float(self.regularizer),
            Cell::Float(self.discriminator),
        ]
    }
}

/// One line of the metrics report. `seed` is a seed number or `mean`/`std`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub seed: String,
    pub value: f64,
}

impl Record for MetricRow {
    fn header() -> Vec<&'static str> {
        vec!["metric", "seed", "value"]
    }

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Text(self.metric.clone()),
            Cell::Text(self.seed.clone()),
            Cell::Float(self.value),
        ]
    }
}

pub fn write_table<S: AsRef<str>>(header: &[S], rows: &[Vec<Cell>], mut w: impl Write) -> std::io::Result<()> {
    let head: Vec<&str> = header.iter().map(|s| s.as_ref()).collect();
    writeln!(w, "{}", head.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(Cell::render).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()
}

pub fn write_report<R: Record>(records: &[R], w: impl Write) -> std::io::Result<()> {
    let rows: Vec<Vec<Cell>> = records.iter().map(R::cells).collect();
    write_table(&R::header(), &rows, w)
}

/// Writes `records` as CSV with a header row.
pub fn emit_report<R: Record>(records: &[R], path: &Path) -> Result<(), HarnessError> {
    let mut buf = Vec::new();
    write_report(records, &mut buf).expect("writing to memory");
    std::fs::write(path, buf).map_err(io_err(path))
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line plot of one or more `(x, y)` series; non-finite points are skipped.
pub fn loss_plot_svg(title: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let pts = series
        .iter()
        .flat_map(|s| s.1.iter())
        .filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<polyline points="{pad},{pad} {pad},{} {},{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad
    );
    for (y, label) in [(y0, format_g6(y0)), (y1, format_g6(y1))] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{label}</text>"#,
            pad - 4.0,
            sy(y) + 3.0
        );
    }
    for (x, label) in [(x0, format_g6(x0)), (x1, format_g6(x1))] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{label}</text>"#,
            sx(x),
            h - pad + 14.0
        );
    }
    for (i, (name, data)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = data
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            w - pad - 120.0,
            pad + 14.0 * (i as f64 + 1.0),
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
