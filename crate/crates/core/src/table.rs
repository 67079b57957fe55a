//! Rectangular result tables and their CSV / SVG renderings.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("row {row} has {got} cells, expected {expected}")]
    Ragged {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format_number(*v),
            Cell::Text(s) => escape_csv(s),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Num(if v { 1.0 } else { 0.0 })
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Ordered rows over named columns. Row order is insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl SweepTable {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<(), TableError> {
        if row.len() != self.columns.len() {
            return Err(TableError::Ragged {
                row: self.rows.len(),
                got: row.len(),
                expected: self.columns.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize, TableError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| TableError::UnknownColumn(name.to_string()))
    }

    /// Numeric values of one column; text cells become NaN.
    pub fn column(&self, name: &str) -> Result<Vec<f64>, TableError> {
        let idx = self.column_index(name)?;
        Ok(self
            .rows
            .iter()
            .map(|r| r[idx].as_f64().unwrap_or(f64::NAN))
            .collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self.columns.iter().map(|c| escape_csv(c)).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TableError> {
        write_file(path, &self.to_csv())
    }

    /// One polyline per `y_columns` entry against the first column.
    pub fn to_svg(&self, plot: &PlotSpec) -> Result<String, TableError> {
        let ys: Vec<usize> = plot
            .y_columns
            .iter()
            .map(|c| self.column_index(c))
            .collect::<Result<_, _>>()?;
        let xs: Vec<f64> = self
            .rows
            .iter()
            .map(|r| r[0].as_f64().unwrap_or(f64::NAN))
            .collect();

        let finite = |v: &f64| v.is_finite();
        let (x_lo, x_hi) = bounds(xs.iter().copied().filter(finite));
        let (y_lo, y_hi) = bounds(
            ys.iter()
                .flat_map(|&j| self.rows.iter().filter_map(move |r| r[j].as_f64()))
                .filter(finite),
        );

        let (w, h) = (640.0, 400.0);
        let (left, right, top, bottom) = (70.0, 20.0, 30.0, 50.0);
        let pw = w - left - right;
        let ph = h - top - bottom;
        let sx = |x: f64| left + (x - x_lo) / (x_hi - x_lo) * pw;
        let sy = |y: f64| top + ph - (y - y_lo) / (y_hi - y_lo) * ph;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        );
        let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        if let Some(title) = &plot.title {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
                w / 2.0,
                escape_xml(title)
            );
        }
        let _ = writeln!(
            svg,
            r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
            left + pw / 2.0,
            h - 12.0,
            escape_xml(&self.columns[0])
        );
        let y_label: Vec<&str> = plot.y_columns.iter().map(String::as_str).collect();
        let _ = writeln!(
            svg,
            r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
            top + ph / 2.0,
            top + ph / 2.0,
            escape_xml(&y_label.join(", "))
        );
        for (x, anchor, label) in [(left, "start", x_lo), (left + pw, "end", x_hi)] {
            let _ = writeln!(
                svg,
                r#"<text x="{x}" y="{}" text-anchor="{anchor}" font-size="10">{}</text>"#,
                top + ph + 14.0,
                short_number(label)
            );
        }
        for (y, label) in [(top + ph, y_lo), (top + 8.0, y_hi)] {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{y}" text-anchor="end" font-size="10">{}</text>"#,
                left - 4.0,
                short_number(label)
            );
        }

        const PALETTE: [&str; 6] = [
            "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
        ];
        for (n, (&j, name)) in ys.iter().zip(&plot.y_columns).enumerate() {
            let mut points = String::new();
            for (row, &x) in self.rows.iter().zip(&xs) {
                if let Some(y) = row[j].as_f64() {
                    if x.is_finite() && y.is_finite() {
                        let _ = write!(points, "{:.2},{:.2} ", sx(x), sy(y));
                    }
                }
            }
            let color = PALETTE[n % PALETTE.len()];
            let _ = writeln!(
                svg,
                r#"<polyline data-column="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                escape_xml(name),
                points.trim_end()
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" font-size="10" fill="{color}">{}</text>"#,
                left + 8.0,
                top + 14.0 + 12.0 * n as f64,
                escape_xml(name)
            );
        }
        svg.push_str("</svg>\n");
        Ok(svg)
    }

    pub fn write_svg(&self, plot: &PlotSpec, path: &Path) -> Result<(), TableError> {
        write_file(path, &self.to_svg(plot)?)
    }
}

/// Which columns to draw, and an optional title.
#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub y_columns: Vec<String>,
    pub title: Option<String>,
}

impl PlotSpec {
    pub fn new<S: Into<String>>(y_columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            y_columns: y_columns.into_iter().map(Into::into).collect(),
            title: None,
        }
    }

    pub fn titled(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }
}

/// Nine significant digits in scientific notation.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else if v == 0.0 {
        // normalise -0.0
        "0.00000000e0".into()
    } else {
        format!("{v:.8e}")
    }
}

fn short_number(v: f64) -> String {
    format!("{v:.4e}")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.05 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn escape_csv(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn write_file(path: &Path, contents: &str) -> Result<(), TableError> {
    fs::write(path, contents).map_err(|source| TableError::Io {
        path: path.display().to_string(),
        source,
    })
}
