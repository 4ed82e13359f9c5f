use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Rows of numbers under fixed column names, written as CSV.
///
/// Values print in Rust's shortest round-trip form, so identical runs give
/// byte-identical files.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MetricTable {
    pub fn new(columns: &[&str]) -> Self {
        MetricTable {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty metrics file"))?;
        let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (i, line) in lines {
            let row = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(i + 1, "non-numeric metric"))?;
            if row.len() != columns.len() {
                return Err(Error::parse(i + 1, format!("expected {} columns, found {}", columns.len(), row.len())));
            }
            rows.push(row);
        }
        Ok(MetricTable { columns, rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Centered moving average. Position `i` averages indices
/// `i − ⌊(w−1)/2⌋ ..= i + ⌈(w−1)/2⌉`, clipped at the ends, so an even
/// window leans one step forward.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::invalid("smoothing window must be positive"));
    }
    if window > series.len() {
        return Err(Error::invalid(format!(
            "smoothing window {window} exceeds the series length {}",
            series.len()
        )));
    }
    let back = (window - 1) / 2;
    let ahead = window - 1 - back;
    Ok((0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(back);
            let hi = (i + ahead).min(series.len() - 1);
            series[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect())
}

/// CSV with the index column, the raw metric and its moving average.
pub fn emit_plot_data(metrics: &MetricTable, column: &str, window: usize) -> Result<String> {
    let raw = metrics.column(column).ok_or_else(|| {
        Error::invalid(format!("no column {column:?} (have {})", metrics.columns.join(", ")))
    })?;
    let smooth = moving_average(&raw, window)?;
    let x = metrics.columns.first().cloned().unwrap_or_default();
    let xs = metrics.column(&x).unwrap_or_default();
    let mut out = format!("{x},{column},{column}_smoothed\n");
    for ((x, r), s) in xs.iter().zip(&raw).zip(&smooth) {
        let _ = writeln!(out, "{x},{r},{s}");
    }
    Ok(out)
}
