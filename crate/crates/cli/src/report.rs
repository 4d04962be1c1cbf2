//! Machine-readable run reports and the human tables derived from them.

use std::fmt::Write as _;

use mie_core::dgp::OracleResult;
use mie_core::EstimateReport;
use serde::{Deserialize, Serialize};

/// One estimator run placed in a table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub row: String,
    pub column: String,
    pub report: EstimateReport,
}

/// One ground-truth value placed in a table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub row: String,
    pub column: String,
    pub oracle: OracleResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub source: String,
    pub n: usize,
    pub n_treated: usize,
    pub covariates: Vec<String>,
    pub instruments: Vec<String>,
    pub sha256: Option<String>,
}

/// Everything a run produced. Contains no timestamps or thread counts so
/// identical configs give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineReport {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub title: String,
    pub seed: u64,
    pub scale: f64,
    pub data: Option<DataSummary>,
    pub records: Vec<Record>,
    pub oracles: Vec<OracleRecord>,
    pub notes: Vec<String>,
}

impl MachineReport {
    pub fn new(command: &str, title: String, seed: u64, scale: f64) -> Self {
        MachineReport {
            tool: "mie".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            title,
            seed,
            scale,
            data: None,
            records: Vec::new(),
            oracles: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub point: f64,
    pub se: Option<f64>,
}

/// Rows are intervention families, columns are estimators or oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub title: String,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub cells: Vec<Vec<Option<Cell>>>,
}

fn position(v: &mut Vec<String>, key: &str) -> usize {
    v.iter().position(|k| k == key).unwrap_or_else(|| {
        v.push(key.to_string());
        v.len() - 1
    })
}

impl ResultTable {
    /// Rebuilds the table from a report; rows and columns keep first-seen order.
    pub fn from_report(report: &MachineReport) -> Self {
        let s = report.scale;
        let mut entries: Vec<(&str, &str, Cell)> = Vec::new();
        for r in &report.records {
            let cell = Cell { point: r.report.point * s, se: r.report.std_error.map(|v| v * s.abs()) };
            entries.push((&r.row, &r.column, cell));
        }
        let (mut rows, mut columns) = (Vec::new(), Vec::new());
        let mut placed = Vec::new();
        for (r, c, cell) in entries {
            placed.push((position(&mut rows, r), position(&mut columns, c), Some(cell)));
        }
        // Oracle values get a companion Monte Carlo SE column.
        for o in &report.oracles {
            let i = position(&mut rows, &o.row);
            let j = position(&mut columns, &o.column);
            placed.push((i, j, Some(Cell { point: o.oracle.value * s, se: None })));
            let k = position(&mut columns, &format!("{} mc_se", o.column));
            placed.push((i, k, o.oracle.mc_se.map(|v| Cell { point: v * s.abs(), se: None })));
        }
        let mut cells = vec![vec![None; columns.len()]; rows.len()];
        for (i, j, cell) in placed {
            cells[i][j] = cell;
        }
        ResultTable { title: report.title.clone(), rows, columns, cells }
    }

    fn text_cells(&self) -> Vec<Vec<String>> {
        self.cells
            .iter()
            .map(|row| {
                row.iter()
                    .map(|c| match c {
                        None => "-".into(),
                        Some(Cell { point, se: None }) => sig3(*point),
                        Some(Cell { point, se: Some(se) }) => format!("{} ({})", sig3(*point), sig3(*se)),
                    })
                    .collect()
            })
            .collect()
    }

    /// Fixed-width plain-text rendering.
    pub fn render(&self) -> String {
        let body = self.text_cells();
        let w0 = self.rows.iter().map(String::len).max().unwrap_or(0).max(6);
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|j| body.iter().map(|r| r[j].chars().count()).chain([self.columns[j].chars().count()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        if !self.title.is_empty() {
            out.push_str(&self.title);
            out.push('\n');
        }
        let _ = write!(out, "{:<w0$}", "family");
        for (c, w) in self.columns.iter().zip(&widths) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
        for (name, row) in self.rows.iter().zip(&body) {
            let _ = write!(out, "{name:<w0$}");
            for (c, w) in row.iter().zip(&widths) {
                let _ = write!(out, "  {c:>w$}");
            }
            out.push('\n');
        }
        out
    }

    /// The same cells as CSV.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = ["family"].into_iter().chain(self.columns.iter().map(String::as_str)).collect();
        let _ = w.write_record(&header);
        for (name, row) in self.rows.iter().zip(self.text_cells()) {
            let rec: Vec<String> = std::iter::once(name.clone()).chain(row).collect();
            let _ = w.write_record(&rec);
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
    }
}

/// Three significant figures.
pub fn sig3(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0.00".into();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (2 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding can carry into a new digit (9.996 -> 10.00).
    let digits = s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len();
    if digits > 3 && decimals > 0 {
        format!("{x:.prec$}", prec = decimals - 1)
    } else {
        s
    }
}
