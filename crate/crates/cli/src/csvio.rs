//! CSV ingestion with column roles and dummy coding, and CSV export of
//! simulated datasets.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use mie_core::Dataset;
use nalgebra::DMatrix;

use crate::config::DataSection;
use crate::error::{CliError, Result};

/// A loaded dataset plus the expanded design column names.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: Dataset,
    pub covariate_columns: Vec<String>,
    pub instrument_columns: Vec<String>,
}

struct Table {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
    index: HashMap<String, usize>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::io(path.display(), e))?;
    let header: Vec<String> =
        rdr.headers().map_err(|e| CliError::io(path.display(), e))?.iter().map(|h| h.trim().to_string()).collect();
    if header.iter().all(String::is_empty) {
        return Err(CliError::io(path.display(), "empty file or missing header row"));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Parse {
            row: i + 1,
            column: 0,
            name: String::new(),
            message: e.to_string(),
        })?;
        rows.push(rec);
    }
    if rows.is_empty() {
        return Err(CliError::io(path.display(), "no data rows"));
    }
    let index = header.iter().enumerate().map(|(j, h)| (h.clone(), j)).collect();
    Ok(Table { header, rows, index })
}

impl Table {
    fn column(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| CliError::Role(format!("column '{name}' not found in header")))
    }

    fn cell(&self, row: usize, col: usize) -> &str {
        self.rows[row].get(col).unwrap_or("").trim()
    }

    fn parse_error(&self, row: usize, col: usize, message: String) -> CliError {
        CliError::Parse { row: row + 1, column: col + 1, name: self.header[col].clone(), message }
    }

    fn numeric(&self, col: usize) -> Result<Vec<f64>> {
        (0..self.rows.len())
            .map(|i| {
                let s = self.cell(i, col);
                if s.is_empty() || s.eq_ignore_ascii_case("na") {
                    return Err(self.parse_error(i, col, "missing value".into()));
                }
                s.parse::<f64>().map_err(|_| self.parse_error(i, col, format!("cannot parse '{s}' as a number")))
            })
            .collect()
    }

    fn indicator(&self, col: usize, level: &str) -> Vec<f64> {
        (0..self.rows.len()).map(|i| f64::from(u8::from(self.cell(i, col) == level))).collect()
    }

    fn binary(&self, col: usize, level: Option<&str>) -> Result<Vec<f64>> {
        match level {
            Some(l) => {
                if let Some(i) = (0..self.rows.len()).find(|&i| self.cell(i, col).is_empty()) {
                    return Err(self.parse_error(i, col, "missing value".into()));
                }
                Ok(self.indicator(col, l))
            }
            None => self.numeric(col),
        }
    }

    /// Appends the columns for `name`, dummy coding it when it has a reference level.
    fn expand(&self, name: &str, reference: Option<&String>, out: &mut Vec<(String, Vec<f64>)>) -> Result<()> {
        let col = self.column(name)?;
        let Some(reference) = reference else {
            out.push((name.to_string(), self.numeric(col)?));
            return Ok(());
        };
        let mut levels = BTreeSet::new();
        for i in 0..self.rows.len() {
            let v = self.cell(i, col);
            if v.is_empty() {
                return Err(self.parse_error(i, col, "missing value".into()));
            }
            levels.insert(v.to_string());
        }
        if !levels.contains(reference) {
            return Err(CliError::Role(format!(
                "reference level '{reference}' of '{name}' not among observed levels {levels:?}"
            )));
        }
        for level in levels.iter().filter(|l| *l != reference) {
            out.push((format!("{name}[{level}]"), self.indicator(col, level)));
        }
        Ok(())
    }
}

fn check_roles(roles: &DataSection) -> Result<()> {
    let mut seen = BTreeSet::new();
    let all = [&roles.treatment, &roles.outcome].into_iter().chain(&roles.covariates).chain(&roles.instruments);
    for name in all {
        if !seen.insert(name.as_str()) {
            return Err(CliError::Role(format!("column '{name}' is assigned more than one role")));
        }
    }
    if let Some(c) = roles.categorical.keys().find(|c| !roles.covariates.contains(c) && !roles.instruments.contains(c)) {
        return Err(CliError::Role(format!("categorical column '{c}' is neither a covariate nor an instrument")));
    }
    Ok(())
}

fn matrix(cols: &[(String, Vec<f64>)], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j].1[i])
}

/// Reads a CSV file into a dataset according to `roles`.
pub fn load_csv(path: &Path, roles: &DataSection) -> Result<Loaded> {
    check_roles(roles)?;
    let t = read_table(path)?;
    let n = t.rows.len();
    let a = t.binary(t.column(&roles.treatment)?, roles.treated_level.as_deref())?;
    let y = t.binary(t.column(&roles.outcome)?, roles.outcome_level.as_deref())?;
    let mut xs = Vec::new();
    for c in &roles.covariates {
        t.expand(c, roles.categorical.get(c), &mut xs)?;
    }
    let mut zs = Vec::new();
    for c in &roles.instruments {
        t.expand(c, roles.categorical.get(c), &mut zs)?;
    }
    if let Some(expected) = roles.expected_design_columns {
        if xs.len() != expected {
            return Err(CliError::Role(format!(
                "design has {} covariate columns but {expected} were expected",
                xs.len()
            )));
        }
    }
    let x_names: Vec<String> = xs.iter().map(|c| c.0.clone()).collect();
    let z_names: Vec<String> = zs.iter().map(|c| c.0.clone()).collect();
    let mut ds = Dataset::new(matrix(&xs, n), a, y).with_x_names(x_names.clone());
    if !zs.is_empty() {
        ds = ds.with_excluded_instruments(&matrix(&zs, n));
        let names = x_names.iter().chain(&z_names).cloned().collect();
        ds = ds.with_z_names(names);
    }
    Ok(Loaded { dataset: ds, covariate_columns: x_names, instrument_columns: z_names })
}

/// Header names written by [`write_csv`] and the matching roles.
pub fn simulated_roles(data: &Dataset) -> DataSection {
    let instruments = excluded_instruments(data).1;
    DataSection {
        treatment: "a".into(),
        outcome: "y".into(),
        covariates: data.x_names().to_vec(),
        instruments,
        ..Default::default()
    }
}

fn excluded_instruments(data: &Dataset) -> (Vec<usize>, Vec<String>) {
    let Some(z) = data.z() else { return (Vec::new(), Vec::new()) };
    let cols: Vec<usize> = (0..z.ncols()).filter(|j| !data.x_in_z().contains(j)).collect();
    let names = cols.iter().map(|&j| data.z_names()[j].clone()).collect();
    (cols, names)
}

/// Writes covariates, excluded instruments, `a` and `y` with full precision.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path.display(), e))?;
    let (zcols, znames) = excluded_instruments(data);
    let mut header: Vec<String> = data.x_names().to_vec();
    header.extend(znames);
    header.push("a".into());
    header.push("y".into());
    let io = |e: csv::Error| CliError::io(path.display(), e);
    w.write_record(&header).map_err(io)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = (0..data.x().ncols()).map(|j| fmt(data.x()[(i, j)])).collect();
        if let Some(z) = data.z() {
            rec.extend(zcols.iter().map(|&j| fmt(z[(i, j)])));
        }
        rec.push(fmt(data.a()[i]));
        rec.push(fmt(data.y()[i]));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path.display(), e))
}

/// Shortest round-tripping decimal form.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}
