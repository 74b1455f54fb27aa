//! Objectives backed by a table of evaluated configurations.
//!
//! CSV layout: a header row, one numeric column per input dimension and a
//! final column named `value`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::gp::{Dataset, Domain};
use crate::policy::Objective;

/// Minimum row count accepted by [`tabular_objective`].
pub const MIN_ROWS: usize = 10;

/// Parsed table: column names, raw configurations and values.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl Table {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Per-column min/max box. Constant columns get a unit-width box.
    pub fn bounding_domain(&self) -> Result<Domain> {
        let bounds = (0..self.dim())
            .map(|c| {
                let lo = self.rows.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
                let hi = self.rows.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
                if hi > lo {
                    (lo, hi)
                } else {
                    (lo - 0.5, hi + 0.5)
                }
            })
            .collect();
        Domain::new(bounds)
    }

    /// Rows mapped into `domain`'s unit box.
    pub fn to_dataset(&self, domain: &Domain) -> Result<Dataset> {
        let pts: Vec<Vec<f64>> = self.rows.iter().map(|r| domain.to_unit(r)).collect();
        Dataset::from_rows(self.dim(), &pts, &self.values)
    }
}

/// Read a table; `origin` names the file in error messages.
pub fn read_table<R: std::io::Read>(reader: R, origin: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.len() < 2 {
        return Err(Error::Table(format!(
            "{origin}: expected at least one input column and a value column"
        )));
    }
    if header.last().map(String::as_str) != Some("value") {
        return Err(Error::Table(format!("{origin}: final column must be named 'value'")));
    }
    let dim = header.len() - 1;
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Table(format!("{origin}: row {}: {e}", i + 1)))?;
        if rec.len() != header.len() {
            return Err(Error::Table(format!(
                "{origin}: row {} has {} cells, expected {}",
                i + 1,
                rec.len(),
                header.len()
            )));
        }
        let cells = rec
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Error::Table(format!(
                            "{origin}: row {}, column '{}': non-numeric cell '{cell}'",
                            i + 1,
                            header[c]
                        ))
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        values.push(cells[dim]);
        rows.push(cells[..dim].to_vec());
    }
    if rows.is_empty() {
        return Err(Error::Table(format!("{origin}: no data rows")));
    }
    Ok(Table {
        columns: header[..dim].to_vec(),
        rows,
        values,
    })
}

pub fn read_table_file(path: &Path) -> Result<Table> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Table(format!("{}: {e}", path.display())))?;
    read_table(file, &path.display().to_string())
}

/// Nearest-neighbour lookup over normalized configurations.
#[derive(Debug, Clone)]
pub struct TabularObjective {
    domain: Domain,
    points: Dataset,
    f_star: f64,
}

impl TabularObjective {
    pub fn from_table(table: &Table) -> Result<Self> {
        let domain = table.bounding_domain()?;
        let points = table.to_dataset(&domain)?;
        let f_star = points.max_value().ok_or(Error::EmptyDataset)?;
        Ok(TabularObjective {
            domain,
            points,
            f_star,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the nearest row; ties go to the smaller index.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.points.points().enumerate() {
            let d: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

impl Objective for TabularObjective {
    fn dim(&self) -> usize {
        self.domain.dim()
    }

    fn evaluate(&self, x: &[f64]) -> f64 {
        self.points.values()[self.nearest(x)]
    }

    fn f_star(&self) -> f64 {
        self.f_star
    }
}

/// Load a tabular objective from a CSV file with at least [`MIN_ROWS`] rows.
pub fn tabular_objective(path: &Path) -> Result<TabularObjective> {
    let table = read_table_file(path)?;
    if table.rows.len() < MIN_ROWS {
        return Err(Error::Table(format!(
            "{}: {} rows, at least {MIN_ROWS} required",
            path.display(),
            table.rows.len()
        )));
    }
    TabularObjective::from_table(&table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Table> {
        read_table(s.as_bytes(), "inline")
    }

    #[test]
    fn exact_hit_returns_row_value() {
        let t = parse("a,b,value\n0,0,1.5\n1,0,2.5\n0,1,3.5\n").unwrap();
        let obj = TabularObjective::from_table(&t).unwrap();
        let q = obj.domain().to_unit(&[1.0, 0.0]);
        assert_eq!(obj.evaluate(&q), 2.5);
        assert_eq!(obj.f_star(), 3.5);
    }

    #[test]
    fn equidistant_query_takes_smaller_index() {
        let t = parse("a,value\n0,1\n1,2\n0.5,0\n").unwrap();
        let obj = TabularObjective::from_table(&t).unwrap();
        assert_eq!(obj.evaluate(&[0.25]), 1.0);
    }

    #[test]
    fn malformed_inputs_rejected() {
        assert!(parse("").is_err());
        assert!(parse("a,value\n").is_err());
        assert!(parse("a,b\n1,2\n").is_err());
        let err = parse("a,value\n1,x\n").unwrap_err().to_string();
        assert!(err.contains("non-numeric"), "{err}");
        assert!(parse("a,value\n1,2,3\n").is_err());
    }

    #[test]
    fn file_loader_enforces_row_minimum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "a,value\n0,1\n1,2\n").unwrap();
        assert!(tabular_objective(&p).is_err());
        let mut body = String::from("a,value\n");
        for i in 0..12 {
            body.push_str(&format!("{i},{}\n", (i as f64).sin()));
        }
        std::fs::write(&p, body).unwrap();
        assert_eq!(tabular_objective(&p).unwrap().len(), 12);
        std::fs::write(&p, "").unwrap();
        assert!(tabular_objective(&p).is_err());
    }
}
