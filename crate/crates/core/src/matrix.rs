//! Source × target matrices and their CSV form.
//!
//! The CSV has a header row whose first cell is `source` followed by target
//! ids, then one row per source: the source id and one number per target.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    sources: Vec<String>,
    targets: Vec<String>,
    values: Vec<Vec<f64>>,
}

/// Predicted scores, `values[i][j]` for source `i` and target `j`.
pub type InfluenceMatrix = LabeledMatrix;
/// Observed relative improvements in the same layout.
pub type ObservedMatrix = LabeledMatrix;

/// How numbers are rendered in CSV cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NumberFormat {
    /// Shortest representation that parses back to the same `f64`.
    RoundTrip,
    /// `%.Ng`-style rendering with `N` significant digits.
    Significant(usize),
}

fn check_ids(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if id.is_empty() {
            return Err(Error::MalformedMatrix(format!("empty {what} id")));
        }
        if !seen.insert(id) {
            return Err(Error::MalformedMatrix(format!("duplicate {what} id {id:?}")));
        }
    }
    Ok(())
}

impl LabeledMatrix {
    pub fn new(sources: Vec<String>, targets: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        check_ids(&sources, "source")?;
        check_ids(&targets, "target")?;
        if values.len() != sources.len() || values.iter().any(|r| r.len() != targets.len()) {
            return Err(Error::MalformedMatrix(format!(
                "values are not {}x{}",
                sources.len(),
                targets.len()
            )));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::MalformedMatrix("non-finite entry".into()));
        }
        Ok(LabeledMatrix {
            sources,
            targets,
            values,
        })
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn targets(&self) -> &[String] {
        &self.targets
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn get(&self, source: &str, target: &str) -> Option<f64> {
        let i = self.sources.iter().position(|s| s == source)?;
        let j = self.targets.iter().position(|t| t == target)?;
        Some(self.values[i][j])
    }

    /// The column for `target`, keyed by source id.
    pub fn column(&self, target: &str) -> Result<Vec<(String, f64)>> {
        let j = self
            .targets
            .iter()
            .position(|t| t == target)
            .ok_or_else(|| Error::UnknownDatasetId(target.to_string()))?;
        Ok(self
            .sources
            .iter()
            .zip(&self.values)
            .map(|(s, row)| (s.clone(), row[j]))
            .collect())
    }

    pub fn transpose(&self) -> Self {
        let values = (0..self.targets.len())
            .map(|j| self.values.iter().map(|row| row[j]).collect())
            .collect();
        LabeledMatrix {
            sources: self.targets.clone(),
            targets: self.sources.clone(),
            values,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = self
            .values
            .iter()
            .map(|row| row.iter().map(|&v| f(v)).collect())
            .collect();
        LabeledMatrix::new(self.sources.clone(), self.targets.clone(), values)
    }

    /// Reorders rows and columns to the given id orders.
    pub fn reindex(&self, sources: &[String], targets: &[String]) -> Result<Self> {
        let pos = |ids: &[String], id: &String| {
            ids.iter()
                .position(|x| x == id)
                .ok_or_else(|| Error::IdMismatch(id.clone()))
        };
        let rows: Vec<usize> = sources.iter().map(|s| pos(&self.sources, s)).collect::<Result<_>>()?;
        let cols: Vec<usize> = targets.iter().map(|t| pos(&self.targets, t)).collect::<Result<_>>()?;
        let values = rows
            .iter()
            .map(|&i| cols.iter().map(|&j| self.values[i][j]).collect())
            .collect();
        LabeledMatrix::new(sources.to_vec(), targets.to_vec(), values)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = reader.records();
        let header = rows
            .next()
            .ok_or_else(|| Error::MalformedMatrix("missing header row".into()))?
            .map_err(|e| Error::MalformedMatrix(e.to_string()))?;
        if header.len() < 2 {
            return Err(Error::MalformedMatrix("header needs at least one target".into()));
        }
        let targets: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut sources = Vec::new();
        let mut values = Vec::new();
        for (n, row) in rows.enumerate() {
            let row = row.map_err(|e| Error::MalformedMatrix(e.to_string()))?;
            if row.len() != header.len() {
                return Err(Error::MalformedMatrix(format!(
                    "row {} has {} cells, expected {}",
                    n + 2,
                    row.len(),
                    header.len()
                )));
            }
            sources.push(row[0].to_string());
            let parsed = row
                .iter()
                .skip(1)
                .map(|cell| {
                    cell.parse::<f64>()
                        .map_err(|_| Error::MalformedMatrix(format!("row {}: bad number {cell:?}", n + 2)))
                })
                .collect::<Result<Vec<_>>>()?;
            values.push(parsed);
        }
        if sources.is_empty() {
            return Err(Error::MalformedMatrix("no data rows".into()));
        }
        LabeledMatrix::new(sources, targets, values)
    }

    pub fn to_csv_string(&self, format: NumberFormat) -> String {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let header = std::iter::once("source").chain(self.targets.iter().map(String::as_str));
        writer.write_record(header).expect("in-memory write");
        for (id, row) in self.sources.iter().zip(&self.values) {
            let cells = std::iter::once(id.clone()).chain(row.iter().map(|&v| format_number(v, format)));
            writer.write_record(cells).expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    /// Rounds every entry to `digits` significant digits, so the CSV
    /// rendering parses back to exactly these values.
    pub fn rounded(&self, digits: usize) -> Self {
        self.map(|v| {
            format_number(v, NumberFormat::Significant(digits))
                .parse()
                .expect("formatted number")
        })
        .expect("rounding keeps entries finite")
    }
}

pub fn format_number(v: f64, format: NumberFormat) -> String {
    match format {
        NumberFormat::RoundTrip => format!("{v:?}"),
        NumberFormat::Significant(digits) => format_significant(v, digits.max(1)),
    }
}

/// C `%.{digits}g` formatting.
fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
