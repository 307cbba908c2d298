//! Column-oriented training traces with a fixed CSV schema.
//!
//! Missing values (e.g. `J_w` for agents without a res-critic) are written as
//! empty fields. Floats use Rust's shortest round-trip formatting, so a
//! trace read back from disk is bit-identical to the one written.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const DP_COLUMNS: [&str; 4] = ["iteration", "J", "J_q", "J_w"];

pub const SAMPLE_COLUMNS: [&str; 8] = [
    "episode",
    "env_steps",
    "exact_J",
    "empirical_return",
    "critic_loss",
    "res_critic_loss",
    "critic_predicted_J",
    "combined_predicted_J",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    columns: Vec<String>,
    rows: Vec<Vec<Option<f64>>>,
}

impl TrainingTrace {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Option<f64>>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match header");
        self.rows.push(row);
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Column with missing entries treated as an error.
    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        let col = self
            .column(name)
            .ok_or_else(|| Error::SchemaMismatch(format!("no column {name:?}")))?;
        col.into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| Error::SchemaMismatch(format!("{name} missing at row {i}"))))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if columns.is_empty() || columns.iter().any(String::is_empty) {
            return Err(Error::SchemaMismatch("empty column name".into()));
        }
        let mut trace = Self {
            columns,
            rows: Vec::new(),
        };
        for record in r.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|field| {
                    if field.is_empty() {
                        Ok(None)
                    } else {
                        field
                            .trim()
                            .parse::<f64>()
                            .map(Some)
                            .map_err(|_| Error::SchemaMismatch(format!("not a number: {field:?}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            trace.rows.push(row);
        }
        Ok(trace)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}
