//! Labeled matrix CSV files and `key = value` manifests.
//!
//! A matrix file has a header `label,<col>,<col>,...` followed by one row
//! per matrix row, `<row>,<value>,...`. Values are written in Rust's
//! shortest round-trip form, so reading a file back gives identical bits.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::config::KeyValues;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: DMatrix<f64>,
}

impl LabeledMatrix {
    pub fn new(row_labels: Vec<String>, col_labels: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.shape() != (row_labels.len(), col_labels.len()) {
            return Err(Error::DimensionMismatch(format!(
                "{} row and {} column labels for a {}x{} matrix",
                row_labels.len(),
                col_labels.len(),
                values.nrows(),
                values.ncols()
            )));
        }
        Ok(Self {
            row_labels,
            col_labels,
            values,
        })
    }

    /// Labels `prefix0, prefix1, ...`.
    pub fn indexed(values: DMatrix<f64>, row_prefix: &str, col_prefix: &str) -> Self {
        let rows = (0..values.nrows()).map(|i| format!("{row_prefix}{i}")).collect();
        let cols = (0..values.ncols()).map(|i| format!("{col_prefix}{i}")).collect();
        Self {
            row_labels: rows,
            col_labels: cols,
            values,
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["label".to_string()];
        header.extend(self.col_labels.iter().cloned());
        csv.write_record(&header)?;
        for (i, label) in self.row_labels.iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend(self.values.row(i).iter().map(|v| format!("{v:?}")));
            csv.write_record(&rec)?;
        }
        csv.flush()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, &path.display().to_string())
    }

    pub fn from_reader(r: impl std::io::Read, name: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
        let perr = |line: usize, msg: String| Error::Parse {
            path: name.to_string(),
            line,
            msg,
        };
        let mut records = rdr.records();
        let header = records
            .next()
            .ok_or_else(|| perr(1, "empty matrix file".into()))?
            .map_err(|e| perr(1, e.to_string()))?;
        let col_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut row_labels = Vec::new();
        let mut data = Vec::new();
        for (i, rec) in records.enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| perr(line, e.to_string()))?;
            if rec.len() != col_labels.len() + 1 {
                return Err(perr(line, format!("expected {} fields, found {}", col_labels.len() + 1, rec.len())));
            }
            row_labels.push(rec[0].to_string());
            for f in rec.iter().skip(1) {
                data.push(
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| perr(line, format!("bad number `{f}`")))?,
                );
            }
        }
        let values = DMatrix::from_row_slice(row_labels.len(), col_labels.len(), &data);
        Ok(Self {
            row_labels,
            col_labels,
            values,
        })
    }

    /// The single column of an `n × 1` matrix.
    pub fn column_vector(&self) -> Result<DVector<f64>> {
        if self.values.ncols() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "expected one column, found {}",
                self.values.ncols()
            )));
        }
        Ok(self.values.column(0).into_owned())
    }
}

/// Ordered `key = value` pairs written one per line.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(&format!("{k} = {v}\n"));
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        let kv = KeyValues::parse(&text, &path.display().to_string())?;
        // Keep file order rather than the parser's sorted order.
        for line in text.lines() {
            if let Some((k, _)) = line.split_once('=') {
                let k = k.trim();
                if let Some(v) = kv.raw(k) {
                    entries.push((k.to_string(), v.to_string()));
                }
            }
        }
        Ok(Self { entries })
    }
}
