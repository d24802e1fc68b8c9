//! CSV tables with a `#`-prefixed metadata preamble.
//!
//! ```text
//! # experiment: ou
//! # seed: 1
//! t,D,p
//! 0.0,0.97,2.37e-298
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Ordered `key: value` pairs written before the header row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata(pub Vec<(String, String)>);

impl Metadata {
    pub fn new(experiment: &str, seed: u64, scheme: &str, problem: &str, profile: &str) -> Self {
        Self(vec![
            ("experiment".into(), experiment.into()),
            ("seed".into(), seed.to_string()),
            ("scheme".into(), scheme.into()),
            ("problem".into(), problem.into()),
            ("profile".into(), profile.into()),
        ])
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.push((key.into(), value.to_string()));
        self
    }
}

pub fn write_table(path: &Path, meta: &Metadata, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    for (k, v) in &meta.0 {
        writeln!(out, "# {k}: {v}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::Table(format!(
                "row has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        w.write_record(row.iter().map(|v| format!("{v:?}")))
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: BTreeMap<String, String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path)?;
    let mut meta = BTreeMap::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let body = line.trim_start_matches('#').trim();
        let (k, v) = body
            .split_once(':')
            .ok_or_else(|| Error::Table(format!("metadata line without `key: value`: {line}")))?;
        meta.insert(k.trim().to_string(), v.trim().to_string());
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().any(|h| h.is_empty()) {
        return Err(Error::Table("missing header row".into()));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Table(format!("not a number: `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { meta, header, rows })
}

fn csv_error(e: csv::Error) -> Error {
    Error::Table(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/t.csv");
        let meta = Metadata::new("ou", 7, "theta=0.5,h=0.001", "ou", "ci").with("metric", "w1");
        let rows = vec![vec![0.0, 1.5, f64::INFINITY], vec![0.1, 1e-300, -2.0]];
        write_table(&path, &meta, &["t", "D", "p"], &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# experiment: ou\n# seed: 7\n"));
        let table = read_table(&path).unwrap();
        assert_eq!(table.header, vec!["t", "D", "p"]);
        assert_eq!(table.rows, rows);
        assert_eq!(table.meta["scheme"], "theta=0.5,h=0.001");
        assert_eq!(table.column("D").unwrap(), vec![1.5, 1e-300]);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        assert!(write_table(&path, &Metadata::default(), &["a", "b"], &[vec![1.0]]).is_err());
        std::fs::write(&path, "a,b\n1,x\n").unwrap();
        assert!(matches!(read_table(&path), Err(Error::Table(_))));
    }
}
