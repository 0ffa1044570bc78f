//! CSV result tables with a `#`-prefixed metadata block.

use std::io::Write;
use std::path::Path;

use ips_core::Estimate;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
            Cell::Bool(b) => write!(f, "{b}"),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
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

/// Rows of typed cells. Statistical columns are added through
/// [`ResultTable::estimate_column`], which always adds a `_stderr` partner.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
    pub metadata: Vec<(String, String)>,
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl ResultTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn column(mut self, name: &str, unit: &str) -> Self {
        self.columns.push(Column {
            name: name.into(),
            unit: unit.into(),
        });
        self
    }

    pub fn estimate_column(self, name: &str, unit: &str) -> Self {
        self.column(name, unit).column(&format!("{name}_stderr"), unit)
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the schema");
        self.rows.push(row);
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) {
        self.metadata.push((key.into(), value.to_string()));
    }

    /// Records the config, its hash and the seed.
    pub fn stamp(&mut self, cfg: &ExperimentConfig) {
        let text = cfg.serialize();
        self.meta("config_sha256", sha256_hex(&text));
        self.meta("seed", cfg.seed);
        self.meta("tool", concat!("ips ", env!("CARGO_PKG_VERSION")));
        for line in text.lines() {
            self.meta("config", line);
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn get_meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Data section only: header row plus records.
    pub fn data_csv(&self) -> CliResult<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.columns.iter().map(|c| {
            if c.unit.is_empty() {
                c.name.clone()
            } else {
                format!("{} [{}]", c.name, c.unit)
            }
        }))?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("cells are UTF-8"))
    }

    pub fn to_csv(&self) -> CliResult<String> {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        out.push_str(&self.data_csv()?);
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv()?.as_bytes())?;
        Ok(())
    }
}

/// Config text embedded in a CSV written by [`ResultTable::write`].
pub fn embedded_config(csv_text: &str) -> String {
    csv_text
        .lines()
        .filter_map(|l| l.strip_prefix("# config: "))
        .map(|l| format!("{l}\n"))
        .collect()
}

pub fn estimate_cells(e: Estimate) -> [Cell; 2] {
    [Cell::Float(e.mean), Cell::Float(e.stderr)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoting_and_metadata() {
        let mut t = ResultTable::new().column("label", "").estimate_column("p", "prob");
        t.push(vec!["a,b \"c\"".into(), 0.5.into(), 0.01.into()]);
        t.meta("note", "x");
        let csv = t.to_csv().unwrap();
        assert!(csv.starts_with("# note: x\n"));
        assert!(csv.contains("label,p [prob],p_stderr [prob]\n"));
        assert!(csv.contains("\"a,b \"\"c\"\"\",0.5,0.01\n"));
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(csv.as_bytes());
        let rec = r.records().next().unwrap().unwrap();
        assert_eq!(&rec[0], "a,b \"c\"");
    }

    #[test]
    fn embedded_config_round_trips() {
        let cfg = ExperimentConfig::default();
        let mut t = ResultTable::new().column("x", "");
        t.stamp(&cfg);
        let text = t.to_csv().unwrap();
        let back = ExperimentConfig::parse(&embedded_config(&text)).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(t.get_meta("config_sha256").unwrap(), sha256_hex(&cfg.serialize()));
        assert_eq!(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
