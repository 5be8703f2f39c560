//! Tabular output. Each table is serialized to CSV and JSONL from the same
//! JSON values, so both files carry identical number text.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Number, Value};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

/// JSON value for a float; non-finite values become `null`.
pub fn num(v: f64) -> Value {
    Number::from_f64(v).map_or(Value::Null, Value::Number)
}

pub fn text(s: impl Into<String>) -> Value {
    Value::String(s.into())
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl Table {
    pub fn new(columns: Vec<&'static str>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(cell))?;
        }
        w.flush().map_err(CliError::io("<csv>"))?;
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for row in &self.rows {
            let obj: Map<String, Value> =
                self.columns.iter().zip(row).map(|(c, v)| (c.to_string(), v.clone())).collect();
            serde_json::to_writer(&mut out, &obj)?;
            out.write_all(b"\n").map_err(CliError::io("<jsonl>"))?;
        }
        out.flush().map_err(CliError::io("<jsonl>"))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(CliError::io(path))
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(contents.as_bytes()).map_err(CliError::io(path))?;
    w.flush().map_err(CliError::io(path))
}

/// Filesystem-safe stem for a label name.
pub fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_jsonl_share_number_text() {
        let mut t = Table::new(vec!["label", "value", "missing"]);
        t.push(vec![text("a,b"), num(1.0 / 3.0), num(f64::NAN)]);
        t.push(vec![text("c"), num(1e-7), Value::Null]);
        let csv = t.to_csv_string().unwrap();
        let mut jsonl = Vec::new();
        t.write_jsonl(&mut jsonl).unwrap();
        let jsonl = String::from_utf8(jsonl).unwrap();
        for v in ["0.3333333333333333", "1e-7"] {
            assert!(csv.contains(v) && jsonl.contains(v), "{v}\n{csv}\n{jsonl}");
        }
        assert!(csv.starts_with("label,value,missing\n\"a,b\","));
    }

    #[test]
    fn stems_are_safe() {
        assert_eq!(file_stem("P1-1"), "P1-1");
        assert_eq!(file_stem("art 6/1"), "art_6_1");
    }
}
