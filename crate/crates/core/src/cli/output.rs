//! CSV and JSON writers. Every file carries the resolved config: CSVs as a
//! leading `# {json}` comment line, JSON files under a `config` key.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::Value;

use crate::data::fmt_f64;
use crate::error::Result;

pub fn num(v: f64) -> String {
    fmt_f64(v)
}

pub fn write_table<I>(path: &Path, meta: &Value, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# {}", serde_json::to_string(meta)?)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `body` with the metadata merged in under `config` and `seed`.
pub fn write_json(path: &Path, meta: &Value, mut body: Value) -> Result<()> {
    if let (Value::Object(b), Value::Object(m)) = (&mut body, meta) {
        for (k, v) in m {
            b.insert(k.clone(), v.clone());
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &body)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn header(fixed: &[&str], prefix: &str, n: usize) -> Vec<String> {
    let mut h: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    h.extend((0..n).map(|i| format!("{prefix}{i}")));
    h
}
