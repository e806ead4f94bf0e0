//! Output documents: pretty JSON, or a flat two-column CSV with one row per
//! scalar keyed by its dotted path (`threads.0.served`).

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    /// Chosen by extension; anything other than `.csv` is JSON.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Json,
        }
    }
}

pub fn flatten(value: &Value) -> Vec<(String, String)> {
    fn go(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
        match v {
            Value::Object(map) => map.iter().for_each(|(k, v)| go(&key(k), v, out)),
            Value::Array(items) => items.iter().enumerate().for_each(|(i, v)| go(&key(&i.to_string()), v, out)),
            Value::Null => out.push((prefix.to_string(), String::new())),
            Value::String(s) => out.push((prefix.to_string(), s.clone())),
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut out = Vec::new();
    go("", value, &mut out);
    out
}

pub fn write_value(w: impl Write, value: &Value, format: Format) -> io::Result<()> {
    match format {
        Format::Json => {
            let mut w = w;
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
            w.flush()
        }
        Format::Csv => {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["metric", "value"])?;
            for (k, v) in flatten(value) {
                csv.write_record([k, v])?;
            }
            csv.flush()
        }
    }
}

pub fn write_report<T: Serialize>(path: &Path, doc: &T) -> io::Result<()> {
    let value = serde_json::to_value(doc)?;
    let file = BufWriter::new(File::create(path)?);
    write_value(file, &value, Format::for_path(path))
}
