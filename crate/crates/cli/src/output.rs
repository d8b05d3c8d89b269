use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{Context, Result};
use qfunc::config::OutputFormat;
use serde_json::{Map, Number, Value};

/// Header plus string records; CSV writes them as is, JSON as an array of
/// objects with numeric fields converted back to numbers.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: ToString>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for r in &self.rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }

    fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|r| {
                    let obj: Map<String, Value> =
                        self.header.iter().cloned().zip(r.iter().map(|s| json_field(s))).collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }

    pub fn emit(&self, format: OutputFormat, out: Option<&Path>) -> Result<()> {
        let sink: Box<dyn Write> = match out {
            Some(p) => Box::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?),
            None => Box::new(io::stdout().lock()),
        };
        write_format(sink, format, self)
    }
}

fn write_format(mut sink: Box<dyn Write>, format: OutputFormat, t: &Table) -> Result<()> {
    match format {
        OutputFormat::Csv => t.write_csv(sink),
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut sink, &t.to_json())?;
            writeln!(sink)?;
            Ok(())
        }
    }
}

fn json_field(s: &str) -> Value {
    if let Ok(i) = s.parse::<i64>() {
        return Value::Number(i.into());
    }
    match s {
        "true" => return Value::Bool(true),
        "false" => return Value::Bool(false),
        _ => {}
    }
    s.parse::<f64>()
        .ok()
        .and_then(Number::from_f64)
        .map_or_else(|| Value::String(s.to_string()), Value::Number)
}
