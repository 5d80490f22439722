//! Tabular output as CSV or JSON records.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use cqed_core::Error;

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

pub enum Value {
    F(f64),
    I(i64),
    B(bool),
    S(String),
}

impl Value {
    fn csv(&self) -> String {
        match self {
            // 17 significant digits round-trip every f64.
            Value::F(v) => format!("{v:.16e}"),
            Value::I(v) => v.to_string(),
            Value::B(v) => v.to_string(),
            Value::S(v) => v.clone(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Value::F(v) => serde_json::Number::from_f64(*v)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            Value::I(v) => (*v).into(),
            Value::B(v) => (*v).into(),
            Value::S(v) => v.clone().into(),
        }
    }
}

pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Table {
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn write(&self, out: Option<&Path>, format: Format) -> Result<()> {
        let sink: Box<dyn Write> = match out {
            Some(p) => Box::new(
                File::create(p)
                    .map_err(Error::Io)
                    .with_context(|| format!("creating {}", p.display()))?,
            ),
            None => Box::new(io::stdout().lock()),
        };
        self.write_to(sink, format).map_err(|e| anyhow::Error::new(Error::Io(e)))
    }

    fn write_to(&self, sink: Box<dyn Write>, format: Format) -> io::Result<()> {
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(sink);
                w.write_record(&self.headers)?;
                for r in &self.rows {
                    w.write_record(r.iter().map(Value::csv))?;
                }
                w.flush()
            }
            Format::Json => {
                let mut sink = sink;
                let rows: Vec<serde_json::Value> = self
                    .rows
                    .iter()
                    .map(|r| {
                        serde_json::Value::Object(
                            self.headers.iter().cloned().zip(r.iter().map(Value::json)).collect(),
                        )
                    })
                    .collect();
                serde_json::to_writer_pretty(&mut sink, &rows)?;
                writeln!(sink)?;
                sink.flush()
            }
        }
    }
}
