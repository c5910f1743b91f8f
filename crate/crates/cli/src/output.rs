//! Tables and their CSV and JSON serializations.

use std::io::Write;

use serde_json::{Map, Value};

use crate::config::Format;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Missing,
}

impl Cell {
    /// CSV field; floats carry 17 significant digits.
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => float(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => quote_csv(s),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> String {
        match self {
            Cell::Num(v) if v.is_finite() => float(*v),
            Cell::Num(_) | Cell::Missing => "null".into(),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => Value::String(s.clone()).to_string(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

pub fn float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

fn quote_csv(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub meta: Map<String, Value>,
}

impl Table {
    pub fn new(columns: &[&str], meta: Map<String, Value>) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: vec![],
            meta,
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }

    /// `{"meta": {...}, "rows": [{column: value, ...}, ...]}`.
    pub fn to_json(&self) -> String {
        let mut meta = self.meta.clone();
        meta.insert(
            "columns".into(),
            Value::Array(self.columns.iter().cloned().map(Value::String).collect()),
        );
        let rows: Vec<String> = self
            .rows
            .iter()
            .map(|row| {
                let fields: Vec<String> = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(c, v)| format!("{}:{}", Value::String(c.clone()), v.json()))
                    .collect();
                format!("{{{}}}", fields.join(","))
            })
            .collect();
        format!("{{\"meta\":{},\"rows\":[{}]}}\n", Value::Object(meta), rows.join(","))
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    pub fn write(&self, format: Format, out: Option<&std::path::Path>) -> std::io::Result<()> {
        let text = self.render(format);
        match out {
            Some(p) => std::fs::write(p, text),
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(text.as_bytes())?;
                stdout.flush()
            }
        }
    }
}
