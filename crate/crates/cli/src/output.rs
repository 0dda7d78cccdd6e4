use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Value};

use crate::args::Format;
use crate::error::CliResult;

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::Int(x)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Float)
    }
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Float(x) => x.to_string(),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Float(x) => serde_json::Number::from_f64(*x).map_or(Value::Null, Value::Number),
            Cell::Int(i) => Value::from(*i),
            Cell::Text(s) => Value::from(s.as_str()),
            Cell::Empty => Value::Null,
        }
    }
}

/// Rows of named columns, written as CSV (header always present) or JSON.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Table {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn write(&self, out: impl Write, format: Format) -> CliResult<()> {
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(out);
                w.write_record(&self.headers)?;
                for row in &self.rows {
                    w.write_record(row.iter().map(Cell::text))?;
                }
                w.flush()?;
            }
            Format::Json => {
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|row| {
                        let obj: Map<String, Value> = self
                            .headers
                            .iter()
                            .cloned()
                            .zip(row.iter().map(Cell::json))
                            .collect();
                        Value::Object(obj)
                    })
                    .collect();
                let mut out = out;
                serde_json::to_writer_pretty(&mut out, &rows)?;
                writeln!(out)?;
            }
        }
        Ok(())
    }

    /// Writes to `path`, or stdout when absent.
    pub fn emit(&self, path: Option<&Path>, format: Format) -> CliResult<()> {
        match path {
            Some(p) => {
                let mut f = BufWriter::new(File::create(p)?);
                self.write(&mut f, format)?;
                f.flush()?;
            }
            None => self.write(std::io::stdout().lock(), format)?,
        }
        Ok(())
    }

    /// A gnuplot script that plots every column after `x` against it.
    pub fn gnuplot(&self, data: &Path, x: &str) -> String {
        let xi = self.headers.iter().position(|h| h == x).unwrap_or(0) + 1;
        let name = data.file_name().map_or_else(
            || data.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        );
        let mut s = String::new();
        s.push_str("set datafile separator ','\n");
        s.push_str("set key outside\n");
        s.push_str(&format!("set xlabel '{x}'\n"));
        let series: Vec<String> = self
            .headers
            .iter()
            .enumerate()
            .filter(|(i, h)| i + 1 != xi && *h != "delta" && *h != "runs" && *h != "restart")
            .map(|(i, h)| format!("'{name}' using {xi}:{} with lines title '{h}'", i + 1))
            .collect();
        s.push_str(&format!("plot {}\n", series.join(", \\\n     ")));
        s
    }
}
