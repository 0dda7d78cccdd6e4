use std::path::Path;

use serde::de::DeserializeOwned;
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

/// Values from a `--config` file: top-level keys, overridden by the table
/// named after the subcommand. Keys use flag spelling (`faulty-state`).
#[derive(Debug, Default)]
pub struct Layer {
    values: Table,
}

impl Layer {
    pub fn load(path: Option<&Path>, section: &str) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Layer::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let file: Table = text
            .parse()
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let mut values = Table::new();
        for (k, v) in &file {
            if !v.is_table() {
                values.insert(k.clone(), v.clone());
            }
        }
        if let Some(Value::Table(sub)) = file.get(section) {
            for (k, v) in sub {
                values.insert(k.clone(), v.clone());
            }
        }
        Ok(Layer { values })
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> CliResult<Option<T>> {
        self.values
            .get(key)
            .map(|v| {
                v.clone()
                    .try_into()
                    .map_err(|e| CliError::config(format!("key `{key}`: {e}")))
            })
            .transpose()
    }

    /// Flag, then file, then nothing.
    pub fn opt<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    /// Flag, then file, then `default`.
    pub fn pick<T: DeserializeOwned>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> CliResult<T> {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    /// A value that may be written as a number or a string (`p = 2`, `p = "inf"`).
    pub fn text(&self, flag: Option<String>, key: &str) -> CliResult<Option<String>> {
        if flag.is_some() {
            return Ok(flag);
        }
        Ok(match self.values.get(key) {
            None => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(Value::Integer(i)) => Some(i.to_string()),
            Some(Value::Float(f)) => Some(f.to_string()),
            Some(v) => return Err(CliError::config(format!("key `{key}`: unexpected {v}"))),
        })
    }

    /// A list flag; the file may give a single number or an array.
    pub fn floats(&self, flag: Vec<f64>, key: &str, default: &[f64]) -> CliResult<Vec<f64>> {
        if !flag.is_empty() {
            return Ok(flag);
        }
        let parse = |v: &Value| match v {
            Value::Float(f) => Ok(*f),
            Value::Integer(i) => Ok(*i as f64),
            _ => Err(CliError::config(format!("key `{key}`: expected a number"))),
        };
        match self.values.get(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(a)) => a.iter().map(parse).collect(),
            Some(v) => Ok(vec![parse(v)?]),
        }
    }
}
