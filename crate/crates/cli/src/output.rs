//! Writing result files: rounded JSON, checksums, column CSV input.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use recurrence_core::round_sig;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Every float in `v` rounded to 12 significant digits.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().unwrap());
            serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with `schema_version` first and floats rounded.
pub fn json_document<T: Serialize>(body: &T) -> CliResult<Vec<u8>> {
    let mut doc = Map::new();
    doc.insert("schema_version".into(), SCHEMA_VERSION.into());
    match serde_json::to_value(body).map_err(json_err)? {
        Value::Object(m) => doc.extend(m),
        other => {
            doc.insert("value".into(), other);
        }
    }
    let mut bytes = serde_json::to_vec_pretty(&round_json(Value::Object(doc))).map_err(json_err)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn json_err(e: serde_json::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Renders through a `write_csv`-style callback.
pub fn csv_bytes<F>(f: F) -> CliResult<Vec<u8>>
where
    F: FnOnce(&mut Vec<u8>) -> recurrence_core::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// A directory of outputs whose checksums are kept, keyed by path relative
/// to the run root.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    prefix: String,
    pub files: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn new(root: &Path, prefix: &str) -> CliResult<Self> {
        fs::create_dir_all(root.join(prefix))?;
        Ok(Self {
            root: root.to_path_buf(),
            prefix: prefix.to_string(),
            files: BTreeMap::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let rel = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}/{name}", self.prefix)
        };
        fs::write(self.root.join(&rel), bytes)?;
        self.files.insert(rel, sha256_hex(bytes));
        Ok(())
    }
}

/// Reads the first column whose header is one of `accepted`. Lines starting
/// with `#` are skipped.
pub fn read_column(path: &Path, accepted: &[&str]) -> CliResult<Vec<f64>> {
    let input_err = |message: String| CliError::Input {
        path: path.display().to_string(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| input_err(e.to_string()))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| input_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let Some(col) = headers.iter().position(|h| accepted.contains(&h.as_str())) else {
        return Err(input_err(format!(
            "expected a column named one of [{}], found [{}]",
            accepted.join(", "),
            headers.join(", ")
        )));
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| input_err(e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = rec.get(col).unwrap_or("");
        let v: f64 = field
            .parse()
            .map_err(|_| input_err(format!("line {line}: unreadable number {field:?}")))?;
        out.push(v);
    }
    Ok(out)
}

/// `-2` -> `q-2`, `2.5` -> `q2.5`.
pub fn q_label(q: f64) -> String {
    format!("q{}", recurrence_core::fmt_num(q))
}
