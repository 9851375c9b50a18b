//! Line-delimited JSON framing used by every file the engine reads or writes.
//!
//! Output files start with a single `{"header": {...}}` line stamping the
//! engine version, the producing command and its resolved configuration.
//! Readers skip that line and blank lines.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const ENGINE: &str = concat!("har-core ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHeader {
    pub engine: String,
    pub command: String,
    pub config: Value,
}

impl FileHeader {
    pub fn new(command: &str, config: impl Serialize) -> Self {
        FileHeader {
            engine: ENGINE.to_string(),
            command: command.to_string(),
            config: serde_json::to_value(config).unwrap_or(Value::Null),
        }
    }
}

#[derive(Serialize)]
struct HeaderLine<'a> {
    header: &'a FileHeader,
}

/// A parsed line together with its 1-based line number.
#[derive(Debug, Clone)]
pub struct Line<T> {
    pub line: usize,
    pub value: T,
}

fn is_header(v: &Value) -> bool {
    matches!(v, Value::Object(m) if m.len() == 1 && m.contains_key("header"))
}

pub fn open(path: &Path) -> Result<BufReader<File>, JsonlError> {
    File::open(path).map(BufReader::new).map_err(|source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads every non-blank, non-header line as a JSON value.
pub fn read_values<R: BufRead>(reader: R) -> Result<Vec<Line<Value>>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| JsonlError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| JsonlError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if is_header(&value) {
            continue;
        }
        out.push(Line { line: line_no, value });
    }
    Ok(out)
}

pub fn read_records<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<Line<T>>, JsonlError> {
    read_values(reader)?
        .into_iter()
        .map(|l| {
            let value = serde_json::from_value(l.value).map_err(|e| JsonlError::Parse {
                line: l.line,
                message: e.to_string(),
            })?;
            Ok(Line { line: l.line, value })
        })
        .collect()
}

pub fn read_records_from<T: DeserializeOwned>(path: &Path) -> Result<Vec<Line<T>>, JsonlError> {
    read_records(open(path)?)
}

/// Returns the header of a file, if it has one.
pub fn read_header<R: BufRead>(reader: R) -> Result<Option<FileHeader>, JsonlError> {
    for (i, line) in reader.lines().enumerate() {
        let text = line.map_err(|e| JsonlError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| JsonlError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !is_header(&v) {
            return Ok(None);
        }
        let h = serde_json::from_value(v["header"].clone()).map_err(|e| JsonlError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        return Ok(Some(h));
    }
    Ok(None)
}

pub fn write_records<'a, T, W, I>(mut w: W, header: Option<&FileHeader>, records: I) -> std::io::Result<()>
where
    T: Serialize + 'a,
    W: Write,
    I: IntoIterator<Item = &'a T>,
{
    if let Some(header) = header {
        serde_json::to_writer(&mut w, &HeaderLine { header })?;
        w.write_all(b"\n")?;
    }
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn to_string<'a, T, I>(header: Option<&FileHeader>, records: I) -> String
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut buf = Vec::new();
    write_records(&mut buf, header, records).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}
