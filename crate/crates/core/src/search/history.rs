//! JSON-lines history files.
//!
//! One record per line with a fixed field order:
//! `{"index", "genome", "gen", "worker", "seed", "E", "P", "O", "L",
//! "failed", "seconds"}`. Floats are written with 17 significant digits so they
//! round-trip exactly; infinities are written as the string `"inf"`.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde_json::Value;

use super::SearchRecord;
use crate::objective::{ObjectiveBreakdown, ObjectiveWeights};
use crate::{Error, Result};

pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "\"nan\"".to_string()
    } else if v > 0.0 {
        "\"inf\"".to_string()
    } else {
        "\"-inf\"".to_string()
    }
}

pub fn format_record(r: &SearchRecord) -> String {
    format!(
        "{{\"index\":{},\"genome\":\"{}\",\"gen\":{},\"worker\":{},\"seed\":{},\"E\":{},\"P\":{},\"O\":{},\"L\":{},\"failed\":{},\"seconds\":{}}}",
        r.index,
        r.genome,
        r.gen,
        r.worker,
        r.seed,
        format_float(r.breakdown.e),
        format_float(r.breakdown.p),
        format_float(r.breakdown.o),
        format_float(r.breakdown.l),
        r.breakdown.failed,
        format_float(r.seconds),
    )
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        what: "history record",
        line,
        msg: msg.into(),
    }
}

fn get_float(v: &Value, key: &str, line: usize) -> Result<f64> {
    match v.get(key) {
        Some(Value::Number(n)) => n
            .as_f64()
            .ok_or_else(|| parse_err(line, format!("{key} is not a float"))),
        Some(Value::String(s)) => match s.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(parse_err(line, format!("{key} has bad value {other:?}"))),
        },
        _ => Err(parse_err(line, format!("missing field {key}"))),
    }
}

fn get_uint(v: &Value, key: &str, line: usize) -> Result<u64> {
    v.get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| parse_err(line, format!("missing or invalid field {key}")))
}

/// Parses one line; `line` is 1-based and only used in errors. The record's
/// weights are not stored in the file and must be supplied.
pub fn parse_record(text: &str, line: usize, weights: ObjectiveWeights) -> Result<SearchRecord> {
    let v: Value = serde_json::from_str(text).map_err(|e| parse_err(line, e.to_string()))?;
    let genome = v
        .get("genome")
        .and_then(Value::as_str)
        .ok_or_else(|| parse_err(line, "missing field genome"))?
        .parse()
        .map_err(|e: Error| parse_err(line, e.to_string()))?;
    let failed = v
        .get("failed")
        .and_then(Value::as_bool)
        .ok_or_else(|| parse_err(line, "missing field failed"))?;
    let breakdown = ObjectiveBreakdown {
        e: get_float(&v, "E", line)?,
        p: get_float(&v, "P", line)?,
        o: get_float(&v, "O", line)?,
        l: get_float(&v, "L", line)?,
        weights,
        failed,
    };
    Ok(SearchRecord {
        index: get_uint(&v, "index", line)? as usize,
        genome,
        gen: get_uint(&v, "gen", line)?,
        worker: get_uint(&v, "worker", line)? as usize,
        seed: get_uint(&v, "seed", line)?,
        breakdown,
        seconds: get_float(&v, "seconds", line)?,
    })
}

/// Reads every complete line. A trailing line without a newline is an
/// interrupted write and is ignored; any other malformed line is an error.
pub fn read_history(path: &Path, weights: ObjectiveWeights) -> Result<Vec<SearchRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_history(&text, weights)
}

pub fn parse_history(text: &str, weights: ObjectiveWeights) -> Result<Vec<SearchRecord>> {
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut out = Vec::new();
    for (i, line) in complete.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(line, i + 1, weights)?;
        if rec.index != out.len() {
            return Err(parse_err(
                i + 1,
                format!("expected index {}, found {}", out.len(), rec.index),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Appends records, flushing after every line.
pub struct HistoryWriter {
    file: File,
}

impl HistoryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            file: File::create(path)?,
        })
    }

    /// Opens for appending after truncating to the last complete line.
    pub fn append(path: &Path) -> Result<Self> {
        if path.exists() {
            let text = std::fs::read(path)?;
            let keep = text.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            if keep != text.len() {
                let f = OpenOptions::new().write(true).open(path)?;
                f.set_len(keep as u64)?;
            }
        }
        Ok(Self {
            file: OpenOptions::new().create(true).append(true).open(path)?,
        })
    }

    pub fn write(&mut self, r: &SearchRecord) -> Result<()> {
        let mut line = format_record(r);
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

/// Counts complete lines, for error messages and resume bookkeeping.
pub fn count_lines(path: &Path) -> Result<usize> {
    let f = BufReader::new(File::open(path)?);
    Ok(f.split(b'\n').count())
}
