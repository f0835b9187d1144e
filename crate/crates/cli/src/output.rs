//! Output formatting: 17-significant-digit numbers, JSON documents and CSV
//! files that carry a metadata header.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Format like C's `%.17g`. Non-finite values have no JSON spelling and are
/// handled by the callers.
pub fn g17(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let sign = if negative { "-" } else { "" };
    if !(-4..17).contains(&exp) {
        let mut m = format!("{}.{}", &digits[..1], &digits[1..]);
        trim_fraction(&mut m);
        let esign = if exp < 0 { '-' } else { '+' };
        return format!("{sign}{m}e{esign}{:02}", exp.abs());
    }
    let mut s = if exp >= 0 {
        let point = exp as usize + 1;
        format!("{}.{}", &digits[..point], &digits[point..])
    } else {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    };
    trim_fraction(&mut s);
    format!("{sign}{s}")
}

fn trim_fraction(s: &mut String) {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
}

/// CSV cell for a real number.
pub fn csv_num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        g17(x)
    }
}

pub fn csv_opt(x: Option<f64>) -> String {
    x.map(csv_num).unwrap_or_default()
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let x = n.as_f64().expect("f64 number");
                if x.is_finite() {
                    out.push_str(&g17(x));
                } else {
                    out.push_str("null");
                }
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            // Numeric arrays stay on one line.
            if items.iter().all(|i| i.is_number() || i.is_null()) {
                out.push('[');
                for (k, i) in items.iter().enumerate() {
                    if k > 0 {
                        out.push_str(", ");
                    }
                    write_value(out, i, indent);
                }
                out.push(']');
                return;
            }
            out.push_str("[\n");
            for (k, i) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_value(out, i, indent + 1);
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            for (k, (key, val)) in map.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&Value::String(key.clone()).to_string());
                out.push_str(": ");
                write_value(out, val, indent + 1);
                out.push_str(if k + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

pub fn to_json_string(v: &Value) -> String {
    let mut s = String::new();
    write_value(&mut s, v, 0);
    s.push('\n');
    s
}

/// Single-line rendering, used for CSV header comments.
fn to_compact(v: &Value) -> String {
    to_json_string(v)
        .lines()
        .map(str::trim)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serializable value")
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub file: String,
    pub sha256: String,
}

/// Everything needed to reproduce an output file.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
    pub tolerances: Map<String, Value>,
    pub parameters: Map<String, Value>,
}

impl Metadata {
    pub fn new(command: &str) -> Self {
        Self {
            tool: "hfa",
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            inputs: Vec::new(),
            seed: None,
            tolerances: Map::new(),
            parameters: Map::new(),
        }
    }

    pub fn tolerance(&mut self, key: &str, v: impl Serialize) -> &mut Self {
        self.tolerances.insert(key.into(), value(&v));
        self
    }

    pub fn parameter(&mut self, key: &str, v: impl Serialize) -> &mut Self {
        self.parameters.insert(key.into(), value(&v));
        self
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Write a JSON document with a `metadata` member next to the body.
pub fn write_json(path: &Path, meta: &Metadata, body: Value) -> Result<()> {
    let mut doc = Map::new();
    doc.insert("metadata".into(), value(meta));
    match body {
        Value::Object(m) => doc.extend(m),
        other => {
            doc.insert("result".into(), other);
        }
    }
    fs::write(path, to_json_string(&Value::Object(doc)))
        .with_context(|| format!("writing {}", path.display()))
}

/// Write a CSV file whose first line is a `# metadata:` comment.
pub fn write_csv(path: &Path, meta: &Metadata, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "# metadata: {}", to_compact(&value(meta)))?;
    {
        let mut w = csv::WriterBuilder::new().from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}
