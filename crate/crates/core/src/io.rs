//! Instance files and reports as JSON with a canonical layout: sorted keys,
//! integers written plainly and every float written with 17 significant
//! digits, so that a parse followed by a write reproduces the same bytes.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{GeneratedInstance, ModelError, QuadraticCost, TransportationInstance};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("document must be a JSON object")]
    NotAnObject,
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
    #[error("key `{key}` must be {expected}")]
    WrongType {
        key: &'static str,
        expected: &'static str,
    },
    #[error("`{key}` has length {found}, expected {expected}")]
    WrongLength {
        key: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("exactly one of `Q_dense` and `Q_diagonal` is required")]
    QuadraticKeys,
    #[error("`Q_dense` is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    File(#[from] std::io::Error),
}

/// The quadratic term as stored in a file.
#[derive(Debug, Clone, PartialEq)]
pub enum QuadraticTerm {
    Dense(DMatrix<f64>),
    Diagonal(Vec<f64>),
}

/// Raw contents of an instance file. Lengths and symmetry are checked on
/// parse; balance and signs are left to validation.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFile {
    pub n: usize,
    pub m: usize,
    pub supplies: Vec<f64>,
    pub demands: Vec<f64>,
    pub c: Vec<f64>,
    pub q: QuadraticTerm,
    pub x0: Option<Vec<f64>>,
}

const KEYS: [&str; 8] = [
    "n",
    "m",
    "supplies",
    "demands",
    "c",
    "Q_dense",
    "Q_diagonal",
    "x0",
];

fn real_array(value: &Value, key: &'static str, len: usize) -> Result<Vec<f64>, IoError> {
    let wrong = || IoError::WrongType {
        key,
        expected: "an array of numbers",
    };
    let items = value.as_array().ok_or_else(wrong)?;
    if items.len() != len {
        return Err(IoError::WrongLength {
            key,
            expected: len,
            found: items.len(),
        });
    }
    items.iter().map(|v| v.as_f64().ok_or_else(wrong)).collect()
}

fn count(map: &Map<String, Value>, key: &'static str) -> Result<usize, IoError> {
    let value = map.get(key).ok_or(IoError::MissingKey(key))?;
    value
        .as_u64()
        .filter(|&v| v >= 1)
        .map(|v| v as usize)
        .ok_or(IoError::WrongType {
            key,
            expected: "a positive integer",
        })
}

fn required<'a>(map: &'a Map<String, Value>, key: &'static str) -> Result<&'a Value, IoError> {
    map.get(key).ok_or(IoError::MissingKey(key))
}

impl InstanceFile {
    pub fn parse(text: &str) -> Result<Self, IoError> {
        let value: Value = serde_json::from_str(text)?;
        let map = value.as_object().ok_or(IoError::NotAnObject)?;
        if let Some(key) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(IoError::UnknownKey(key.clone()));
        }
        let n = count(map, "n")?;
        let m = count(map, "m")?;
        let links = n * m;
        let supplies = real_array(required(map, "supplies")?, "supplies", n)?;
        let demands = real_array(required(map, "demands")?, "demands", m)?;
        let c = real_array(required(map, "c")?, "c", links)?;
        let q = match (map.get("Q_dense"), map.get("Q_diagonal")) {
            (Some(rows), None) => {
                let rows = rows.as_array().ok_or(IoError::WrongType {
                    key: "Q_dense",
                    expected: "an array of arrays",
                })?;
                if rows.len() != links {
                    return Err(IoError::WrongLength {
                        key: "Q_dense",
                        expected: links,
                        found: rows.len(),
                    });
                }
                let rows = rows
                    .iter()
                    .map(|r| real_array(r, "Q_dense", links))
                    .collect::<Result<Vec<_>, _>>()?;
                let q = DMatrix::from_fn(links, links, |a, b| rows[a][b]);
                for a in 0..links {
                    for b in a + 1..links {
                        if q[(a, b)] != q[(b, a)] {
                            return Err(IoError::Asymmetric(a, b));
                        }
                    }
                }
                QuadraticTerm::Dense(q)
            }
            (None, Some(diag)) => QuadraticTerm::Diagonal(real_array(diag, "Q_diagonal", links)?),
            _ => return Err(IoError::QuadraticKeys),
        };
        let x0 = map
            .get("x0")
            .map(|v| real_array(v, "x0", links))
            .transpose()?;
        Ok(Self {
            n,
            m,
            supplies,
            demands,
            c,
            q,
            x0,
        })
    }

    pub fn read(path: &std::path::Path) -> Result<(Self, Vec<u8>), IoError> {
        let bytes = std::fs::read(path)?;
        let text = String::from_utf8_lossy(&bytes);
        Ok((Self::parse(&text)?, bytes))
    }

    pub fn from_generated(g: &GeneratedInstance) -> Self {
        let inst = &g.instance;
        let q = if g.cost.is_diagonal() {
            QuadraticTerm::Diagonal(g.cost.q().diagonal().iter().copied().collect())
        } else {
            QuadraticTerm::Dense(g.cost.q().clone())
        };
        Self {
            n: inst.n(),
            m: inst.m(),
            supplies: inst.supplies().to_vec(),
            demands: inst.demands().to_vec(),
            c: g.cost.c().to_vec(),
            q,
            x0: Some(g.flow.clone()),
        }
    }

    pub fn instance(&self) -> Result<TransportationInstance, ModelError> {
        TransportationInstance::new(self.supplies.clone(), self.demands.clone())
    }

    pub fn cost(&self) -> Result<QuadraticCost, ModelError> {
        match &self.q {
            QuadraticTerm::Dense(q) => QuadraticCost::dense(q.clone(), self.c.clone()),
            QuadraticTerm::Diagonal(d) => QuadraticCost::diagonal(d, self.c.clone()),
        }
    }

    pub fn to_value(&self) -> Value {
        let mut map = Map::new();
        map.insert("n".into(), self.n.into());
        map.insert("m".into(), self.m.into());
        map.insert("supplies".into(), floats(&self.supplies));
        map.insert("demands".into(), floats(&self.demands));
        map.insert("c".into(), floats(&self.c));
        match &self.q {
            QuadraticTerm::Dense(q) => {
                let rows = q
                    .row_iter()
                    .map(|r| floats(&r.iter().copied().collect::<Vec<_>>()));
                map.insert("Q_dense".into(), Value::Array(rows.collect()));
            }
            QuadraticTerm::Diagonal(d) => {
                map.insert("Q_diagonal".into(), floats(d));
            }
        }
        if let Some(x0) = &self.x0 {
            map.insert("x0".into(), floats(x0));
        }
        Value::Object(map)
    }

    pub fn to_canonical(&self) -> String {
        canonical_json(&self.to_value())
    }
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| float(x)).collect())
}

fn float(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serializes any value through the canonical writer.
pub fn to_canonical<T: Serialize>(value: &T) -> Result<String, IoError> {
    Ok(canonical_json(&serde_json::to_value(value)?))
}

pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, IoError> {
    Ok(serde_json::from_str(text)?)
}

/// Two-space indented JSON with sorted keys; arrays of scalars stay on one line.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value, 0);
    out.push('\n');
    out
}

fn write_number(out: &mut String, n: &serde_json::Number) {
    if n.is_f64() {
        let x = n.as_f64().expect("float number");
        let _ = write!(out, "{x:.16e}");
    } else {
        let _ = write!(out, "{n}");
    }
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Array(_) | Value::Object(_))
}

fn write_value(out: &mut String, value: &Value, indent: usize) {
    let pad = |out: &mut String, k: usize| out.extend(std::iter::repeat_n(' ', k));
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => write_number(out, n),
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) if items.iter().all(is_scalar) => {
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                write_value(out, item, indent);
            }
            out.push(']');
        }
        Value::Array(items) => {
            out.push_str("[\n");
            for (k, item) in items.iter().enumerate() {
                pad(out, indent + 2);
                write_value(out, item, indent + 2);
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            // serde_json's map keeps keys sorted
            out.push_str("{\n");
            for (k, (key, item)) in map.iter().enumerate() {
                pad(out, indent + 2);
                out.push_str(&Value::String(key.clone()).to_string());
                out.push_str(": ");
                write_value(out, item, indent + 2);
                out.push_str(if k + 1 < map.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push('}');
        }
    }
}
