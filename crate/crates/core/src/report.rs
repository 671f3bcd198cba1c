//! Report records and the canonical JSON writer.
//!
//! Reports are built as `serde_json::Value` trees and written with a fixed
//! number format (`{:.16e}`, i.e. 17 significant digits) and sorted keys, so
//! identical inputs give byte-identical files.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// One named check with its measured value and threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckOutcome {
    /// Passes when `value <= threshold`.
    pub fn at_most(name: &str, value: f64, threshold: f64) -> CheckOutcome {
        CheckOutcome {
            name: name.to_string(),
            value,
            threshold,
            pass: value <= threshold,
            note: None,
        }
    }

    /// Passes when `value >= threshold`.
    pub fn at_least(name: &str, value: f64, threshold: f64) -> CheckOutcome {
        CheckOutcome {
            name: name.to_string(),
            value,
            threshold,
            pass: value >= threshold,
            note: None,
        }
    }

    pub fn failed(name: &str, note: String) -> CheckOutcome {
        CheckOutcome {
            name: name.to_string(),
            value: f64::NAN,
            threshold: f64::NAN,
            pass: false,
            note: Some(note),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> CheckOutcome {
        self.note = Some(note.into());
        self
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("name".into(), Value::String(self.name.clone()));
        m.insert("value".into(), num(self.value));
        m.insert("threshold".into(), num(self.threshold));
        m.insert("pass".into(), Value::Bool(self.pass));
        if let Some(n) = &self.note {
            m.insert("note".into(), Value::String(n.clone()));
        }
        Value::Object(m)
    }
}

/// `max|a - b| / max(1, max|a|, max|b|)` over paired entries.
pub fn relative_residual<'a, I>(pairs: I) -> f64
where
    I: IntoIterator<Item = (&'a f64, &'a f64)>,
{
    let mut diff = 0.0f64;
    let mut scale = 1.0f64;
    for (a, b) in pairs {
        diff = diff.max((a - b).abs());
        scale = scale.max(a.abs()).max(b.abs());
    }
    diff / scale
}

/// JSON value for a float; non-finite values become strings.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
    } else if x.is_nan() {
        Value::String("NaN".into())
    } else if x > 0.0 {
        Value::String("inf".into())
    } else {
        Value::String("-inf".into())
    }
}

pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

fn format_float(x: f64) -> String {
    if x == 0.0 {
        // keep the sign of zero out of the report
        return format!("{:.16e}", 0.0f64);
    }
    format!("{:.16e}", x)
}

fn write_string(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("string serialization"));
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&format_float(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => write_string(out, s),
        Value::Array(items) => {
            if items.iter().all(|x| !x.is_object() && !x.is_array()) {
                out.push('[');
                for (i, x) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_value(out, x, indent);
                }
                out.push(']');
                return;
            }
            out.push_str("[\n");
            for (i, x) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_value(out, x, indent + 1);
                if i + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_string(out, k);
                out.push_str(": ");
                write_value(out, &map[*k], indent + 1);
                if i + 1 < keys.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

/// Deterministic pretty JSON with fixed float formatting and sorted keys.
pub fn to_canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v, 0);
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_use_seventeen_digits() {
        let s = to_canonical_json(&json!({"b": 0.1, "a": 1, "c": [1.5, -2.0]}));
        assert_eq!(
            s,
            "{\n  \"a\": 1,\n  \"b\": 1.0000000000000001e-1,\n  \"c\": [1.5000000000000000e0, -2.0000000000000000e0]\n}\n"
        );
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["b"].as_f64().unwrap(), 0.1);
    }

    #[test]
    fn non_finite_values_become_strings() {
        assert_eq!(num(f64::NAN), Value::String("NaN".into()));
        assert_eq!(num(f64::NEG_INFINITY), Value::String("-inf".into()));
    }

    #[test]
    fn check_outcome_directions() {
        assert!(CheckOutcome::at_most("x", 1e-12, 1e-10).pass);
        assert!(!CheckOutcome::at_least("x", 1e-12, 1e-10).pass);
    }
}
