//! JSON configuration layering: built-in defaults, then a config file, then
//! `path=value` overrides from the command line.

use anyhow::{bail, Context, Result};
use serde_json::{Map, Value};
use std::path::Path;

/// Recursively overlays `over` onto `base`; objects merge, everything else
/// replaces.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

/// Defaults overlaid with the JSON file at `path`, when given.
pub fn layered(defaults: Value, path: Option<&Path>) -> Result<Value> {
    let mut v = defaults;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        merge(&mut v, file);
    }
    Ok(v)
}

/// Sets the dotted `path` inside `root`, creating objects along the way.
/// Numeric segments index into existing arrays.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    if path.is_empty() {
        bail!("empty override path");
    }
    let mut cur = root;
    for seg in path.split('.') {
        if seg.is_empty() {
            bail!("empty segment in override path {path:?}");
        }
        cur = match cur {
            Value::Array(items) => {
                let i: usize = seg.parse().with_context(|| format!("{path:?}: {seg:?} is not an array index"))?;
                let len = items.len();
                items.get_mut(i).with_context(|| format!("{path:?}: index {i} out of range ({len})"))?
            }
            other => {
                if !other.is_object() {
                    *other = Value::Object(Map::new());
                }
                other.as_object_mut().expect("object").entry(seg).or_insert(Value::Null)
            }
        };
    }
    *cur = value;
    Ok(())
}

/// Applies a `path=value` override. The value is read as JSON when it
/// parses, and as a plain string otherwise.
pub fn apply_assignment(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override {assignment:?} is not of the form path=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set_path(root, path.trim(), value)
}

/// JSON number for a flag value; non-finite values have no JSON form.
pub fn number(x: f64, flag: &str) -> Result<Value> {
    serde_json::Number::from_f64(x)
        .map(Value::Number)
        .with_context(|| format!("--{flag} must be finite (got {x})"))
}
