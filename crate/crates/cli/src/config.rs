//! Flat `key = value` run configuration.
//!
//! Every command has a fixed key set with defaults. Struct-backed keys take
//! their type and default from the serialised form of the core config
//! structs; values are parsed back into that form and deserialised.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Number, Value};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    U64,
    F64,
    Bool,
    Str,
    StrList,
    U64List,
    /// `name:count` pairs separated by commas.
    Counts,
}

impl Kind {
    fn of(v: &Value) -> Kind {
        match v {
            Value::Bool(_) => Kind::Bool,
            Value::Number(n) if n.is_u64() => Kind::U64,
            Value::Number(_) => Kind::F64,
            Value::Array(items) if items.iter().all(Value::is_u64) && !items.is_empty() => Kind::U64List,
            Value::Array(_) => Kind::StrList,
            Value::Object(_) => Kind::Counts,
            _ => Kind::Str,
        }
    }
}

#[derive(Clone, Debug)]
struct KeySpec {
    kind: Kind,
    default: Value,
}

/// Key set of one command.
#[derive(Clone, Debug, Default)]
pub struct Schema {
    keys: BTreeMap<String, KeySpec>,
}

impl Schema {
    /// Adds the fields of `defaults` (a struct serialising to an object),
    /// optionally restricted to `only`.
    pub fn fields<T: Serialize>(mut self, defaults: &T, only: Option<&[&str]>) -> Self {
        let Value::Object(map) = serde_json::to_value(defaults).expect("config structs serialise") else {
            panic!("config structs serialise to objects");
        };
        for (k, v) in map {
            if only.is_none_or(|keep| keep.contains(&k.as_str())) {
                self.keys.insert(
                    k,
                    KeySpec {
                        kind: Kind::of(&v),
                        default: v,
                    },
                );
            }
        }
        self
    }

    pub fn key(mut self, name: &str, kind: Kind, default: Value) -> Self {
        self.keys.insert(name.to_string(), KeySpec { kind, default });
        self
    }
}

/// Resolved configuration: every schema key with its value.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, Value>,
}

fn parse_value(key: &str, kind: Kind, raw: &str) -> Result<Value, CliError> {
    let bad = |what: &str| CliError::Config(format!("key `{key}`: expected {what}, got {raw:?}"));
    let items = || raw.split(',').map(str::trim).filter(|s| !s.is_empty());
    Ok(match kind {
        Kind::U64 => Value::from(raw.parse::<u64>().map_err(|_| bad("a non-negative integer"))?),
        Kind::F64 => {
            let x = raw.parse::<f64>().map_err(|_| bad("a number"))?;
            Value::Number(Number::from_f64(x).ok_or_else(|| bad("a finite number"))?)
        }
        Kind::Bool => Value::Bool(raw.parse().map_err(|_| bad("true or false"))?),
        Kind::Str => Value::String(raw.to_string()),
        Kind::StrList => Value::Array(items().map(|s| Value::String(s.to_string())).collect()),
        Kind::U64List => Value::Array(
            items()
                .map(|s| {
                    s.parse::<u64>()
                        .map(Value::from)
                        .map_err(|_| bad("comma-separated integers"))
                })
                .collect::<Result<_, _>>()?,
        ),
        Kind::Counts => {
            let mut map = Map::new();
            for item in items() {
                let (name, count) = item.split_once(':').ok_or_else(|| bad("name:count pairs"))?;
                let count: u64 = count.trim().parse().map_err(|_| bad("name:count pairs"))?;
                map.insert(name.trim().to_string(), Value::from(count));
            }
            Value::Object(map)
        }
    })
}

/// Canonical text form of a value; parsing it back gives the same value.
fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(render).collect::<Vec<_>>().join(","),
        Value::Object(map) => map
            .iter()
            .map(|(k, c)| format!("{k}:{}", render(c)))
            .collect::<Vec<_>>()
            .join(","),
        other => other.to_string(),
    }
}

impl RunConfig {
    /// Parses `text` against `schema`. Blank lines and `#` comments are
    /// skipped; absent keys take their defaults.
    pub fn parse(text: &str, schema: &Schema, command: &str) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, Value> = schema
            .keys
            .iter()
            .map(|(k, s)| (k.clone(), s.default.clone()))
            .collect();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            let spec = schema
                .keys
                .get(key)
                .ok_or_else(|| CliError::Config(format!("unknown key `{key}` for {command}")))?;
            values.insert(key.to_string(), parse_value(key, spec.kind, raw.trim())?);
        }
        Ok(Self { values })
    }

    pub fn load(path: Option<&Path>, schema: &Schema, command: &str) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::parse(&text, schema, command)
    }

    /// Rebuilds a configuration from its echo.
    pub fn from_echo(echo: &BTreeMap<String, String>, schema: &Schema, command: &str) -> Result<Self, CliError> {
        let text: String = echo.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        Self::parse(&text, schema, command)
    }

    /// Every key with its value in canonical text form.
    pub fn echo(&self) -> BTreeMap<String, String> {
        self.values.iter().map(|(k, v)| (k.clone(), render(v))).collect()
    }

    pub fn set_u64(&mut self, key: &str, v: u64) {
        self.values.insert(key.to_string(), Value::from(v));
    }

    fn get(&self, key: &str) -> &Value {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key `{key}` missing from schema"))
    }

    pub fn u64(&self, key: &str) -> u64 {
        self.get(key).as_u64().expect("u64 key")
    }

    pub fn f64(&self, key: &str) -> f64 {
        self.get(key).as_f64().expect("f64 key")
    }

    pub fn string(&self, key: &str) -> String {
        render(self.get(key))
    }

    pub fn u64_list(&self, key: &str) -> Vec<u64> {
        self.get(key)
            .as_array()
            .map(|a| a.iter().filter_map(Value::as_u64).collect())
            .unwrap_or_default()
    }

    pub fn str_list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .as_array()
            .map(|a| a.iter().map(render).collect())
            .unwrap_or_default()
    }

    /// Path-valued key that must be set.
    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.optional_path(key)
            .ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    /// Path-valued key, `None` when left empty.
    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        let s = self.string(key);
        (!s.is_empty()).then(|| PathBuf::from(s))
    }

    /// Deserialises the fields of `T` from this configuration, starting
    /// from `base` for fields the schema does not cover.
    pub fn build<T: Serialize + DeserializeOwned>(&self, base: &T) -> Result<T, CliError> {
        let Value::Object(mut map) = serde_json::to_value(base).expect("config structs serialise") else {
            panic!("config structs serialise to objects");
        };
        let base_map = map.clone();
        for (k, v) in map.iter_mut() {
            if let Some(set) = self.values.get(k) {
                *v = set.clone();
            }
        }
        serde_json::from_value(Value::Object(map.clone())).map_err(|e| {
            let culprit = map.iter().find(|(k, v)| {
                let mut probe = base_map.clone();
                probe.insert((*k).clone(), (*v).clone());
                serde_json::from_value::<T>(Value::Object(probe)).is_err()
            });
            match culprit {
                Some((k, v)) => CliError::Config(format!("key `{k}`: invalid value {:?} ({e})", render(v))),
                None => CliError::Config(e.to_string()),
            }
        })
    }
}
