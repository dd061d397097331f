//! Literal values used in sheets, plans and observations.
//!
//! The canonical JSON encoding is shared by every wire format in the crate:
//! plain JSON for null/bool/number/string/list/map, plus single-key tagged
//! objects for the cases JSON cannot express directly:
//!
//! * `{"!bytes": "<base64>"}` for raw octets,
//! * `{"!ref": "A<row>"}` for a reference to a prior statement's result,
//! * `{"!float": "nan" | "inf" | "-inf"}` for non-finite floats.

use std::collections::BTreeMap;
use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde_json::{Map, Number, Value as Json};
use thiserror::Error;

pub const BYTES_TAG: &str = "!bytes";
pub const REF_TAG: &str = "!ref";
pub const FLOAT_TAG: &str = "!float";

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Bytes(Vec<u8>),
    List(Vec<Value>),
    Map(BTreeMap<String, Value>),
    /// Result of statement `row` (1-based), e.g. an instance created by `create`.
    Ref(usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum ValueError {
    #[error("invalid base64 in bytes literal: {0}")]
    Base64(String),
    #[error("invalid reference `{0}` (expected A<row>)")]
    Reference(String),
    #[error("invalid float tag `{0}`")]
    FloatTag(String),
    #[error("number `{0}` is out of range")]
    Number(String),
    #[error("invalid JSON: {0}")]
    Json(String),
}

impl Value {
    pub fn bytes(data: impl AsRef<[u8]>) -> Self {
        Value::Bytes(data.as_ref().to_vec())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Str(_) => "str",
            Value::Bytes(_) => "bytes",
            Value::List(_) => "list",
            Value::Map(_) => "map",
            Value::Ref(_) => "ref",
        }
    }

    pub fn to_json(&self) -> Json {
        match self {
            Value::Null => Json::Null,
            Value::Bool(b) => Json::Bool(*b),
            Value::Int(i) => Json::Number((*i).into()),
            Value::Float(f) => match Number::from_f64(*f) {
                Some(n) => Json::Number(n),
                None => {
                    let tag = if f.is_nan() {
                        "nan"
                    } else if *f > 0.0 {
                        "inf"
                    } else {
                        "-inf"
                    };
                    tagged(FLOAT_TAG, tag.to_string())
                }
            },
            Value::Str(s) => Json::String(s.clone()),
            Value::Bytes(b) => tagged(BYTES_TAG, B64.encode(b)),
            Value::List(items) => Json::Array(items.iter().map(Value::to_json).collect()),
            Value::Map(m) => Json::Object(m.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()),
            Value::Ref(row) => tagged(REF_TAG, format!("A{row}")),
        }
    }

    pub fn from_json(json: &Json) -> Result<Self, ValueError> {
        Ok(match json {
            Json::Null => Value::Null,
            Json::Bool(b) => Value::Bool(*b),
            Json::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Value::Int(i)
                } else if n.is_u64() || !n.to_string().contains(['.', 'e', 'E']) {
                    return Err(ValueError::Number(n.to_string()));
                } else {
                    Value::Float(n.as_f64().ok_or_else(|| ValueError::Number(n.to_string()))?)
                }
            }
            Json::String(s) => Value::Str(s.clone()),
            Json::Array(items) => Value::List(items.iter().map(Value::from_json).collect::<Result<_, _>>()?),
            Json::Object(obj) => {
                if obj.len() == 1 {
                    let (key, inner) = obj.iter().next().expect("one entry");
                    if let Some(text) = inner.as_str() {
                        match key.as_str() {
                            BYTES_TAG => return decode_base64(text).map(Value::Bytes),
                            REF_TAG => return parse_ref(text).map(Value::Ref),
                            FLOAT_TAG => {
                                return match text {
                                    "nan" => Ok(Value::Float(f64::NAN)),
                                    "inf" => Ok(Value::Float(f64::INFINITY)),
                                    "-inf" => Ok(Value::Float(f64::NEG_INFINITY)),
                                    other => Err(ValueError::FloatTag(other.to_string())),
                                }
                            }
                            _ => {}
                        }
                    }
                }
                Value::Map(
                    obj.iter()
                        .map(|(k, v)| Ok((k.clone(), Value::from_json(v)?)))
                        .collect::<Result<_, ValueError>>()?,
                )
            }
        })
    }

    /// Canonical compact JSON text (map keys sorted).
    pub fn to_json_string(&self) -> String {
        self.to_json().to_string()
    }

    pub fn from_json_str(text: &str) -> Result<Self, ValueError> {
        let json: Json = serde_json::from_str(text).map_err(|e| ValueError::Json(e.to_string()))?;
        Value::from_json(&json)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_json_string())
    }
}

impl serde::Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> serde::Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let json = Json::deserialize(deserializer)?;
        Value::from_json(&json).map_err(serde::de::Error::custom)
    }
}

fn tagged(tag: &str, text: String) -> Json {
    let mut map = Map::new();
    map.insert(tag.to_string(), Json::String(text));
    Json::Object(map)
}

pub fn decode_base64(text: &str) -> Result<Vec<u8>, ValueError> {
    B64.decode(text).map_err(|e| ValueError::Base64(e.to_string()))
}

pub fn encode_base64(data: &[u8]) -> String {
    B64.encode(data)
}

fn parse_ref(text: &str) -> Result<usize, ValueError> {
    text.strip_prefix('A')
        .and_then(|n| n.parse::<usize>().ok())
        .filter(|n| *n >= 1)
        .ok_or_else(|| ValueError::Reference(text.to_string()))
}

#[cfg(test)]
pub(crate) mod strategy {
    use super::*;
    use proptest::prelude::*;

    pub fn value() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::Bool),
            any::<i64>().prop_map(Value::Int),
            (-1e12f64..1e12).prop_map(Value::Float),
            "[a-zA-Z0-9 !?=]{0,12}".prop_map(Value::Str),
            proptest::collection::vec(any::<u8>(), 0..16).prop_map(Value::Bytes),
            (1usize..50).prop_map(Value::Ref),
        ];
        leaf.prop_recursive(3, 24, 4, |inner| {
            prop_oneof![
                proptest::collection::vec(inner.clone(), 0..4).prop_map(Value::List),
                proptest::collection::btree_map("[a-z]{1,4}", inner, 0..4).prop_map(Value::Map),
            ]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bytes_use_tagged_base64() {
        let v = Value::bytes("Hello World!");
        assert_eq!(v.to_json_string(), r#"{"!bytes":"SGVsbG8gV29ybGQh"}"#);
        assert_eq!(Value::from_json_str(r#"{"!bytes":"SGVsbG8gV29ybGQh"}"#).unwrap(), v);
    }

    #[test]
    fn refs_and_non_finite_floats() {
        assert_eq!(Value::Ref(3).to_json_string(), r#"{"!ref":"A3"}"#);
        assert_eq!(Value::from_json_str(r#"{"!ref":"A3"}"#).unwrap(), Value::Ref(3));
        assert!(Value::from_json_str(r#"{"!ref":"B3"}"#).is_err());
        let nan = Value::from_json_str(&Value::Float(f64::NAN).to_json_string()).unwrap();
        assert!(matches!(nan, Value::Float(f) if f.is_nan()));
    }

    #[test]
    fn floats_stay_floats() {
        assert_eq!(Value::from_json_str("1.0").unwrap(), Value::Float(1.0));
        assert_eq!(Value::from_json_str("1").unwrap(), Value::Int(1));
        assert!(Value::from_json_str("18446744073709551615").is_err());
    }

    #[test]
    fn multi_key_object_with_tag_is_a_map() {
        let v = Value::from_json_str(r#"{"!bytes":"AA==","x":1}"#).unwrap();
        assert!(matches!(v, Value::Map(_)));
    }

    proptest! {
        #[test]
        fn json_round_trip(v in strategy::value()) {
            let back = Value::from_json_str(&v.to_json_string()).unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
