//! Structured-output descriptors and a validator for the JSON-schema subset
//! the pipeline's response schemas use: `type`, `properties`, `required`,
//! `additionalProperties`, `items`, `minItems`, `minimum`, `maximum`, `enum`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// A named response schema. The name plus the canonical schema JSON form the
/// schema's identity for request fingerprints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSchema {
    pub name: String,
    pub schema: Value,
}

impl ResponseSchema {
    pub fn new(name: impl Into<String>, schema: Value) -> Self {
        ResponseSchema {
            name: name.into(),
            schema,
        }
    }

    /// Stable identity string: `name` followed by the schema serialized with
    /// sorted keys.
    pub fn identity(&self) -> String {
        // serde_json::Map is ordered by key, so to_string is canonical.
        format!("{}:{}", self.name, self.schema)
    }

    pub fn validate(&self, payload: &Value) -> Result<(), String> {
        validate_value(&self.schema, payload, "$")
    }
}

fn type_matches(ty: &str, v: &Value) -> bool {
    match ty {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "number" => v.is_number(),
        "integer" => v.as_i64().is_some() || v.as_u64().is_some(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        _ => false,
    }
}

fn describe(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn validate_value(schema: &Value, v: &Value, at: &str) -> Result<(), String> {
    let Some(schema) = schema.as_object() else {
        // `true` / `{}`-like schemas accept anything.
        return Ok(());
    };

    if let Some(ty) = schema.get("type") {
        let ok = match ty {
            Value::String(t) => type_matches(t, v),
            Value::Array(ts) => ts.iter().filter_map(Value::as_str).any(|t| type_matches(t, v)),
            _ => true,
        };
        if !ok {
            return Err(format!("{at}: expected {ty}, found {}", describe(v)));
        }
    }

    if let Some(Value::Array(options)) = schema.get("enum") {
        if !options.contains(v) {
            return Err(format!("{at}: value {v} not in enum"));
        }
    }

    if let Some(n) = v.as_f64() {
        if let Some(min) = schema.get("minimum").and_then(Value::as_f64) {
            if n < min {
                return Err(format!("{at}: {n} is below minimum {min}"));
            }
        }
        if let Some(max) = schema.get("maximum").and_then(Value::as_f64) {
            if n > max {
                return Err(format!("{at}: {n} is above maximum {max}"));
            }
        }
    }

    if let Value::Object(map) = v {
        if let Some(Value::Array(required)) = schema.get("required") {
            for key in required.iter().filter_map(Value::as_str) {
                if !map.contains_key(key) {
                    return Err(format!("{at}: missing required field \"{key}\""));
                }
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        for (key, child) in map {
            let path = format!("{at}.{key}");
            match props.and_then(|p| p.get(key)) {
                Some(sub) => validate_value(sub, child, &path)?,
                None => match schema.get("additionalProperties") {
                    Some(Value::Bool(false)) => {
                        return Err(format!("{at}: unexpected field \"{key}\""))
                    }
                    Some(sub @ Value::Object(_)) => validate_value(sub, child, &path)?,
                    _ => {}
                },
            }
        }
    }

    if let Value::Array(items) = v {
        if let Some(min) = schema.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < min {
                return Err(format!("{at}: expected at least {min} items, found {}", items.len()));
            }
        }
        if let Some(item_schema) = schema.get("items") {
            for (i, item) in items.iter().enumerate() {
                validate_value(item_schema, item, &format!("{at}[{i}]"))?;
            }
        }
    }

    Ok(())
}
