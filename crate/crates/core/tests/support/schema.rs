//! Checker for the JSON Schema keywords the shipped schemas use: `type`,
//! `properties`, `required`, `additionalProperties`, `items`, `enum`,
//! `const`, `minimum`, `maximum`, `minItems`, `maxItems`, `oneOf`, `anyOf`
//! and local `$ref`s into `$defs`.

use serde_json::Value;

pub fn validate(instance: &Value, schema: &Value) -> Result<(), String> {
    check(instance, schema, schema, "$")
}

fn type_ok(v: &Value, t: &str) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "number" => v.is_number(),
        "integer" => v.as_f64().is_some_and(|f| f.fract() == 0.0),
        other => panic!("unsupported type {other}"),
    }
}

fn check(v: &Value, s: &Value, root: &Value, at: &str) -> Result<(), String> {
    let Some(obj) = s.as_object() else {
        return match s {
            Value::Bool(true) => Ok(()),
            Value::Bool(false) => Err(format!("{at}: not allowed")),
            _ => panic!("malformed schema at {at}"),
        };
    };
    for key in obj.keys() {
        let known = [
            "$schema",
            "$id",
            "$defs",
            "$ref",
            "title",
            "description",
            "type",
            "properties",
            "required",
            "additionalProperties",
            "items",
            "enum",
            "const",
            "minimum",
            "maximum",
            "minItems",
            "maxItems",
            "oneOf",
            "anyOf",
        ];
        assert!(
            known.contains(&key.as_str()),
            "schema keyword {key} is not supported by the checker"
        );
    }
    if let Some(r) = obj.get("$ref").and_then(Value::as_str) {
        let name = r
            .strip_prefix("#/$defs/")
            .unwrap_or_else(|| panic!("unsupported $ref {r}"));
        let target = &root["$defs"][name];
        assert!(!target.is_null(), "dangling $ref {r}");
        check(v, target, root, at)?;
    }
    if let Some(t) = obj.get("type") {
        let ok = match t {
            Value::String(t) => type_ok(v, t),
            Value::Array(ts) => ts.iter().any(|t| type_ok(v, t.as_str().unwrap())),
            _ => panic!("bad type at {at}"),
        };
        if !ok {
            return Err(format!("{at}: expected {t}, got {v}"));
        }
    }
    if let Some(e) = obj.get("enum").and_then(Value::as_array) {
        if !e.contains(v) {
            return Err(format!("{at}: {v} not in {e:?}"));
        }
    }
    if let Some(c) = obj.get("const") {
        if c != v {
            return Err(format!("{at}: {v} != {c}"));
        }
    }
    if let Some(x) = v.as_f64() {
        if let Some(m) = obj.get("minimum").and_then(Value::as_f64) {
            if x < m {
                return Err(format!("{at}: {x} < {m}"));
            }
        }
        if let Some(m) = obj.get("maximum").and_then(Value::as_f64) {
            if x > m {
                return Err(format!("{at}: {x} > {m}"));
            }
        }
    }
    if let Some(map) = v.as_object() {
        if let Some(req) = obj.get("required").and_then(Value::as_array) {
            for r in req {
                let r = r.as_str().unwrap();
                if !map.contains_key(r) {
                    return Err(format!("{at}: missing required property {r}"));
                }
            }
        }
        let props = obj.get("properties").and_then(Value::as_object);
        for (k, val) in map {
            let sub = format!("{at}.{k}");
            match props.and_then(|p| p.get(k)) {
                Some(ps) => check(val, ps, root, &sub)?,
                None => {
                    if let Some(ap) = obj.get("additionalProperties") {
                        check(val, ap, root, &sub)?;
                    }
                }
            }
        }
    }
    if let Some(arr) = v.as_array() {
        if let Some(items) = obj.get("items") {
            for (i, x) in arr.iter().enumerate() {
                check(x, items, root, &format!("{at}[{i}]"))?;
            }
        }
        if let Some(n) = obj.get("minItems").and_then(Value::as_u64) {
            if (arr.len() as u64) < n {
                return Err(format!("{at}: fewer than {n} items"));
            }
        }
        if let Some(n) = obj.get("maxItems").and_then(Value::as_u64) {
            if arr.len() as u64 > n {
                return Err(format!("{at}: more than {n} items"));
            }
        }
    }
    if let Some(alts) = obj.get("oneOf").and_then(Value::as_array) {
        let n = alts
            .iter()
            .filter(|a| check(v, a, root, at).is_ok())
            .count();
        if n != 1 {
            return Err(format!("{at}: matches {n} oneOf alternatives"));
        }
    }
    if let Some(alts) = obj.get("anyOf").and_then(Value::as_array) {
        if !alts.iter().any(|a| check(v, a, root, at).is_ok()) {
            return Err(format!("{at}: matches no anyOf alternative"));
        }
    }
    Ok(())
}
