//! Policy and magnitude-table files.
//!
//! A policy file holds one key, `sub_policies`, an array of pairs of
//! `[kind, probability, magnitude]` triples:
//!
//! ```toml
//! sub_policies = [
//!     [["Invert", 0.1, 7], ["Contrast", 0.2, 6]],
//!     [["Rotate", 0.7, 2], ["TranslateX", 0.3, 9]],
//! ]
//! ```
//!
//! A magnitude table has one table per op kind with `low`, `high` and
//! `signed`. Kinds left out keep their default range.
//!
//! ```toml
//! [Rotate]
//! low = 0.0
//! high = 30.0
//! signed = true
//! ```

use std::fs;
use std::path::Path;

use refaug_core::augment::{MagnitudeRange, MagnitudeTable, OpKind, Policy, PolicyOp};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

fn bad(origin: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{origin}: {msg}"))
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

pub fn parse_policy(text: &str, magnitudes: MagnitudeTable, origin: &str) -> CliResult<Policy> {
    let table: Table = text.parse().map_err(|e| bad(origin, e))?;
    if let Some(k) = table.keys().find(|k| *k != "sub_policies") {
        return Err(bad(origin, format!("unknown key `{k}`")));
    }
    let list = table
        .get("sub_policies")
        .and_then(Value::as_array)
        .ok_or_else(|| bad(origin, "missing array `sub_policies`"))?;
    let mut subs = Vec::with_capacity(list.len());
    for (i, pair) in list.iter().enumerate() {
        let at = |j: usize| format!("sub_policies[{i}][{j}]");
        let pair = pair
            .as_array()
            .filter(|p| p.len() == 2)
            .ok_or_else(|| bad(origin, format!("sub_policies[{i}] must be a pair of ops")))?;
        let mut ops = [PolicyOp::new(OpKind::Invert, 0.0, 0)?; 2];
        for (j, triple) in pair.iter().enumerate() {
            let t = triple.as_array().filter(|t| t.len() == 3).ok_or_else(|| {
                bad(
                    origin,
                    format!("{} must be [kind, probability, magnitude]", at(j)),
                )
            })?;
            let kind: OpKind = t[0]
                .as_str()
                .ok_or_else(|| bad(origin, format!("{}: kind must be a string", at(j))))?
                .parse()
                .map_err(|e| bad(origin, format!("{}: {e}", at(j))))?;
            let p = number(&t[1])
                .ok_or_else(|| bad(origin, format!("{}: probability must be a number", at(j))))?;
            let m = t[2]
                .as_integer()
                .and_then(|m| u8::try_from(m).ok())
                .ok_or_else(|| {
                    bad(
                        origin,
                        format!("{}: magnitude must be an integer 0..=9", at(j)),
                    )
                })?;
            ops[j] =
                PolicyOp::new(kind, p, m).map_err(|e| bad(origin, format!("{}: {e}", at(j))))?;
        }
        subs.push(ops);
    }
    Policy::new(subs, magnitudes).map_err(|e| bad(origin, e))
}

pub fn parse_magnitudes(text: &str, origin: &str) -> CliResult<MagnitudeTable> {
    let table: Table = text.parse().map_err(|e| bad(origin, e))?;
    let mut out = MagnitudeTable::default();
    for (name, entry) in &table {
        let kind: OpKind = name.parse().map_err(|e| bad(origin, e))?;
        let entry = entry
            .as_table()
            .ok_or_else(|| bad(origin, format!("[{name}] must be a table")))?;
        if let Some(k) = entry
            .keys()
            .find(|k| !["low", "high", "signed"].contains(&k.as_str()))
        {
            return Err(bad(origin, format!("[{name}]: unknown key `{k}`")));
        }
        let num = |key: &str| {
            entry
                .get(key)
                .and_then(number)
                .ok_or_else(|| bad(origin, format!("[{name}]: `{key}` must be a number")))
        };
        let signed = match entry.get("signed") {
            None => false,
            Some(v) => v
                .as_bool()
                .ok_or_else(|| bad(origin, format!("[{name}]: `signed` must be a boolean")))?,
        };
        let range = MagnitudeRange {
            low: num("low")?,
            high: num("high")?,
            signed,
        };
        out.set(kind, range).map_err(|e| bad(origin, e))?;
    }
    Ok(out)
}

pub fn load_magnitudes(path: &Path) -> CliResult<MagnitudeTable> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_magnitudes(&text, &path.display().to_string())
}

pub fn load_policy(path: &Path, magnitudes: MagnitudeTable) -> CliResult<Policy> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_policy(&text, magnitudes, &path.display().to_string())
}

fn float(v: f64) -> String {
    // keep a decimal point so the value reads back as a float
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'E']) || !v.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}

pub fn policy_to_toml(policy: &Policy) -> String {
    let mut out = String::from("sub_policies = [\n");
    for [a, b] in policy.sub_policies() {
        let op = |o: &PolicyOp| {
            format!(
                "[\"{}\", {}, {}]",
                o.kind,
                float(o.probability),
                o.magnitude
            )
        };
        out.push_str(&format!("    [{}, {}],\n", op(a), op(b)));
    }
    out.push_str("]\n");
    out
}

pub fn magnitudes_to_toml(table: &MagnitudeTable) -> String {
    let mut out = String::new();
    for kind in OpKind::ALL {
        let r = table.get(kind);
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!(
            "[{kind}]\nlow = {}\nhigh = {}\nsigned = {}\n",
            float(r.low),
            float(r.high),
            r.signed
        ));
    }
    out
}
