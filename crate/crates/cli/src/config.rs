//! Simulation configs in TOML. Every key is a [`SimParams`] field; an array
//! in place of a value makes that key a sweep dimension, and a config
//! expands to the cross-product of all its dimensions.
//!
//! Fields that are lists already (`process_u`, `faults`,
//! `suspend_windows`) sweep over an array of lists:
//!
//! ```toml
//! epsilon_us = [6250, 400000]          # two values
//! suspend_windows = [100000]           # one value, a one-element list
//! process_u = [[4, 5], [5, 5]]         # two values
//! ```

use anyhow::{bail, Context, Result};
use pwc_sim::SimParams;
use serde::Deserialize;
use toml::{Table, Value};

const LIST_FIELDS: &[&str] = &["process_u", "faults", "suspend_windows"];

fn is_sweep(key: &str, v: &Value) -> bool {
    match v {
        Value::Array(a) if LIST_FIELDS.contains(&key) => matches!(a.first(), Some(Value::Array(_))),
        Value::Array(_) => true,
        _ => false,
    }
}

/// One table per point of the cross-product, last key varying fastest.
fn cross(table: &Table) -> Result<Vec<Table>> {
    let mut out = vec![Table::new()];
    for (key, v) in table {
        let choices: Vec<Value> = if is_sweep(key, v) {
            let a = v.as_array().expect("sweep is an array").clone();
            if a.is_empty() {
                bail!("{key}: empty sweep list");
            }
            a
        } else {
            vec![v.clone()]
        };
        out = out
            .into_iter()
            .flat_map(|t| {
                choices.iter().map(move |c| {
                    let mut t = t.clone();
                    t.insert(key.clone(), c.clone());
                    t
                })
            })
            .collect();
    }
    Ok(out)
}

/// Parses a config and expands its sweeps. Every point is validated.
pub fn expand(doc: &str) -> Result<Vec<SimParams>> {
    let table: Table = toml::from_str(doc).context("config is not valid TOML")?;
    cross(&table)?
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let p = SimParams::deserialize(Value::Table(t)).with_context(|| format!("config point {i}"))?;
            p.validate().with_context(|| format!("config point {i}"))?;
            Ok(p)
        })
        .collect()
}
