//! Instance, mechanism and solution files.
//!
//! Instance layout:
//!
//! ```json
//! {"n": 2, "m": 1, "symmetric": true, "valuation": {"class": "unit_demand"},
//!  "marginals": [[{"kind": "discrete", "support": [1, 2], "probs": [0.5, 0.5]}],
//!                [{"kind": "parametric", "family": "uniform", "params": {"lo": 0, "hi": 1}}]]}
//! ```
//!
//! Structured cells use `{"kind": "signals", "atoms": [...], "probs": [...]}` where an atom
//! is a number, a clause array (XOS) or `{"index": k}` (subadditive tables).

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::dist::{Cell, Discrete, Family, Marginal, ProductPrior, Signal};
use crate::error::{Error, Result};
use crate::valuation::Valuation;

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub prior: ProductPrior,
    pub valuation: Valuation,
}

fn perr(path: &str, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.into(),
        reason: reason.into(),
    }
}

fn field<'a>(obj: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| perr(&format!("{path}.{key}"), "missing field"))
}

fn number(v: &Value, path: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| perr(path, format!("expected a number, found {v}")))
}

fn numbers(v: &Value, path: &str) -> Result<Vec<f64>> {
    let arr = v.as_array().ok_or_else(|| perr(path, "expected an array of numbers"))?;
    arr.iter().enumerate().map(|(k, x)| number(x, &format!("{path}[{k}]"))).collect()
}

fn count(obj: &Map<String, Value>, key: &str) -> Result<usize> {
    let v = field(obj, "$", key)?;
    v.as_u64()
        .filter(|&x| x > 0)
        .map(|x| x as usize)
        .ok_or_else(|| perr(&format!("$.{key}"), format!("expected a positive integer, found {v}")))
}

/// Re-roots a distribution error under `path`.
fn at(path: &str, e: Error) -> Error {
    match e {
        Error::InvalidDistribution { reason, .. } => perr(path, reason),
        other => perr(path, other.to_string()),
    }
}

fn parse_signal(v: &Value, path: &str) -> Result<Signal> {
    if let Some(x) = v.as_f64() {
        return Ok(Signal::Value(x));
    }
    if v.is_array() {
        return Ok(Signal::Clauses(numbers(v, path)?));
    }
    if let Some(k) = v.get("index").and_then(Value::as_u64) {
        return Ok(Signal::Index { index: k as usize });
    }
    Err(perr(path, "atom must be a number, a clause array or {\"index\": k}"))
}

fn parse_cell(v: &Value, path: &str) -> Result<Cell> {
    let obj = v.as_object().ok_or_else(|| perr(path, "expected an object"))?;
    let kind = field(obj, path, "kind")?
        .as_str()
        .ok_or_else(|| perr(&format!("{path}.kind"), "expected a string"))?;
    match kind {
        "discrete" => {
            let support = numbers(field(obj, path, "support")?, &format!("{path}.support"))?;
            let probs = numbers(field(obj, path, "probs")?, &format!("{path}.probs"))?;
            if support.len() != probs.len() {
                return Err(perr(
                    &format!("{path}.probs"),
                    format!("{} probabilities for {} support points", probs.len(), support.len()),
                ));
            }
            let d = Discrete::new(support, probs).map_err(|e| at(&format!("{path}.probs"), e))?;
            Ok(Cell::Scalar(Marginal::Discrete(d)))
        }
        "parametric" => {
            let family = field(obj, path, "family")?
                .as_str()
                .ok_or_else(|| perr(&format!("{path}.family"), "expected a string"))?;
            let ppath = format!("{path}.params");
            let params = field(obj, path, "params")?
                .as_object()
                .ok_or_else(|| perr(&ppath, "expected an object"))?;
            let get = |k: &str| -> Result<f64> { number(field(params, &ppath, k)?, &format!("{ppath}.{k}")) };
            let fam = match family {
                "uniform" => Family::Uniform {
                    lo: get("lo")?,
                    hi: get("hi")?,
                },
                "truncated_exponential" => Family::TruncatedExponential {
                    rate: get("rate")?,
                    cap: get("cap")?,
                },
                "equal_revenue" => Family::EqualRevenue { cap: get("cap")? },
                other => return Err(perr(&format!("{path}.family"), format!("unknown family {other:?}"))),
            };
            let mut mg = Marginal::parametric(fam).map_err(|e| at(&ppath, e))?;
            if let Some(c) = params.get("truncate") {
                mg = crate::dist::truncate(&mg, number(c, &format!("{ppath}.truncate"))?).map_err(|e| at(&ppath, e))?;
            }
            Ok(Cell::Scalar(mg))
        }
        "signals" => {
            let apath = format!("{path}.atoms");
            let atoms = field(obj, path, "atoms")?
                .as_array()
                .ok_or_else(|| perr(&apath, "expected an array"))?
                .iter()
                .enumerate()
                .map(|(k, a)| parse_signal(a, &format!("{apath}[{k}]")))
                .collect::<Result<Vec<_>>>()?;
            let probs = numbers(field(obj, path, "probs")?, &format!("{path}.probs"))?;
            Cell::atoms_checked(atoms, probs).map_err(|e| at(&format!("{path}.probs"), e))
        }
        other => Err(perr(&format!("{path}.kind"), format!("unknown kind {other:?}"))),
    }
}

/// Parses an instance document; errors name the offending field path.
pub fn parse_instance(text: &str) -> Result<Instance> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| perr(&format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    let obj = root.as_object().ok_or_else(|| perr("$", "expected an object"))?;
    let n = count(obj, "n")?;
    let m = count(obj, "m")?;
    let symmetric = obj.get("symmetric").and_then(Value::as_bool).unwrap_or(false);
    let valuation = match obj.get("valuation") {
        None => Valuation::Additive,
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| perr("$.valuation", e.to_string()))?,
    };
    valuation.validate(m).map_err(|e| perr("$.valuation", e.to_string()))?;
    let rows = field(obj, "$", "marginals")?
        .as_array()
        .ok_or_else(|| perr("$.marginals", "expected an array of rows"))?;
    if rows.len() != n {
        return Err(perr("$.marginals", format!("{} rows for n = {n}", rows.len())));
    }
    let mut cells = Vec::with_capacity(n);
    for (i, r) in rows.iter().enumerate() {
        let rp = format!("$.marginals[{i}]");
        let r = r.as_array().ok_or_else(|| perr(&rp, "expected an array of cells"))?;
        if r.len() != m {
            return Err(perr(&rp, format!("{} cells for m = {m}", r.len())));
        }
        cells.push(
            r.iter()
                .enumerate()
                .map(|(j, c)| parse_cell(c, &format!("{rp}[{j}]")))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let prior = ProductPrior::new(cells, symmetric).map_err(|e| match e {
        Error::InvalidDistribution { path, reason } => perr(&format!("$.{path}"), reason),
        other => other,
    })?;
    Ok(Instance { prior, valuation })
}

fn signal_json(s: &Signal) -> Value {
    match s {
        Signal::Value(v) => json!(v),
        Signal::Clauses(c) => json!(c),
        Signal::Index { index } => json!({ "index": index }),
    }
}

fn cell_json(c: &Cell) -> Value {
    match c {
        Cell::Scalar(Marginal::Discrete(d)) => json!({"kind": "discrete", "support": d.support(), "probs": d.probs()}),
        Cell::Scalar(Marginal::Parametric { family, cap }) => {
            let (name, mut params) = match *family {
                Family::Uniform { lo, hi } => ("uniform", json!({"lo": lo, "hi": hi})),
                Family::TruncatedExponential { rate, cap } => ("truncated_exponential", json!({"rate": rate, "cap": cap})),
                Family::EqualRevenue { cap } => ("equal_revenue", json!({ "cap": cap })),
            };
            if let Some(c) = cap {
                params["truncate"] = json!(c);
            }
            json!({"kind": "parametric", "family": name, "params": params})
        }
        Cell::Atoms { atoms, probs } => {
            json!({"kind": "signals", "atoms": atoms.iter().map(signal_json).collect::<Vec<_>>(), "probs": probs})
        }
    }
}

pub fn instance_to_json(inst: &Instance) -> Value {
    json!({
        "n": inst.prior.n,
        "m": inst.prior.m,
        "symmetric": inst.prior.symmetric,
        "valuation": serde_json::to_value(&inst.valuation).expect("valuations serialize"),
        "marginals": inst.prior.cells.iter().map(|r| r.iter().map(cell_json).collect::<Vec<_>>()).collect::<Vec<_>>(),
    })
}

pub fn write_instance(inst: &Instance) -> String {
    serde_json::to_string_pretty(&instance_to_json(inst)).expect("json values serialize")
}

/// Generic typed load with the serde path in the diagnostic.
pub fn parse_typed<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| perr(&format!("{what} line {} column {}", e.line(), e.column()), e.to_string()))
}

pub fn to_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("artifacts serialize")
}
