//! JSON encoding of measures: `{"kind": "point" | "grid" | "layered", ...}`.
//!
//! Floats are written either as JSON numbers (shortest round-trip decimal)
//! or, with [`Encoding::Hex`], as `"0x"`-prefixed hex strings of their IEEE
//! bits. Both decode bit for bit; a document may mix the two.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::measures::{GridMeasure, LayeredMeasure, Measure, PointMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Encoding {
    Decimal,
    #[default]
    Hex,
}

/// A decoded document.
#[derive(Debug, Clone, PartialEq)]
pub enum Snapshot {
    Measure(Measure),
    Layered(LayeredMeasure),
}

impl Snapshot {
    /// The document as a layered measure; a plain measure becomes layer 1.
    pub fn into_layered(self) -> Result<LayeredMeasure> {
        match self {
            Snapshot::Measure(m) => LayeredMeasure::single(m),
            Snapshot::Layered(l) => Ok(l),
        }
    }
}

fn float(x: f64, enc: Encoding) -> Value {
    match enc {
        Encoding::Decimal => json!(x),
        Encoding::Hex => Value::String(format!("0x{:016x}", x.to_bits())),
    }
}

fn floats(xs: &[f64], enc: Encoding) -> Value {
    Value::Array(xs.iter().map(|&x| float(x, enc)).collect())
}

pub fn measure_to_json(m: &Measure, enc: Encoding) -> Value {
    match m {
        Measure::Point(p) => json!({
            "kind": "point",
            "dim": p.dim(),
            "positions": floats(p.positions(), enc),
            "weights": floats(p.weights(), enc),
        }),
        Measure::Grid(g) => json!({
            "kind": "grid",
            "origin": floats(g.origin(), enc),
            "spacing": float(g.spacing(), enc),
            "shape": g.shape(),
            "values": floats(g.values(), enc),
        }),
    }
}

pub fn layered_to_json(m: &LayeredMeasure, enc: Encoding) -> Value {
    let layers: Vec<Value> = m
        .layers()
        .map(|(k, l)| json!({"index": k, "measure": measure_to_json(l, enc)}))
        .collect();
    json!({"kind": "layered", "layers": layers})
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Serialization(msg.into())
}

fn read_float(v: &Value) -> Result<f64> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| bad("number out of range")),
        Value::String(s) => {
            let hex = s.strip_prefix("0x").ok_or_else(|| bad(format!("float string {s:?} lacks 0x prefix")))?;
            u64::from_str_radix(hex, 16)
                .map(f64::from_bits)
                .map_err(|_| bad(format!("bad hex float {s:?}")))
        }
        _ => Err(bad("expected a float")),
    }
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| bad(format!("missing key {key:?}")))
}

fn read_floats(v: &Value) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| bad("expected an array of floats"))?
        .iter()
        .map(read_float)
        .collect()
}

fn read_usize(v: &Value) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| bad("expected a nonnegative integer"))
}

fn read_measure(obj: &Map<String, Value>, kind: &str) -> Result<Measure> {
    match kind {
        "point" => {
            let dim = read_usize(field(obj, "dim")?)?;
            let positions = read_floats(field(obj, "positions")?)?;
            let weights = read_floats(field(obj, "weights")?)?;
            Ok(Measure::Point(PointMeasure::from_flat(dim, positions, weights)?))
        }
        "grid" => {
            let origin = read_floats(field(obj, "origin")?)?;
            let spacing = read_float(field(obj, "spacing")?)?;
            let shape = field(obj, "shape")?
                .as_array()
                .ok_or_else(|| bad("shape must be an array"))?
                .iter()
                .map(read_usize)
                .collect::<Result<Vec<_>>>()?;
            let values = read_floats(field(obj, "values")?)?;
            Ok(Measure::Grid(GridMeasure::new(origin, spacing, shape, values)?))
        }
        other => Err(bad(format!("unknown measure kind {other:?}"))),
    }
}

pub fn from_json(v: &Value) -> Result<Snapshot> {
    let obj = v.as_object().ok_or_else(|| bad("expected an object"))?;
    let kind = field(obj, "kind")?.as_str().ok_or_else(|| bad("kind must be a string"))?;
    if kind != "layered" {
        return read_measure(obj, kind).map(Snapshot::Measure);
    }
    let mut layers = BTreeMap::new();
    for entry in field(obj, "layers")?.as_array().ok_or_else(|| bad("layers must be an array"))? {
        let e = entry.as_object().ok_or_else(|| bad("layer entries must be objects"))?;
        let index = field(e, "index")?
            .as_u64()
            .and_then(|k| u32::try_from(k).ok())
            .ok_or_else(|| bad("layer index must be a 32-bit unsigned integer"))?;
        let m = field(e, "measure")?.as_object().ok_or_else(|| bad("layer measure must be an object"))?;
        let kind = field(m, "kind")?.as_str().ok_or_else(|| bad("kind must be a string"))?;
        if layers.insert(index, read_measure(m, kind)?).is_some() {
            return Err(bad(format!("duplicate layer index {index}")));
        }
    }
    Ok(Snapshot::Layered(LayeredMeasure::new(layers)?))
}

pub fn from_str(s: &str) -> Result<Snapshot> {
    let v: Value = serde_json::from_str(s).map_err(|e| bad(e.to_string()))?;
    from_json(&v)
}
