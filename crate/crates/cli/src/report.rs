//! Command reports: an ordered list of results rendered either as text
//! lines or as one JSON document. Every number that is a market quantity
//! stays an exact rational string; decimals never appear.

use std::collections::BTreeMap;

use conic_markets::market::{Claim, Market};
use conic_markets::pricing::{HedgingStrategy, PriceProcess};
use conic_markets::rational::{format_rational, Rational};
use serde_json::{json, Map, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NEGATIVE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Json,
}

pub struct Report {
    pub command: String,
    pub market: Option<Value>,
    pub items: Vec<(&'static str, Value)>,
    pub exit: i32,
    pub timing_ms: u128,
}

impl Report {
    pub fn new() -> Self {
        Report {
            command: String::new(),
            market: None,
            items: Vec::new(),
            exit: EXIT_OK,
            timing_ms: 0,
        }
    }

    pub fn push(&mut self, key: &'static str, value: Value) {
        self.items.push((key, value));
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => self.to_json(),
            Format::Text => self.to_text(),
        }
    }

    fn to_json(&self) -> String {
        let mut results = Map::new();
        for (k, v) in &self.items {
            results.insert((*k).to_string(), v.clone());
        }
        let mut doc = Map::new();
        doc.insert("command".into(), Value::String(self.command.clone()));
        doc.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        if let Some(m) = &self.market {
            doc.insert("market".into(), m.clone());
        }
        doc.insert("results".into(), Value::Object(results));
        doc.insert("exit_code".into(), json!(self.exit));
        doc.insert("timing_ms".into(), json!(self.timing_ms as u64));
        let mut out =
            serde_json::to_string_pretty(&Value::Object(doc)).expect("report serialization");
        out.push('\n');
        out
    }

    fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("command: {}\n", self.command));
        out.push_str(&format!("version: {}\n", env!("CARGO_PKG_VERSION")));
        if let Some(Value::Object(m)) = &self.market {
            let fields: Vec<String> = m
                .iter()
                .map(|(k, v)| format!("{k}={}", scalar_text(v)))
                .collect();
            out.push_str(&format!("market: {}\n", fields.join(" ")));
        }
        for (k, v) in &self.items {
            render_value(k, v, 0, &mut out);
        }
        out.push_str(&format!("timing_ms: {}\n", self.timing_ms));
        out.push_str(&format!("exit_code: {}\n", self.exit));
        out
    }
}

/// Drops the `/1` suffix on integer rationals for the text view; JSON keeps
/// the canonical `p/q`.
fn pretty(s: &str) -> String {
    if let Some(head) = s.strip_suffix("/1") {
        let digits = head.strip_prefix('-').unwrap_or(head);
        if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            return head.to_string();
        }
    }
    s.to_string()
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => pretty(s),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        Value::Null => "-".into(),
        _ => unreachable!("scalar_text on compound value"),
    }
}

fn is_scalar(v: &Value) -> bool {
    matches!(
        v,
        Value::String(_) | Value::Bool(_) | Value::Number(_) | Value::Null
    )
}

fn render_value(key: &str, v: &Value, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match v {
        Value::Array(items) if items.iter().all(is_scalar) => {
            let body: Vec<String> = items.iter().map(scalar_text).collect();
            out.push_str(&format!("{pad}{key}: ({})\n", body.join(", ")));
        }
        Value::Array(items) => {
            out.push_str(&format!("{pad}{key}:\n"));
            for (i, item) in items.iter().enumerate() {
                render_value(&format!("[{i}]"), item, indent + 1, out);
            }
        }
        Value::Object(map) => {
            out.push_str(&format!("{pad}{key}:\n"));
            for (k, item) in map {
                render_value(k, item, indent + 1, out);
            }
        }
        _ => out.push_str(&format!("{pad}{key}: {}\n", scalar_text(v))),
    }
}

// ---------------------------------------------------------------------------
// Value constructors for core types
// ---------------------------------------------------------------------------

pub fn rat(x: &Rational) -> Value {
    Value::String(format_rational(x))
}

pub fn rat_vec(v: &[Rational]) -> Value {
    Value::Array(v.iter().map(rat).collect())
}

pub fn node_map(m: &BTreeMap<usize, Vec<Rational>>) -> Value {
    let mut out = Map::new();
    for (node, v) in m {
        out.insert(format!("node {node}"), rat_vec(v));
    }
    Value::Object(out)
}

pub fn claim_value(c: &Claim) -> Value {
    node_map(&c.values)
}

pub fn process_value(z: &PriceProcess) -> Value {
    let mut out = Map::new();
    out.insert("values".into(), node_map(&z.values));
    if let Some(s) = &z.strict_slack {
        out.insert("strict_slack".into(), rat(s));
    }
    Value::Object(out)
}

pub fn strategy_value(s: &HedgingStrategy) -> Value {
    Value::Array(s.legs.iter().map(node_map).collect())
}

pub fn market_digest(market: &Market) -> Value {
    json!({
        "assets": market.dim,
        "horizon": market.tree.horizon,
        "nodes": market.tree.len(),
        "leaves": market.tree.num_leaves(),
    })
}
