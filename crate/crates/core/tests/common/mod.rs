#![allow(dead_code)]

use serde_json::Value;

pub fn oracles() -> Value {
    let text = include_str!("../fixtures/oracles.json");
    serde_json::from_str(text).expect("fixture parses")
}

pub fn num(v: &Value, path: &str) -> f64 {
    let mut cur = v;
    for key in path.split('.') {
        cur = &cur[key];
    }
    cur.as_f64().unwrap_or_else(|| panic!("fixture field {path} missing"))
}

pub fn vec(v: &Value, path: &str) -> Vec<f64> {
    let mut cur = v;
    for key in path.split('.') {
        cur = &cur[key];
    }
    cur.as_array()
        .unwrap_or_else(|| panic!("fixture field {path} missing"))
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
