//! wasm-bindgen surface for the browser demo. Three operations, all
//! string-in / string-out so the page stays a single static file:
//! generate demo data, fit one degree, and sweep degrees with BIC scoring.
//!
//! Build with `wasm-pack build --target web crates/maxent-wasm` (or
//! `cargo build --target wasm32-unknown-unknown` plus `wasm-bindgen`);
//! the page in `www/` loads the generated module.

use wasm_bindgen::prelude::*;

mod demo;

/// CSV text with `n` draws from a named 1D demo distribution
/// ("uniform", "normal", "bimodal", "skewed"), deterministic in `seed`.
#[wasm_bindgen]
pub fn sample_csv(kind: &str, n: u32, seed: u32) -> Result<String, JsValue> {
    demo::sample_csv(kind, n, seed).map_err(|e| JsValue::from_str(&e))
}

/// Fit one maximum degree to one-column CSV data and return a JSON string
/// with the fitted curve, a data histogram, and solver diagnostics.
/// `pad_fraction` pads the data range on each side to form the support;
/// `nodes = 0` and small `curve_points` fall back to defaults.
#[wasm_bindgen]
pub fn fit_density(
    csv: &str,
    degree: u32,
    pad_fraction: f64,
    nodes: u32,
    curve_points: u32,
) -> Result<String, JsValue> {
    demo::fit_density(csv, degree, pad_fraction, nodes, curve_points)
        .map_err(|e| JsValue::from_str(&e))
}

/// Fit every degree in a comma-separated list, score by BIC evidence, and
/// return per-degree results plus the selected fit's curve as JSON.
#[wasm_bindgen]
pub fn sweep_select(
    csv: &str,
    degrees: &str,
    pad_fraction: f64,
    nodes: u32,
    curve_points: u32,
) -> Result<String, JsValue> {
    demo::sweep_select(csv, degrees, pad_fraction, nodes, curve_points)
        .map_err(|e| JsValue::from_str(&e))
}
