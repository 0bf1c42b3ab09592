//! Bundled configurations.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use phs_core::analysis::rows_of;
use phs_core::library;
use phs_core::model::PortHamiltonianSystem;
use serde_json::{json, Value};

use crate::error::{CliError, Result};

pub const NAMES: [&str; 3] = ["transmission_line", "wave_equation", "heat_equation"];

/// Parameter names and defaults for one example.
pub fn defaults(name: &str) -> Option<BTreeMap<String, f64>> {
    let pairs: &[(&str, f64)] = match name {
        "transmission_line" => &[("C", 1.0), ("L", 1.0), ("R", 0.5)],
        "wave_equation" => &[("rho", 1.0), ("T", 1.0), ("k", 0.5)],
        "heat_equation" => &[("alpha", 1.0), ("h", 1.0)],
        _ => return None,
    };
    Some(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
}

/// Parses `key=value` overrides.
pub fn parse_overrides(items: &[String]) -> Result<Vec<(String, f64)>> {
    items
        .iter()
        .map(|item| {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {item:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("--set {k}: not a number: {v:?}")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

/// Config document for `name` with parameter overrides applied.
pub fn example(name: &str, overrides: &[(String, f64)]) -> Result<Value> {
    let mut params = defaults(name).ok_or_else(|| {
        CliError::Usage(format!("unknown example {name:?}; available: {}", NAMES.join(", ")))
    })?;
    for (k, v) in overrides {
        match params.get_mut(k) {
            Some(slot) => *slot = *v,
            None => {
                let known: Vec<&str> = params.keys().map(String::as_str).collect();
                return Err(CliError::Usage(format!(
                    "example {name} has no parameter {k:?}; parameters: {}",
                    known.join(", ")
                )));
            }
        }
    }
    let p = |k: &str| params[k];
    let model = |e| CliError::from_model("parameters", e);
    let doc = match name {
        "transmission_line" => {
            let sys = library::transmission_line(p("C"), p("L"), p("R")).map_err(model)?;
            // Position coordinates (V(b), I(b), V(a), I(a)): V(a) = u, V(b) = R I(b), y = I(a).
            let rows = [[0.0, 0.0, 1.0, 0.0], [1.0, -p("R"), 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
            let mut doc = ph_document(name, &params, &sys, rows);
            doc["simulation"] = json!({
                "N": 64,
                "dt": 1.0 / 128.0,
                "T": 10.0,
                "u": { "type": "sine", "amplitude": [1.0], "omega": 2.0, "phase": 0.0 },
                "x0": { "type": "zero" },
            });
            doc
        }
        "wave_equation" => {
            let sys = library::wave_equation(p("rho"), p("T"), p("k")).map_err(model)?;
            // Position coordinates (w_t(b), T w_z(b), w_t(a), T w_z(a)): force input at b with
            // damper k, fixed end at a, velocity output at b.
            let rows = [[p("k"), 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [1.0, 0.0, 0.0, 0.0]];
            let mut doc = ph_document(name, &params, &sys, rows);
            // Released from rest in the shape w = sin(pi z / 2): state (rho w_t, w_z).
            let grid = nodes(32);
            let values: Vec<Vec<f64>> = grid.iter().map(|z| vec![0.0, 0.5 * PI * (0.5 * PI * z).cos()]).collect();
            doc["simulation"] = json!({
                "N": 64,
                "dt": 1.0 / 128.0,
                "T": 10.0,
                "u": { "type": "zero" },
                "x0": { "type": "samples", "grid": grid, "values": values },
            });
            doc
        }
        "heat_equation" => {
            let (alpha, h) = (p("alpha"), p("h"));
            for (k, v) in [("alpha", alpha), ("h", h)] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(CliError::config(format!("parameters.{k}"), format!("must be positive, got {v}")));
                }
            }
            let grid = nodes(64);
            let values: Vec<Vec<f64>> = grid.iter().map(|z| vec![(PI * z).sin()]).collect();
            json!({
                "kind": "heat",
                "name": name,
                "parameters": params,
                "domain": [0.0, 1.0],
                "alpha": { "constant": alpha },
                "h": { "constant": h },
                "boundary": { "type": "trace", "left": 0.0, "right": 0.0 },
                "simulation": {
                    "N": 64,
                    "dt": 1.0 / 1024.0,
                    "T": 0.25,
                    "x0": { "type": "samples", "grid": grid, "values": values },
                },
            })
        }
        _ => unreachable!("checked against defaults"),
    };
    Ok(doc)
}

fn nodes(cells: usize) -> Vec<f64> {
    (0..=cells).map(|i| i as f64 / cells as f64).collect()
}

/// Document for a library system; `rows` are the position-form `WB1, WB2, WC` rows the library
/// builds it from, kept literal so the file stays readable.
fn ph_document(
    name: &str,
    params: &BTreeMap<String, f64>,
    sys: &PortHamiltonianSystem,
    rows: [[f64; 4]; 3],
) -> Value {
    let h = sys.density().evaluate(sys.domain().a());
    json!({
        "kind": "port_hamiltonian",
        "name": name,
        "parameters": params,
        "n": sys.n(),
        "m": sys.m(),
        "domain": [sys.domain().a(), sys.domain().b()],
        "P1": rows_of(sys.matrices().p1()),
        "P0": rows_of(sys.matrices().p0()),
        "H": { "constant": rows_of(&h) },
        "boundary": {
            "form": "position",
            "WB1": [rows[0]],
            "WB2": [rows[1]],
            "WC": [rows[2]],
        },
    })
}
