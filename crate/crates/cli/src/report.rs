//! Machine-readable outputs: JSON reports, trace CSV files and state sidecars.
//!
//! JSON objects are `serde_json::Map`s, which keep keys sorted; floats use the shortest
//! representation that parses back to the same value.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use phs_core::analysis::{CertificateReport, Verdict};
use phs_core::simulate::SimulationTrace;
use phs_core::Tolerances;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::LoadedConfig;
use crate::error::{CliError, Result};

pub const TOOL_NAME: &str = "phs-lab";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fields shared by every report.
pub fn envelope(command: &str, loaded: &LoadedConfig, scale: f64, tol: &Tolerances) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("tool".into(), json!({ "name": TOOL_NAME, "version": TOOL_VERSION }));
    m.insert("command".into(), json!(command));
    m.insert("config_digest".into(), json!(loaded.digest));
    m.insert("kind".into(), json!(loaded.config.kind()));
    m.insert("name".into(), json!(loaded.config.name()));
    m.insert("parameters".into(), json!(loaded.config.parameters()));
    m.insert("tolerance_scale".into(), json!(scale));
    m.insert("tolerances".into(), serde_json::to_value(tol).expect("tolerances serialize"));
    m
}

/// Worst verdict among top-level certificates: any fail, else any inconclusive, else pass.
pub fn overall(reports: &[CertificateReport]) -> Verdict {
    if reports.iter().any(|r| r.verdict == Verdict::Fail) {
        Verdict::Fail
    } else if reports.iter().any(|r| r.verdict == Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    }
}

pub fn to_json_text(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values serialize");
    s.push('\n');
    s
}

/// Writes to `out`, or to stdout when `out` is `None`.
pub fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

/// Columns of a trace file. Everything the summary needs is here, so a summary rebuilt
/// from a written trace matches the one printed by the simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    pub flows: Vec<DVector<f64>>,
    pub efforts: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub residuals: Vec<f64>,
    pub inputs: Vec<DVector<f64>>,
}

impl TraceTable {
    pub fn from_trace(tr: &SimulationTrace) -> Self {
        TraceTable {
            times: tr.times.clone(),
            energies: tr.energies.clone(),
            flows: tr.flows.clone(),
            efforts: tr.efforts.clone(),
            outputs: tr.outputs.clone(),
            residuals: tr.residuals.clone(),
            inputs: tr.inputs.clone(),
        }
    }

    fn dims(&self) -> (usize, usize) {
        let n = self.flows.first().map_or(0, |v| v.len());
        let m = self.outputs.first().map_or(0, |v| v.len());
        (n, m)
    }

    pub fn header(&self) -> Vec<String> {
        let (n, m) = self.dims();
        trace_header(n, m)
    }

    /// Header `t,H,f_del_1..n,e_del_1..n,y_1..m,balance_residual,u_1..m`, one row per time.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(self.header()).map_err(|e| csv_error(path, e))?;
        for k in 0..self.times.len() {
            let mut row = vec![fmt(self.times[k]), fmt(self.energies[k])];
            row.extend(self.flows[k].iter().map(|v| fmt(*v)));
            row.extend(self.efforts[k].iter().map(|v| fmt(*v)));
            row.extend(self.outputs[k].iter().map(|v| fmt(*v)));
            row.push(fmt(self.residuals[k]));
            row.extend(self.inputs[k].iter().map(|v| fmt(*v)));
            w.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header: Vec<String> = r.headers().map_err(|e| csv_error(path, e))?.iter().map(String::from).collect();
        let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
        let (n, m) = (count("f_del_"), count("y_"));
        let mut t = TraceTable {
            times: Vec::new(),
            energies: Vec::new(),
            flows: Vec::new(),
            efforts: Vec::new(),
            outputs: Vec::new(),
            residuals: Vec::new(),
            inputs: Vec::new(),
        };
        if header != trace_header(n, m) {
            return Err(CliError::Usage(format!("{}: unexpected trace header", path.display())));
        }
        for record in r.records() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let v: Vec<f64> = record
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let slice = |from: usize, len: usize| DVector::from_column_slice(&v[from..from + len]);
            t.times.push(v[0]);
            t.energies.push(v[1]);
            t.flows.push(slice(2, n));
            t.efforts.push(slice(2 + n, n));
            t.outputs.push(slice(2 + 2 * n, m));
            t.residuals.push(v[2 + 2 * n + m]);
            t.inputs.push(slice(3 + 2 * n + m, m));
        }
        Ok(t)
    }

    /// Trapezoid rule for `int |v(t)|^2 dt`.
    fn integral_sq(&self, v: &[DVector<f64>]) -> f64 {
        self.times
            .windows(2)
            .zip(v.windows(2))
            .map(|(t, w)| 0.5 * (t[1] - t[0]) * (w[0].norm_squared() + w[1].norm_squared()))
            .sum()
    }

    pub fn summary(&self, threshold: f64) -> TraceSummary {
        let initial = self.energies[0];
        let last = *self.energies.last().expect("nonempty trace");
        let max_residual = self.residuals.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
        let num = last + self.integral_sq(&self.outputs);
        let den = initial + self.integral_sq(&self.inputs);
        let t_end = *self.times.last().expect("nonempty trace");
        TraceSummary {
            steps: self.times.len() - 1,
            t_end,
            initial_energy: initial,
            final_energy: last,
            max_energy: self.energies.iter().fold(f64::NEG_INFINITY, |m, e| m.max(*e)),
            energy_nonincreasing: self.energies.windows(2).all(|w| w[1] <= w[0]),
            max_balance_residual: max_residual,
            threshold,
            balance_within_threshold: max_residual <= threshold,
            well_posedness_ratio: (den > 0.0).then(|| num / den),
            log_energy_slope: self.log_energy_slope(0.5 * t_end, t_end),
        }
    }

    fn log_energy_slope(&self, from: f64, to: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .times
            .iter()
            .zip(&self.energies)
            .filter(|(t, e)| **t >= from && **t <= to && **e > 0.0)
            .map(|(t, e)| (*t, e.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let k = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let me = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let cov: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - me)).sum();
        let var: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        (var > 0.0).then(|| cov / var)
    }
}

/// Numbers reported by `simulate`, all computable from the trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub steps: usize,
    pub t_end: f64,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub max_energy: f64,
    pub energy_nonincreasing: bool,
    /// `max |dH/dt - average supplied power|` over steps.
    pub max_balance_residual: f64,
    pub threshold: f64,
    pub balance_within_threshold: bool,
    /// `(H(T) + int |y|^2) / (H(0) + int |u|^2)`; null when the denominator vanishes.
    pub well_posedness_ratio: Option<f64>,
    /// Least-squares slope of `ln H` over the second half of the run.
    pub log_energy_slope: Option<f64>,
}

/// Nodal (or cell) state snapshots keyed by step index.
pub fn states_json(tr: &SimulationTrace, components: usize, layout: &str) -> Value {
    let mut states = Map::new();
    for (k, x) in tr.states.iter().enumerate() {
        let rows: Vec<Vec<f64>> = x.as_slice().chunks(components).map(|c| c.to_vec()).collect();
        states.insert(k.to_string(), json!(rows));
    }
    json!({
        "layout": layout,
        "grid": tr.grid,
        "components": components,
        "times": tr.times,
        "states": states,
    })
}

pub fn trace_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "H".to_string()];
    h.extend((1..=n).map(|i| format!("f_del_{i}")));
    h.extend((1..=n).map(|i| format!("e_del_{i}")));
    h.extend((1..=m).map(|i| format!("y_{i}")));
    h.push("balance_residual".into());
    h.extend((1..=m).map(|i| format!("u_{i}")));
    h
}

fn fmt(v: f64) -> String {
    // Debug formatting is the shortest string that parses back to the same f64.
    format!("{v:?}")
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}
