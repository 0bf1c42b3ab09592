//! Command implementations. Each returns the process exit code on success.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use phs_core::analysis::{
    check_exponential_stability, check_generation, check_impedance_passive, check_riesz_basis,
    check_wellposedness, CertificateReport, Verdict,
};
use phs_core::model::PortHamiltonianSystem;
use phs_core::simulate::{simulate as run_simulation, simulate_heat_closure, SimulationTrace};
use phs_core::spectrum::{eigenfunction, find_eigenvalues, Region, SpectrumResult, TransferEvaluator};
use phs_core::{PhsError, Tolerances};
use serde_json::{json, Value};

use crate::config::{self, Config, LoadedConfig, SimulationConfig};
use crate::error::{CliError, Result};
use crate::examples;
use crate::report::{self, TraceTable};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAIL: i32 = 2;

pub const TOLERANCE_SCALE_VAR: &str = "PHS_LAB_TOLERANCE_SCALE";

pub const DEFAULT_MAX_EIGENVALUES: usize = 64;

/// Multiplier from `PHS_LAB_TOLERANCE_SCALE`; unset means 1.
pub fn tolerance_scale(raw: Option<&str>) -> Result<f64> {
    let Some(raw) = raw else { return Ok(1.0) };
    match raw.trim().parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(CliError::config(TOLERANCE_SCALE_VAR, format!("expected a positive number, got {raw:?}"))),
    }
}

/// Certificate that could not be evaluated becomes inconclusive, carrying the error.
fn or_inconclusive(name: &str, r: std::result::Result<CertificateReport, PhsError>) -> CertificateReport {
    r.unwrap_or_else(|e| CertificateReport {
        name: name.to_string(),
        verdict: Verdict::Inconclusive,
        witness: None,
        tolerances: Default::default(),
        notes: vec![format!("not evaluated: {e}")],
        sub_reports: Vec::new(),
    })
}

fn ph_certificates(sys: &PortHamiltonianSystem, tol: &Tolerances, full: bool) -> Vec<CertificateReport> {
    let mut out = vec![
        or_inconclusive("generation", check_generation(sys.boundary(), tol)),
        or_inconclusive("wellposedness", check_wellposedness(sys, tol)),
        or_inconclusive("impedance_passive", check_impedance_passive(sys.boundary(), tol)),
    ];
    if full {
        out.push(or_inconclusive("exponential_stability", check_exponential_stability(sys, tol)));
        let position = sys.position_boundary();
        out.push(or_inconclusive("riesz_basis", check_riesz_basis(sys, &position.wb(), tol)));
    }
    out
}

pub fn analyze(loaded: &LoadedConfig, scale: f64, out: Option<&Path>) -> Result<i32> {
    let tol = Tolerances::scaled(scale);
    let mut doc = report::envelope("analyze", loaded, scale, &tol);
    let certificates = match &loaded.config {
        Config::PortHamiltonian(c) => ph_certificates(&c.system()?, &tol, true),
        Config::Heat(c) => {
            doc.insert(
                "notes".into(),
                json!(["certificates apply to the lossless part with the closure e2 = alpha f2 treated as storage"]),
            );
            ph_certificates(&c.skeleton()?, &tol, false)
        }
    };
    let verdict = report::overall(&certificates);
    doc.insert("certificates".into(), serde_json::to_value(&certificates).expect("reports serialize"));
    doc.insert("verdict".into(), json!(verdict));
    report::emit(&report::to_json_text(&Value::Object(doc)), out)?;
    Ok(if verdict == Verdict::Fail { EXIT_FAIL } else { EXIT_OK })
}

/// Region bounds from the command line; unset bounds fall back to the config, then to the
/// default region of the system.
#[derive(Debug, Clone, Copy, Default)]
pub struct RegionFlags {
    pub re_min: Option<f64>,
    pub re_max: Option<f64>,
    pub im_min: Option<f64>,
    pub im_max: Option<f64>,
    pub max_count: Option<usize>,
}

pub fn spectrum(
    loaded: &LoadedConfig,
    scale: f64,
    flags: RegionFlags,
    out: Option<&Path>,
    eigenfunctions: Option<(&Path, usize)>,
) -> Result<i32> {
    let Config::PortHamiltonian(c) = &loaded.config else {
        return Err(CliError::Usage("spectrum needs a port_hamiltonian config".into()));
    };
    let tol = Tolerances::scaled(scale);
    let sys = c.system()?;
    let cfg = c.spectrum.clone().unwrap_or_default();
    let d = Region::default_for(&sys);
    let region = Region::new(
        flags.re_min.or(cfg.re_min).unwrap_or(d.re_min),
        flags.re_max.or(cfg.re_max).unwrap_or(d.re_max),
        flags.im_min.or(cfg.im_min).unwrap_or(d.im_min),
        flags.im_max.or(cfg.im_max).unwrap_or(d.im_max),
    )
    .map_err(|e| CliError::from_model("spectrum", e))?;
    let max_count = flags.max_count.or(cfg.max_count).unwrap_or(DEFAULT_MAX_EIGENVALUES);
    let ev = TransferEvaluator::new(&sys, &tol)?;
    let result = find_eigenvalues(&region, &ev, max_count)?;
    let mut doc = report::envelope("spectrum", loaded, scale, &tol);
    doc.insert("transfer_method".into(), json!(ev.method()));
    doc.insert("max_count".into(), json!(max_count));
    for (k, v) in spectrum_json(&result) {
        doc.insert(k, v);
    }
    if let Some((path, cells)) = eigenfunctions {
        write_eigenfunctions(path, &result, &ev, cells)?;
    }
    report::emit(&report::to_json_text(&Value::Object(doc)), out)?;
    Ok(EXIT_OK)
}

fn spectrum_json(result: &SpectrumResult) -> serde_json::Map<String, Value> {
    let eigenvalues: Vec<Value> = result
        .eigenvalues
        .iter()
        .map(|e| {
            json!({
                "re": e.value.re,
                "im": e.value.im,
                "multiplicity": e.multiplicity,
                "residual": e.residual,
                "relative_residual": e.relative_residual,
                "flagged": e.flagged,
            })
        })
        .collect();
    let mut m = serde_json::Map::new();
    m.insert("region".into(), json!(result.region));
    m.insert("count".into(), json!(result.count));
    m.insert("eigenvalues".into(), Value::Array(eigenvalues));
    m.insert("inconclusive".into(), json!(result.inconclusive));
    m
}

/// One row per eigenvalue and node: `index,lambda_re,lambda_im,z,phi_1_re,phi_1_im,...`.
fn write_eigenfunctions(path: &Path, result: &SpectrumResult, ev: &TransferEvaluator, cells: usize) -> Result<()> {
    let n = ev.system().n();
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut header = vec!["index".to_string(), "lambda_re".into(), "lambda_im".into(), "z".into()];
    for i in 1..=n {
        header.push(format!("phi_{i}_re"));
        header.push(format!("phi_{i}_im"));
    }
    let csv_err = |e: csv::Error| CliError::Usage(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(csv_err)?;
    for (k, e) in result.eigenvalues.iter().enumerate() {
        let ef = eigenfunction(e.value, ev, cells)?;
        for (z, phi) in ef.phi.grid().iter().zip(ef.phi.values()) {
            let mut row = vec![k.to_string(), format!("{:?}", e.value.re), format!("{:?}", e.value.im), format!("{z:?}")];
            for c in phi.iter() {
                row.push(format!("{:?}", c.re));
                row.push(format!("{:?}", c.im));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, Default)]
pub struct SimulateFlags {
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    pub cells: Option<usize>,
    pub trace: Option<PathBuf>,
    pub states: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

/// Runs the configured simulation; exit code 2 when the balance residual exceeds its threshold.
pub fn simulate(loaded: &LoadedConfig, scale: f64, flags: &SimulateFlags) -> Result<i32> {
    let tol = Tolerances::scaled(scale);
    let sim = loaded.config.simulation();
    let opts = SimulationConfig::options(sim, flags.t_end, flags.dt, flags.cells)?;
    let x0 = sim.map(|s| s.x0.clone()).unwrap_or_default();
    let (trace, components, layout): (SimulationTrace, usize, &str) = match &loaded.config {
        Config::PortHamiltonian(c) => {
            let sys = c.system()?;
            let x0 = x0.to_grid("simulation.x0", sys.domain(), c.n)?;
            let u = sim.map(|s| s.u.clone()).unwrap_or_default();
            let m = c.m;
            let input = move |t: f64| -> DVector<f64> { u.eval(t, m) };
            (run_simulation(&sys, &x0, &input, &opts, &tol)?, c.n, "node")
        }
        Config::Heat(c) => {
            let problem = c.problem()?;
            let x0 = x0.to_grid("simulation.x0", problem.domain(), 1)?;
            (simulate_heat_closure(&problem, &x0, &opts, &tol)?, 1, "cell")
        }
    };
    let table = TraceTable::from_trace(&trace);
    let summary = table.summary(trace.threshold);
    if let Some(path) = &flags.trace {
        table.write_csv(path)?;
    }
    if let Some(path) = &flags.states {
        let states = report::states_json(&trace, components, layout);
        report::emit(&report::to_json_text(&states), Some(path))?;
    }
    let mut doc = report::envelope("simulate", loaded, scale, &tol);
    doc.insert("dt".into(), json!(opts.dt));
    doc.insert("N".into(), json!(opts.cells));
    doc.insert("T".into(), json!(opts.t_end));
    doc.insert("max_balance_residual_time".into(), json!(trace.max_residual_time()));
    doc.insert("max_balance_residual_space".into(), json!(trace.max_residual_space()));
    doc.insert("summary".into(), serde_json::to_value(&summary).expect("summary serializes"));
    report::emit(&report::to_json_text(&Value::Object(doc)), flags.summary.as_deref())?;
    Ok(if summary.balance_within_threshold { EXIT_OK } else { EXIT_FAIL })
}

/// Without a name, lists the examples; with one, writes `<dir>/<name>.json`.
pub fn examples(name: Option<&str>, dir: &Path, set: &[String]) -> Result<i32> {
    let Some(name) = name else {
        let mut text = examples::NAMES.join("\n");
        text.push('\n');
        report::emit(&text, None)?;
        return Ok(EXIT_OK);
    };
    let overrides = examples::parse_overrides(set)?;
    let doc = examples::example(name, &overrides)?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(format!("{name}.json"));
    report::emit(&report::to_json_text(&doc), Some(&path))?;
    report::emit(&format!("{}\n", path.display()), None)?;
    Ok(EXIT_OK)
}

pub fn load(path: &Path) -> Result<LoadedConfig> {
    config::load(path)
}
