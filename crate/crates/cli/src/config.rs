//! JSON system descriptions.
//!
//! A document is tagged by `kind`: `port_hamiltonian` describes `dx/dt = P1 d/dz (H x) + P0 H x`
//! with boundary rows, `heat` describes the heat equation with its resistive closure. Matrices
//! are row-major arrays of rows.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use phs_core::model::{
    BoundaryForm, BoundaryStructure, GridFunction, HamiltonianDensity, Layout, PortHamiltonianSystem,
    SpatialDomain, StructureMatrices,
};
use phs_core::simulate::{HeatBoundary, HeatProblem, SimulationOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub enum Config {
    PortHamiltonian(PhConfig),
    Heat(HeatConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhConfig {
    pub kind: String,
    #[serde(default)]
    pub name: Option<String>,
    /// Informational only; echoed into reports.
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    pub n: usize,
    pub m: usize,
    pub domain: [f64; 2],
    #[serde(rename = "P1")]
    pub p1: Rows,
    #[serde(rename = "P0", default)]
    pub p0: Option<Rows>,
    #[serde(rename = "H")]
    pub h: MatrixField,
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub spectrum: Option<SpectrumConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixField {
    Constant(Rows),
    /// `breakpoints` has one more entry than `matrices`.
    Piecewise { breakpoints: Vec<f64>, matrices: Vec<Rows> },
    /// Linear interpolation between `matrices[i]` at `grid[i]`.
    Samples { grid: Vec<f64>, matrices: Vec<Rows> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub form: BoundaryForm,
    #[serde(rename = "WB1", default)]
    pub wb1: Rows,
    #[serde(rename = "WB2", default)]
    pub wb2: Rows,
    #[serde(rename = "WC", default)]
    pub wc: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(rename = "N")]
    pub cells: Option<usize>,
    pub dt: Option<f64>,
    #[serde(rename = "T")]
    pub t_end: Option<f64>,
    #[serde(default)]
    pub u: Signal,
    #[serde(default)]
    pub x0: InitialState,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Signal {
    #[default]
    Zero,
    Constant { value: Vec<f64> },
    /// `amplitude * sin(omega t + phase)`, componentwise amplitudes.
    Sine {
        amplitude: Vec<f64>,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Piecewise linear in time, held constant outside `[times[0], times[last]]`.
    Samples { times: Vec<f64>, values: Rows },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    #[default]
    Zero,
    Constant { value: Vec<f64> },
    /// Nodal samples; the simulator interpolates onto its own grid.
    Samples { grid: Vec<f64>, values: Rows },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub re_min: Option<f64>,
    pub re_max: Option<f64>,
    pub im_min: Option<f64>,
    pub im_max: Option<f64>,
    pub max_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatConfig {
    pub kind: String,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    pub domain: [f64; 2],
    pub alpha: ScalarField,
    pub h: ScalarField,
    pub boundary: HeatBoundary,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarField {
    Constant(f64),
    Piecewise { breakpoints: Vec<f64>, values: Vec<f64> },
    Samples { grid: Vec<f64>, values: Vec<f64> },
}

/// Parsed document together with the digest of its raw bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: Config,
    /// `sha256:` followed by the lowercase hex digest.
    pub digest: String,
}

pub fn load(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let config = parse(&text)?;
    Ok(LoadedConfig {
        config,
        digest: digest(text.as_bytes()),
    })
}

pub fn digest(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

/// Parses and validates a document. Errors carry the JSON path of the offending field.
pub fn parse(text: &str) -> Result<Config> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::config("<document>", e.to_string()))?;
    let kind = match value.get("kind") {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(_) => return Err(CliError::config("kind", "must be a string")),
        None if value.is_object() => {
            return Err(CliError::config("kind", "missing; expected port_hamiltonian or heat"))
        }
        None => return Err(CliError::config("<document>", "expected a JSON object")),
    };
    let config = match kind.as_str() {
        "port_hamiltonian" => Config::PortHamiltonian(typed(text)?),
        "heat" => Config::Heat(typed(text)?),
        other => {
            return Err(CliError::config(
                "kind",
                format!("unknown kind {other:?}; expected port_hamiltonian or heat"),
            ))
        }
    };
    validate(&config)?;
    Ok(config)
}

fn typed<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(if path == "." { "<document>".into() } else { path }, e.into_inner().to_string())
    })
}

fn validate(config: &Config) -> Result<()> {
    match config {
        Config::PortHamiltonian(c) => {
            let sys = c.system()?;
            if let Some(sim) = &c.simulation {
                sim.u.check("simulation.u", c.m)?;
                sim.x0.to_grid("simulation.x0", sys.domain(), c.n)?;
            }
        }
        Config::Heat(c) => {
            c.problem()?;
            if let Some(sim) = &c.simulation {
                if sim.u != Signal::Zero {
                    return Err(CliError::config(
                        "simulation.u",
                        "heat configs take their boundary data from boundary; u must be zero",
                    ));
                }
                sim.x0.to_grid("simulation.x0", &c.domain()?, 1)?;
            }
        }
    }
    Ok(())
}

pub fn matrix(field: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(CliError::config(field, format!("expected {nrows} rows, found {}", rows.len())));
    }
    let mut m = DMatrix::zeros(nrows, ncols);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(CliError::config(
                format!("{field}[{i}]"),
                format!("expected {ncols} entries, found {}", row.len()),
            ));
        }
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(CliError::config(format!("{field}[{i}][{j}]"), "must be finite"));
            }
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

fn domain_of(d: [f64; 2]) -> Result<SpatialDomain> {
    SpatialDomain::new(d[0], d[1]).map_err(|e| CliError::from_model("domain", e).at("domain"))
}

impl CliError {
    /// Replaces the path of a config error.
    fn at(self, path: &str) -> Self {
        match self {
            CliError::Config { message, .. } => CliError::config(path, message),
            other => other,
        }
    }
}

impl PhConfig {
    pub fn system(&self) -> Result<PortHamiltonianSystem> {
        let (n, m) = (self.n, self.m);
        if n == 0 {
            return Err(CliError::config("n", "must be positive"));
        }
        if m > n {
            return Err(CliError::config("m", format!("must not exceed n = {n}")));
        }
        let domain = domain_of(self.domain)?;
        let p1 = matrix("P1", &self.p1, n, n)?;
        let p0 = match &self.p0 {
            Some(rows) => matrix("P0", rows, n, n)?,
            None => DMatrix::zeros(n, n),
        };
        let structure = StructureMatrices::new(p1, p0).map_err(|e| CliError::from_model("", e))?;
        let density = self.h.density(n)?;
        let b = &self.boundary;
        let boundary = BoundaryStructure::new(
            matrix("boundary.WB1", &b.wb1, m, 2 * n)?,
            matrix("boundary.WB2", &b.wb2, n - m, 2 * n)?,
            matrix("boundary.WC", &b.wc, m, 2 * n)?,
            b.form,
        )
        .map_err(|e| CliError::from_model("boundary", e))?;
        PortHamiltonianSystem::new(domain, structure, density, boundary)
            .map_err(|e| CliError::from_model("", e))
    }
}

impl MatrixField {
    fn density(&self, n: usize) -> Result<HamiltonianDensity> {
        let all = |field: &str, ms: &[Rows]| -> Result<Vec<DMatrix<f64>>> {
            ms.iter()
                .enumerate()
                .map(|(i, rows)| matrix(&format!("{field}[{i}]"), rows, n, n))
                .collect()
        };
        let density = match self {
            MatrixField::Constant(rows) => HamiltonianDensity::constant(matrix("H.constant", rows, n, n)?),
            MatrixField::Piecewise { breakpoints, matrices } => {
                HamiltonianDensity::piecewise(breakpoints.clone(), all("H.piecewise.matrices", matrices)?)
            }
            MatrixField::Samples { grid, matrices } => {
                HamiltonianDensity::sampled(grid.clone(), all("H.samples.matrices", matrices)?)
            }
        };
        density.map_err(|e| match e {
            phs_core::PhsError::InvalidInput { field, reason } if field.starts_with('H') => {
                CliError::config(field, reason)
            }
            other => CliError::from_model("H", other),
        })
    }
}

impl ScalarField {
    fn density(&self, field: &str) -> Result<HamiltonianDensity> {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        let density = match self {
            ScalarField::Constant(v) => HamiltonianDensity::constant(one(*v)),
            ScalarField::Piecewise { breakpoints, values } => {
                HamiltonianDensity::piecewise(breakpoints.clone(), values.iter().map(|v| one(*v)).collect())
            }
            ScalarField::Samples { grid, values } => {
                HamiltonianDensity::sampled(grid.clone(), values.iter().map(|v| one(*v)).collect())
            }
        };
        density.map_err(|e| match e {
            phs_core::PhsError::InvalidInput { reason, .. } => CliError::config(field, reason),
            other => CliError::from_model(field, other),
        })
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self {
            ScalarField::Constant(v) => Some(*v),
            _ => None,
        }
    }
}

impl HeatConfig {
    pub fn domain(&self) -> Result<SpatialDomain> {
        domain_of(self.domain)
    }

    pub fn problem(&self) -> Result<HeatProblem> {
        HeatProblem::new(
            self.domain()?,
            self.alpha.density("alpha")?,
            self.h.density("h")?,
            self.boundary,
        )
        .map_err(|e| CliError::from_model("", e))
    }

    /// Lossless part with the closure `e2 = alpha f2` treated as storage: `H = diag(h, 1/alpha)`
    /// with state `(x, f2 / alpha)`. Insulated ends give two homogeneous rows; prescribed
    /// traces become inputs `u = (e1(b), e1(a))` with outputs `y = (e2(b), -e2(a))`.
    pub fn skeleton(&self) -> Result<PortHamiltonianSystem> {
        let domain = self.domain()?;
        let alpha = self.alpha.density("alpha")?;
        let h = self.h.density("h")?;
        let at = |z: f64| {
            DMatrix::from_row_slice(2, 2, &[h.evaluate(z)[(0, 0)], 0.0, 0.0, 1.0 / alpha.evaluate(z)[(0, 0)]])
        };
        let density = match (self.alpha.constant_value(), self.h.constant_value()) {
            (Some(_), Some(_)) => HamiltonianDensity::constant(at(domain.a())),
            _ => {
                let grid = domain.uniform_nodes(256);
                let ms = grid.iter().map(|&z| at(z)).collect();
                HamiltonianDensity::sampled(grid, ms)
            }
        }
        .map_err(|e| CliError::from_model("", e))?;
        let structure = StructureMatrices::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            DMatrix::zeros(2, 2),
        )?;
        // Position coordinates (e1(b), e2(b), e1(a), e2(a)).
        let row = |v: [f64; 4]| DMatrix::from_row_slice(1, 4, &v);
        let stack = |a: DMatrix<f64>, b: DMatrix<f64>| {
            DMatrix::from_fn(2, 4, |i, j| if i == 0 { a[(0, j)] } else { b[(0, j)] })
        };
        let boundary = match self.boundary {
            HeatBoundary::Insulated => BoundaryStructure::new(
                DMatrix::zeros(0, 4),
                stack(row([0.0, 1.0, 0.0, 0.0]), row([0.0, 0.0, 0.0, 1.0])),
                DMatrix::zeros(0, 4),
                BoundaryForm::Position,
            ),
            HeatBoundary::Trace { .. } => BoundaryStructure::new(
                stack(row([1.0, 0.0, 0.0, 0.0]), row([0.0, 0.0, 1.0, 0.0])),
                DMatrix::zeros(0, 4),
                stack(row([0.0, 1.0, 0.0, 0.0]), row([0.0, 0.0, 0.0, -1.0])),
                BoundaryForm::Position,
            ),
        }?;
        Ok(PortHamiltonianSystem::new(domain, structure, density, boundary)?)
    }
}

impl Signal {
    fn check(&self, field: &str, m: usize) -> Result<()> {
        let len = |f: &str, v: &[f64]| {
            if v.len() != m {
                return Err(CliError::config(format!("{field}.{f}"), format!("expected {m} entries, found {}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(CliError::config(format!("{field}.{f}"), "must be finite"));
            }
            Ok(())
        };
        match self {
            Signal::Zero => Ok(()),
            Signal::Constant { value } => len("value", value),
            Signal::Sine { amplitude, omega, phase } => {
                if !omega.is_finite() || !phase.is_finite() {
                    return Err(CliError::config(format!("{field}.omega"), "omega and phase must be finite"));
                }
                len("amplitude", amplitude)
            }
            Signal::Samples { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(CliError::config(
                        format!("{field}.values"),
                        "need one value per time and at least one sample",
                    ));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
                    return Err(CliError::config(format!("{field}.times"), "must be finite and strictly increasing"));
                }
                for (i, v) in values.iter().enumerate() {
                    len(&format!("values[{i}]"), v)?;
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, t: f64, m: usize) -> DVector<f64> {
        match self {
            Signal::Zero => DVector::zeros(m),
            Signal::Constant { value } => DVector::from_column_slice(value),
            Signal::Sine { amplitude, omega, phase } => {
                let s = (omega * t + phase).sin();
                DVector::from_iterator(amplitude.len(), amplitude.iter().map(|a| a * s))
            }
            Signal::Samples { times, values } => {
                let last = times.len() - 1;
                if t <= times[0] {
                    return DVector::from_column_slice(&values[0]);
                }
                if t >= times[last] {
                    return DVector::from_column_slice(&values[last]);
                }
                let k = times.partition_point(|s| *s <= t) - 1;
                let w = (t - times[k]) / (times[k + 1] - times[k]);
                let (a, b) = (DVector::from_column_slice(&values[k]), DVector::from_column_slice(&values[k + 1]));
                a * (1.0 - w) + b * w
            }
        }
    }
}

impl InitialState {
    /// Grid function for the simulator; zero and constant data are sampled on two nodes.
    pub fn to_grid(&self, field: &str, domain: &SpatialDomain, n: usize) -> Result<GridFunction> {
        let constant = |v: DVector<f64>| {
            GridFunction::new(vec![domain.a(), domain.b()], vec![v.clone(), v], Layout::Node)
                .map_err(|e| CliError::from_model(field, e))
        };
        match self {
            InitialState::Zero => constant(DVector::zeros(n)),
            InitialState::Constant { value } => {
                if value.len() != n || value.iter().any(|v| !v.is_finite()) {
                    return Err(CliError::config(format!("{field}.value"), format!("expected {n} finite entries")));
                }
                constant(DVector::from_column_slice(value))
            }
            InitialState::Samples { grid, values } => {
                for (i, v) in values.iter().enumerate() {
                    if v.len() != n || v.iter().any(|x| !x.is_finite()) {
                        return Err(CliError::config(
                            format!("{field}.values[{i}]"),
                            format!("expected {n} finite entries"),
                        ));
                    }
                }
                let values = values.iter().map(|v| DVector::from_column_slice(v)).collect();
                GridFunction::new(grid.clone(), values, Layout::Node).map_err(|e| match e {
                    phs_core::PhsError::InvalidInput { reason, .. } => CliError::config(format!("{field}.grid"), reason),
                    other => CliError::from_model(field, other),
                })
            }
        }
    }
}

impl SimulationConfig {
    /// Options with command-line overrides applied; every field must come from one of the two.
    pub fn options(
        sim: Option<&SimulationConfig>,
        t_end: Option<f64>,
        dt: Option<f64>,
        cells: Option<usize>,
    ) -> Result<SimulationOptions> {
        fn pick<T>(flag: Option<T>, cfg: Option<T>, name: &str) -> Result<T> {
            flag.or(cfg).ok_or_else(|| {
                CliError::config(format!("simulation.{name}"), format!("missing; set it in the config or pass --{name}"))
            })
        }
        let opts = SimulationOptions {
            t_end: pick(t_end, sim.and_then(|s| s.t_end), "T")?,
            dt: pick(dt, sim.and_then(|s| s.dt), "dt")?,
            cells: pick(cells, sim.and_then(|s| s.cells), "N")?,
        };
        if !(opts.t_end > 0.0 && opts.t_end.is_finite()) {
            return Err(CliError::config("simulation.T", "must be positive and finite"));
        }
        if !(opts.dt > 0.0 && opts.dt.is_finite()) {
            return Err(CliError::config("simulation.dt", "must be positive and finite"));
        }
        if opts.cells < phs_core::simulate::MIN_CELLS {
            return Err(CliError::config(
                "simulation.N",
                format!("need at least {} cells", phs_core::simulate::MIN_CELLS),
            ));
        }
        Ok(opts)
    }
}

impl Config {
    pub fn kind(&self) -> &'static str {
        match self {
            Config::PortHamiltonian(_) => "port_hamiltonian",
            Config::Heat(_) => "heat",
        }
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            Config::PortHamiltonian(c) => c.name.as_deref(),
            Config::Heat(c) => c.name.as_deref(),
        }
    }

    pub fn parameters(&self) -> &BTreeMap<String, f64> {
        match self {
            Config::PortHamiltonian(c) => &c.parameters,
            Config::Heat(c) => &c.parameters,
        }
    }

    pub fn simulation(&self) -> Option<&SimulationConfig> {
        match self {
            Config::PortHamiltonian(c) => c.simulation.as_ref(),
            Config::Heat(c) => c.simulation.as_ref(),
        }
    }
}
