//! Structure-preserving simulation.
//!
//! States are averages over control volumes centered at the grid nodes (half volumes at the
//! ends). Face efforts average the two adjacent nodes; at the two boundary faces the node
//! efforts are projected onto the boundary rows `W_B R_ext (e(b); e(a)) = (u; 0)` along a
//! fixed complement `L`. The semi-discrete energy then satisfies
//!
//! ```text
//!   dE/dt = e_del^T f_del - (1/2) l^T Q l,   l = (node trace) - (projected trace) in L,
//! ```
//!
//! with `Q = blockdiag(P1, -P1)`. For conservative boundaries `L` is chosen `Q`-isotropic,
//! so the identity is exact; otherwise `L` is `Q`-positive and the extra term is a
//! numerical dissipation that vanishes when the node trace already meets the boundary rows. Time stepping is the implicit midpoint rule.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::analysis::generation_matrix;
use crate::error::{PhsError, Result};
use crate::linalg;
use crate::model::{
    extension_matrix, FlowEffortPair, GridFunction, HamiltonianDensity, Layout,
    PortHamiltonianSystem, SpatialDomain,
};
use crate::tolerance::Tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosureKind {
    /// `W_B Sigma W_B^T = 0`: isotropic complement, exact discrete power balance.
    Conservative,
    /// Complement spanned by outgoing directions; adds numerical dissipation.
    Dissipative,
}

#[derive(Debug, Clone)]
struct Closure {
    kind: ClosureKind,
    /// `Pi` in `z = Pi c + Gamma u`.
    proj: DMatrix<f64>,
    gain: DMatrix<f64>,
    ext: DMatrix<f64>,
    out: DMatrix<f64>,
    q: DMatrix<f64>,
}

impl Closure {
    fn build(system: &PortHamiltonianSystem, tol: &Tolerances) -> Result<Self> {
        let n = system.n();
        let m = system.m();
        let matrices = system.matrices();
        let constraint = system.trace_constraint();
        let q = matrices.boundary_form();
        let wb = system.boundary().wb();
        let gen = generation_matrix(system.boundary());
        let scale = linalg::norm2(&wb).powi(2).max(f64::MIN_POSITIVE);
        let kind = if linalg::max_abs(&gen) <= tol.psd * scale {
            ClosureKind::Conservative
        } else {
            ClosureKind::Dissipative
        };
        let complement = match kind {
            ClosureKind::Conservative => {
                linalg::sym_sign(&q) * linalg::null_space(&constraint, tol.rank)
            }
            ClosureKind::Dissipative => {
                let (values, vectors) = linalg::sym_eigen(matrices.p1());
                let pos: Vec<usize> = (0..n).filter(|&i| values[i] > 0.0).collect();
                let neg: Vec<usize> = (0..n).filter(|&i| values[i] < 0.0).collect();
                let mut l = DMatrix::zeros(2 * n, n);
                for (c, &i) in pos.iter().enumerate() {
                    l.view_mut((0, c), (n, 1)).copy_from(&vectors.column(i));
                }
                for (c, &i) in neg.iter().enumerate() {
                    l.view_mut((n, pos.len() + c), (n, 1)).copy_from(&vectors.column(i));
                }
                l
            }
        };
        if complement.ncols() != n {
            return Err(PhsError::SingularClosure(format!(
                "complement has dimension {} instead of {n}",
                complement.ncols()
            )));
        }
        let ml = &constraint * &complement;
        if linalg::rank(&ml, tol.rank) < n {
            return Err(PhsError::SingularClosure(
                "boundary rows do not determine the nodal trace".into(),
            ));
        }
        let k = &complement
            * ml.try_inverse()
                .ok_or_else(|| PhsError::SingularClosure("W_B R_ext L is singular".into()))?;
        let proj = DMatrix::identity(2 * n, 2 * n) - &k * &constraint;
        let gain = k.columns(0, m).into_owned();
        let ext = extension_matrix(matrices);
        let out = system.boundary().wc() * &ext;
        Ok(Closure {
            kind,
            proj,
            gain,
            ext,
            out,
            q,
        })
    }
}

/// Semi-discretization on a uniform grid with one control volume per node.
///
/// Interior volumes have width `dz`, the two end volumes `dz / 2`. States and efforts sit
/// on the nodes, fluxes on the volume faces.
#[derive(Debug, Clone)]
pub struct SemiDiscreteSystem {
    system: PortHamiltonianSystem,
    cells: usize,
    dz: f64,
    grid: Vec<f64>,
    h_nodes: Vec<DMatrix<f64>>,
    weights: Vec<f64>,
    closure: Closure,
    generator: DMatrix<f64>,
    input: DMatrix<f64>,
    skew_defect: f64,
}

pub const MIN_CELLS: usize = 4;

pub fn discretize(system: &PortHamiltonianSystem, cells: usize, tol: &Tolerances) -> Result<SemiDiscreteSystem> {
    if cells < MIN_CELLS {
        return Err(PhsError::invalid("N", format!("need at least {MIN_CELLS} cells, got {cells}")));
    }
    let grid = system.domain().uniform_nodes(cells);
    let dz = system.domain().length() / cells as f64;
    let h_nodes = grid.iter().map(|&z| system.density().evaluate(z)).collect();
    let weights = (0..=cells)
        .map(|j| if j == 0 || j == cells { 0.5 * dz } else { dz })
        .collect();
    let closure = Closure::build(system, tol)?;
    let n = system.n();
    let m = system.m();
    let dim = n * (cells + 1);
    let mut sd = SemiDiscreteSystem {
        system: system.clone(),
        cells,
        dz,
        grid,
        h_nodes,
        weights,
        closure,
        generator: DMatrix::zeros(dim, dim),
        input: DMatrix::zeros(dim, m),
        skew_defect: 0.0,
    };
    let zero_u = DVector::zeros(m);
    let zero_x = DVector::zeros(dim);
    for j in 0..dim {
        let mut e = DVector::zeros(dim);
        e[j] = 1.0;
        let col = sd.rhs(&e, &zero_u);
        sd.generator.set_column(j, &col);
    }
    for i in 0..m {
        let mut e = DVector::zeros(m);
        e[i] = 1.0;
        let col = sd.rhs(&zero_x, &e);
        sd.input.set_column(i, &col);
    }
    let w = sd.energy_weight();
    let wg = &w * &sd.generator;
    let sym = &wg + wg.transpose();
    sd.skew_defect = if sd.closure.kind == ClosureKind::Conservative {
        linalg::max_abs(&sym) / linalg::max_abs(&wg).max(f64::MIN_POSITIVE)
    } else {
        // Dissipative closures are not skew; report the largest eigenvalue of the
        // symmetric part, which must not be positive.
        let (values, _) = linalg::sym_eigen(&(sym * 0.5));
        values[values.len() - 1] / linalg::max_abs(&wg).max(f64::MIN_POSITIVE)
    };
    Ok(sd)
}

impl SemiDiscreteSystem {
    pub fn system(&self) -> &PortHamiltonianSystem {
        &self.system
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// `n (N + 1)`.
    pub fn dim(&self) -> usize {
        self.system.n() * (self.cells + 1)
    }

    pub fn closure_kind(&self) -> ClosureKind {
        self.closure.kind
    }

    /// Affine decomposition `dx/dt = G x + B u`.
    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn input_matrix(&self) -> &DMatrix<f64> {
        &self.input
    }

    /// Conservative closures: relative size of `W G + G^T W`. Dissipative closures: largest
    /// eigenvalue of the symmetric part of `W G`, relative to `|W G|`.
    pub fn skew_defect(&self) -> f64 {
        self.skew_defect
    }

    /// `blockdiag(w_j H(z_j))` with volume widths `w_j`, the discrete energy inner product
    /// (without the 1/2).
    pub fn energy_weight(&self) -> DMatrix<f64> {
        let n = self.system.n();
        let mut w = DMatrix::zeros(self.dim(), self.dim());
        for (j, h) in self.h_nodes.iter().enumerate() {
            w.view_mut((n * j, n * j), (n, n)).copy_from(&(h * self.weights[j]));
        }
        w
    }

    fn node(&self, x: &DVector<f64>, j: usize) -> DVector<f64> {
        let n = self.system.n();
        x.rows(n * j, n).into_owned()
    }

    fn efforts(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..=self.cells).map(|j| &self.h_nodes[j] * self.node(x, j)).collect()
    }

    /// Boundary node efforts `d` and projected trace `z`, both ordered `(b; a)`.
    fn traces(&self, efforts: &[DVector<f64>], u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.system.n();
        let mut d = DVector::zeros(2 * n);
        d.rows_mut(0, n).copy_from(&efforts[self.cells]);
        d.rows_mut(n, n).copy_from(&efforts[0]);
        let z = &self.closure.proj * &d + &self.closure.gain * u;
        (d, z)
    }

    /// `P1 (face flux difference) / width + P0 e_j`; interior faces carry averaged efforts,
    /// the two boundary faces the projected trace.
    pub fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let n = self.system.n();
        let p1 = self.system.matrices().p1();
        let p0 = self.system.matrices().p0();
        let e = self.efforts(x);
        let (_, z) = self.traces(&e, u);
        let face = |j: usize| -> DVector<f64> {
            if j == 0 {
                z.rows(n, n).into_owned()
            } else if j == self.cells + 1 {
                z.rows(0, n).into_owned()
            } else {
                (&e[j - 1] + &e[j]) * 0.5
            }
        };
        let mut out = DVector::zeros(self.dim());
        let mut left = face(0);
        for j in 0..=self.cells {
            let right = face(j + 1);
            let v = p1 * (&right - &left) / self.weights[j] + p0 * &e[j];
            out.rows_mut(n * j, n).copy_from(&v);
            left = right;
        }
        out
    }

    /// `(1/2) sum w_j x_j^T H_j x_j`.
    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        (0..=self.cells)
            .map(|j| {
                let xj = self.node(x, j);
                0.5 * self.weights[j] * xj.dot(&(&self.h_nodes[j] * &xj))
            })
            .sum()
    }

    pub fn boundary_pair(&self, x: &DVector<f64>, u: &DVector<f64>) -> FlowEffortPair {
        let n = self.system.n();
        let (_, z) = self.traces(&self.efforts(x), u);
        let v = &self.closure.ext * z;
        FlowEffortPair {
            f: v.rows(0, n).into_owned(),
            e: v.rows(n, n).into_owned(),
        }
    }

    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (_, z) = self.traces(&self.efforts(x), u);
        &self.closure.out * z
    }

    /// Numerical dissipation `(1/2) l^T Q l` of the boundary closure.
    pub fn closure_defect(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let (d, z) = self.traces(&self.efforts(x), u);
        let l = d - z;
        0.5 * l.dot(&(&self.closure.q * &l))
    }

    /// Samples `f` on the nodes.
    pub fn state_from_fn(&self, f: impl Fn(f64) -> DVector<f64>) -> Result<DVector<f64>> {
        let n = self.system.n();
        let mut x = DVector::zeros(self.dim());
        for (j, &z) in self.grid.iter().enumerate() {
            let v = f(z);
            if v.len() != n {
                return Err(PhsError::dim("initial state components", n, v.len()));
            }
            x.rows_mut(n * j, n).copy_from(&v);
        }
        Ok(x)
    }

    /// Nodal values of `x0` by piecewise linear interpolation of its samples.
    pub fn state_from_grid(&self, x0: &GridFunction) -> Result<DVector<f64>> {
        sample_at(x0, &self.grid, self.system.n())
    }

    pub fn to_grid(&self, x: &DVector<f64>) -> GridFunction {
        let values = (0..=self.cells).map(|j| self.node(x, j)).collect();
        GridFunction::new(self.grid.clone(), values, Layout::Node).expect("consistent layout")
    }
}

/// Stacked values of `x0` at `targets`: linear interpolation between its sample points,
/// linear extrapolation beyond them.
fn sample_at(x0: &GridFunction, targets: &[f64], n: usize) -> Result<DVector<f64>> {
    if x0.components() != n {
        return Err(PhsError::dim("initial state components", n, x0.components()));
    }
    let pts = x0.points();
    let vals = x0.values();
    let mut x = DVector::zeros(n * targets.len());
    for (k, &z) in targets.iter().enumerate() {
        let v = if pts.len() == 1 {
            vals[0].clone()
        } else {
            let i = pts.partition_point(|&p| p <= z).clamp(1, pts.len() - 1) - 1;
            let t = (z - pts[i]) / (pts[i + 1] - pts[i]);
            if t.abs() <= 1e-12 {
                vals[i].clone()
            } else if (t - 1.0).abs() <= 1e-12 {
                vals[i + 1].clone()
            } else {
                &vals[i] * (1.0 - t) + &vals[i + 1] * t
            }
        };
        x.rows_mut(n * k, n).copy_from(&v);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PhsError::invalid("x0", "entries must be finite"));
    }
    Ok(x)
}

/// Implicit midpoint for `dx/dt = G x + B u` with a factorization reused across steps.
#[derive(Debug, Clone)]
pub struct MidpointStepper {
    lhs: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
    explicit: DMatrix<f64>,
    input: DMatrix<f64>,
    dt: f64,
    solver_tol: f64,
}

impl MidpointStepper {
    pub fn new(sd: &SemiDiscreteSystem, dt: f64, tol: &Tolerances) -> Result<Self> {
        Self::from_matrices(sd.generator(), sd.input_matrix(), dt, tol)
    }

    pub fn from_matrices(g: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64, tol: &Tolerances) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(PhsError::invalid("dt", format!("must be positive, got {dt}")));
        }
        let dim = g.nrows();
        let id = DMatrix::<f64>::identity(dim, dim);
        let lhs = &id - g * (0.5 * dt);
        let lu = lhs.clone().lu();
        if !lu.is_invertible() {
            return Err(PhsError::Factorization("I - dt/2 G is singular".into()));
        }
        Ok(MidpointStepper {
            lhs,
            lu,
            explicit: &id + g * (0.5 * dt),
            input: b * dt,
            dt,
            solver_tol: tol.solver,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Solves `(I - dt/2 G) x+ = (I + dt/2 G) x + dt B u_mid`.
    pub fn step(&self, x: &DVector<f64>, u_mid: &DVector<f64>) -> Result<DVector<f64>> {
        let rhs = &self.explicit * x + &self.input * u_mid;
        let mut next = self
            .lu
            .solve(&rhs)
            .ok_or_else(|| PhsError::Factorization("solve failed".into()))?;
        let scale = rhs.amax().max(f64::MIN_POSITIVE);
        let mut residual = &rhs - &self.lhs * &next;
        if residual.amax() > self.solver_tol * scale {
            // One step of iterative refinement.
            if let Some(corr) = self.lu.solve(&residual) {
                next += corr;
                residual = &rhs - &self.lhs * &next;
            }
            if residual.amax() > self.solver_tol * scale {
                return Err(PhsError::Factorization(format!(
                    "relative residual {:e} above {:e}",
                    residual.amax() / scale,
                    self.solver_tol
                )));
            }
        }
        Ok(next)
    }
}

/// One implicit midpoint step; factorizes on every call.
pub fn step_implicit_midpoint(
    sd: &SemiDiscreteSystem,
    x: &DVector<f64>,
    u_mid: &DVector<f64>,
    dt: f64,
    tol: &Tolerances,
) -> Result<DVector<f64>> {
    MidpointStepper::new(sd, dt, tol)?.step(x, u_mid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub t_end: f64,
    pub dt: f64,
    pub cells: usize,
}

impl SimulationOptions {
    fn steps(&self) -> Result<usize> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(PhsError::invalid("T", format!("must be positive, got {}", self.t_end)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(PhsError::invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        Ok(((self.t_end / self.dt).round() as usize).max(1))
    }
}

/// Time series of one simulation; every per-time array has one entry per entry of `times`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub grid: Vec<f64>,
    pub dt: f64,
    pub dz: f64,
    pub times: Vec<f64>,
    /// Stacked states: nodal for port-Hamiltonian runs, cell values for the heat closure.
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub energies: Vec<f64>,
    pub flows: Vec<DVector<f64>>,
    pub efforts: Vec<DVector<f64>>,
    /// Supplied power in the balance: `e_del^T f_del`, or `2 e_del^T f_del` for the heat closure.
    pub power: Vec<f64>,
    /// Dissipation in the balance: closure defect, or `2 int f2 alpha f2` for the heat closure.
    pub dissipation: Vec<f64>,
    /// `dH/dt - average(power)` per step; zero at `t = 0`.
    pub residuals: Vec<f64>,
    /// Part of the residual from the spatial closure.
    pub residuals_space: Vec<f64>,
    /// Part of the residual from the time discretization.
    pub residuals_time: Vec<f64>,
    /// `balance_factor (dt^2 + dz^2)`.
    pub threshold: f64,
}

impl SimulationTrace {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn max_residual_time(&self) -> f64 {
        self.residuals_time.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn max_residual_space(&self) -> f64 {
        self.residuals_space.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn final_energy(&self) -> f64 {
        *self.energies.last().expect("nonempty trace")
    }

    /// Trapezoid rule for `int |v(t)|^2 dt`.
    fn integral_sq(&self, v: &[DVector<f64>]) -> f64 {
        self.times
            .windows(2)
            .zip(v.windows(2))
            .map(|(t, w)| 0.5 * (t[1] - t[0]) * (w[0].norm_squared() + w[1].norm_squared()))
            .sum()
    }

    /// `(E(T) + int |y|^2) / (E(0) + int |u|^2)`; `None` for a zero denominator.
    pub fn well_posedness_ratio(&self) -> Option<f64> {
        let num = self.final_energy() + self.integral_sq(&self.outputs);
        let den = self.energies[0] + self.integral_sq(&self.inputs);
        (den > 0.0).then(|| num / den)
    }

    /// Least-squares slope of `ln H(t)` over `t in [from, to]`.
    pub fn log_energy_slope(&self, from: f64, to: f64) -> Option<f64> {
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

fn check_finite(x: &DVector<f64>, step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PhsError::NonFinite { step })
    }
}

/// Runs the implicit midpoint scheme from `x0` with boundary input `u`.
pub fn simulate(
    system: &PortHamiltonianSystem,
    x0: &GridFunction,
    u: &dyn Fn(f64) -> DVector<f64>,
    opts: &SimulationOptions,
    tol: &Tolerances,
) -> Result<SimulationTrace> {
    let steps = opts.steps()?;
    let sd = discretize(system, opts.cells, tol)?;
    let x = sd.state_from_grid(x0)?;
    run(&sd, x, u, opts.dt, steps, tol)
}

/// Same as [`simulate`] on an existing discretization and stacked initial state.
pub fn simulate_discrete(
    sd: &SemiDiscreteSystem,
    x0: DVector<f64>,
    u: &dyn Fn(f64) -> DVector<f64>,
    t_end: f64,
    dt: f64,
    tol: &Tolerances,
) -> Result<SimulationTrace> {
    let opts = SimulationOptions {
        t_end,
        dt,
        cells: sd.cells(),
    };
    let steps = opts.steps()?;
    if x0.len() != sd.dim() {
        return Err(PhsError::dim("initial state", sd.dim(), x0.len()));
    }
    run(sd, x0, u, dt, steps, tol)
}

fn run(
    sd: &SemiDiscreteSystem,
    mut x: DVector<f64>,
    u: &dyn Fn(f64) -> DVector<f64>,
    dt: f64,
    steps: usize,
    tol: &Tolerances,
) -> Result<SimulationTrace> {
    let m = sd.system().m();
    let input = |t: f64| -> Result<DVector<f64>> {
        let v = u(t);
        if v.len() != m {
            return Err(PhsError::dim("input", m, v.len()));
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(PhsError::invalid("input", format!("non-finite value at t = {t}")));
        }
        Ok(v)
    };
    check_finite(&x, 0)?;
    let stepper = MidpointStepper::new(sd, dt, tol)?;
    let mut trace = SimulationTrace {
        grid: sd.grid().to_vec(),
        dt,
        dz: sd.dz(),
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
        outputs: Vec::with_capacity(steps + 1),
        energies: Vec::with_capacity(steps + 1),
        flows: Vec::with_capacity(steps + 1),
        efforts: Vec::with_capacity(steps + 1),
        power: Vec::with_capacity(steps + 1),
        dissipation: Vec::with_capacity(steps + 1),
        residuals: Vec::with_capacity(steps + 1),
        residuals_space: Vec::with_capacity(steps + 1),
        residuals_time: Vec::with_capacity(steps + 1),
        threshold: tol.balance_factor * (dt * dt + sd.dz() * sd.dz()),
    };
    let record = |trace: &mut SimulationTrace, t: f64, x: &DVector<f64>, u: DVector<f64>| {
        let pair = sd.boundary_pair(x, &u);
        trace.times.push(t);
        trace.energies.push(sd.energy(x));
        trace.power.push(pair.power());
        trace.dissipation.push(sd.closure_defect(x, &u));
        trace.outputs.push(sd.output(x, &u));
        trace.flows.push(pair.f);
        trace.efforts.push(pair.e);
        trace.inputs.push(u);
        trace.states.push(x.clone());
    };
    record(&mut trace, 0.0, &x, input(0.0)?);
    trace.residuals.push(0.0);
    trace.residuals_space.push(0.0);
    trace.residuals_time.push(0.0);
    for step in 1..=steps {
        let t0 = (step - 1) as f64 * dt;
        let t1 = step as f64 * dt;
        let u_mid = input(t0 + 0.5 * dt)?;
        let next = stepper.step(&x, &u_mid)?;
        check_finite(&next, step)?;
        let x_mid = (&x + &next) * 0.5;
        let space = -sd.closure_defect(&x_mid, &u_mid);
        record(&mut trace, t1, &next, input(t1)?);
        let k = trace.energies.len() - 1;
        let r = (trace.energies[k] - trace.energies[k - 1]) / dt
            - 0.5 * (trace.power[k] + trace.power[k - 1]);
        trace.residuals.push(r);
        trace.residuals_space.push(space);
        trace.residuals_time.push(r - space);
        x = next;
    }
    Ok(trace)
}

/// Boundary choice for the heat closure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum HeatBoundary {
    /// Zero heat flux `e2 = 0` at both ends.
    Insulated,
    /// Prescribed `e1 = h x` at the ends.
    Trace { left: f64, right: f64 },
}

/// `dx/dt = d/dz [alpha d/dz (h x)]` on a domain, with scalar `alpha` and `h` stored as
/// 1x1 densities.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatProblem {
    domain: SpatialDomain,
    alpha: HamiltonianDensity,
    h: HamiltonianDensity,
    boundary: HeatBoundary,
}

impl HeatProblem {
    pub fn new(
        domain: SpatialDomain,
        alpha: HamiltonianDensity,
        h: HamiltonianDensity,
        boundary: HeatBoundary,
    ) -> Result<Self> {
        for (field, d) in [("alpha", &alpha), ("h", &h)] {
            if d.n() != 1 {
                return Err(PhsError::invalid(field, "must be scalar"));
            }
            d.check_domain(&domain)?;
        }
        if let HeatBoundary::Trace { left, right } = boundary {
            if !left.is_finite() || !right.is_finite() {
                return Err(PhsError::invalid("boundary", "trace values must be finite"));
            }
        }
        Ok(HeatProblem {
            domain,
            alpha,
            h,
            boundary,
        })
    }

    /// Constant coefficients on `[0, 1]`.
    pub fn uniform(alpha: f64, h: f64, boundary: HeatBoundary) -> Result<Self> {
        let scalar = |v: f64| HamiltonianDensity::constant(DMatrix::from_element(1, 1, v));
        Self::new(SpatialDomain::new(0.0, 1.0)?, scalar(alpha)?, scalar(h)?, boundary)
    }

    pub fn domain(&self) -> &SpatialDomain {
        &self.domain
    }

    pub fn boundary(&self) -> HeatBoundary {
        self.boundary
    }
}

struct HeatGrid<'a> {
    problem: &'a HeatProblem,
    grid: Vec<f64>,
    dz: f64,
    alpha_nodes: Vec<f64>,
    h_cells: Vec<f64>,
}

impl HeatGrid<'_> {
    fn e1(&self, x: &DVector<f64>) -> Vec<f64> {
        x.iter().zip(&self.h_cells).map(|(v, h)| v * h).collect()
    }

    /// Nodal `e2 = -alpha de1/dz`, with half-cell differences against prescribed traces.
    fn e2(&self, e1: &[f64]) -> Vec<f64> {
        let cells = e1.len();
        let mut e2 = vec![0.0; cells + 1];
        for j in 1..cells {
            e2[j] = -self.alpha_nodes[j] * (e1[j] - e1[j - 1]) / self.dz;
        }
        if let HeatBoundary::Trace { left, right } = self.problem.boundary {
            let half = 0.5 * self.dz;
            e2[0] = -self.alpha_nodes[0] * (e1[0] - left) / half;
            e2[cells] = -self.alpha_nodes[cells] * (right - e1[cells - 1]) / half;
        }
        e2
    }

    fn rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        let e2 = self.e2(&self.e1(x));
        DVector::from_fn(x.len(), |k, _| -(e2[k + 1] - e2[k]) / self.dz)
    }

    /// `int x h x` by the midpoint rule.
    fn energy(&self, x: &DVector<f64>) -> f64 {
        x.iter().zip(&self.h_cells).map(|(v, h)| self.dz * h * v * v).sum()
    }

    /// Boundary pair `f = (-e2(b), e2(a))`, `e = (e1(b), e1(a))`.
    fn pair(&self, x: &DVector<f64>) -> FlowEffortPair {
        let e1 = self.e1(x);
        let e2 = self.e2(&e1);
        let cells = e1.len();
        let (eb, ea) = match self.problem.boundary {
            HeatBoundary::Insulated => (e1[cells - 1], e1[0]),
            HeatBoundary::Trace { left, right } => (right, left),
        };
        FlowEffortPair {
            f: DVector::from_vec(vec![-e2[cells], e2[0]]),
            e: DVector::from_vec(vec![eb, ea]),
        }
    }

    /// `2 int f2 alpha f2` with half weights on the boundary nodes.
    fn dissipation(&self, x: &DVector<f64>) -> f64 {
        let e2 = self.e2(&self.e1(x));
        let cells = x.len();
        let mut total = 0.0;
        for (j, e) in e2.iter().enumerate() {
            let w = if j == 0 || j == cells { 0.5 * self.dz } else { self.dz };
            total += w * e * e / self.alpha_nodes[j];
        }
        2.0 * total
    }
}

/// Implicit midpoint simulation of the heat equation with the resistive closure.
///
/// The trace's `power` is `2 e_del^T f_del` and `dissipation` is `2 int f2 alpha f2`; the
/// residual compares `dH/dt` with the step average of `power - dissipation`.
pub fn simulate_heat_closure(
    problem: &HeatProblem,
    x0: &GridFunction,
    opts: &SimulationOptions,
    tol: &Tolerances,
) -> Result<SimulationTrace> {
    let steps = opts.steps()?;
    if opts.cells < MIN_CELLS {
        return Err(PhsError::invalid("N", format!("need at least {MIN_CELLS} cells, got {}", opts.cells)));
    }
    let domain = problem.domain;
    let grid = domain.uniform_nodes(opts.cells);
    let dz = domain.length() / opts.cells as f64;
    let hg = HeatGrid {
        problem,
        alpha_nodes: grid.iter().map(|&z| problem.alpha.evaluate(z)[(0, 0)]).collect(),
        h_cells: grid
            .windows(2)
            .map(|w| problem.h.evaluate(0.5 * (w[0] + w[1]))[(0, 0)])
            .collect(),
        grid,
        dz,
    };
    let cells = opts.cells;
    let offset = hg.rhs(&DVector::zeros(cells));
    let mut g = DMatrix::zeros(cells, cells);
    for j in 0..cells {
        let mut e = DVector::zeros(cells);
        e[j] = 1.0;
        g.set_column(j, &(hg.rhs(&e) - &offset));
    }
    let b = DMatrix::from_column_slice(cells, 1, offset.as_slice());
    let stepper = MidpointStepper::from_matrices(&g, &b, opts.dt, tol)?;
    let one = DVector::from_element(1, 1.0);

    let mids: Vec<f64> = hg.grid.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mut x = sample_at(x0, &mids, 1)?;
    check_finite(&x, 0)?;
    let mut trace = SimulationTrace {
        grid: hg.grid.clone(),
        dt: opts.dt,
        dz,
        times: Vec::new(),
        states: Vec::new(),
        inputs: Vec::new(),
        outputs: Vec::new(),
        energies: Vec::new(),
        flows: Vec::new(),
        efforts: Vec::new(),
        power: Vec::new(),
        dissipation: Vec::new(),
        residuals: vec![0.0],
        residuals_space: vec![0.0],
        residuals_time: vec![0.0],
        threshold: tol.balance_factor * (opts.dt * opts.dt + dz * dz),
    };
    let record = |trace: &mut SimulationTrace, t: f64, x: &DVector<f64>| {
        let pair = hg.pair(x);
        trace.times.push(t);
        trace.energies.push(hg.energy(x));
        trace.power.push(2.0 * pair.power());
        trace.dissipation.push(hg.dissipation(x));
        trace.flows.push(pair.f);
        trace.efforts.push(pair.e);
        trace.inputs.push(DVector::zeros(0));
        trace.outputs.push(DVector::zeros(0));
        trace.states.push(x.clone());
    };
    record(&mut trace, 0.0, &x);
    for step in 1..=steps {
        let next = stepper.step(&x, &one)?;
        check_finite(&next, step)?;
        let x_mid = (&x + &next) * 0.5;
        let at_mid = 2.0 * hg.pair(&x_mid).power() - hg.dissipation(&x_mid);
        record(&mut trace, step as f64 * opts.dt, &next);
        let k = trace.energies.len() - 1;
        let rate = (trace.energies[k] - trace.energies[k - 1]) / opts.dt;
        let avg = 0.5
            * ((trace.power[k] - trace.dissipation[k]) + (trace.power[k - 1] - trace.dissipation[k - 1]));
        // The semi-discrete identity is exact, so the spatial part is rounding only.
        trace.residuals.push(rate - avg);
        trace.residuals_space.push(rate - at_mid);
        trace.residuals_time.push(at_mid - avg);
        x = next;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library;
    use crate::model::{BoundaryForm, BoundaryStructure, StructureMatrices};
    use std::f64::consts::PI;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn zero_input(m: usize) -> impl Fn(f64) -> DVector<f64> {
        move |_| DVector::zeros(m)
    }

    fn smooth_tl_state(sd: &SemiDiscreteSystem) -> DVector<f64> {
        sd.state_from_fn(|z| DVector::from_vec(vec![(PI * z).sin(), 0.5 * (2.0 * PI * z).cos()]))
            .unwrap()
    }

    #[test]
    fn advection_generator_is_dissipative() {
        // x_t = x_z with x(b) = 0 prescribed at the inflow end.
        let sys = library::scalar_transport(0.0, 1.0, [1.0, 0.0]).unwrap();
        let sd = discretize(&sys, 64, &tol()).unwrap();
        assert_eq!(sd.closure_kind(), ClosureKind::Dissipative);
        let eig = sd.generator().complex_eigenvalues();
        let worst = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        assert!(worst <= 1e-10, "{worst}");
    }

    #[test]
    fn conservative_generator_is_skew_in_energy_product() {
        let sys = library::wave_equation(2.0, 0.5, 0.0).unwrap();
        for cells in [16, 32] {
            let sd = discretize(&sys, cells, &tol()).unwrap();
            assert_eq!(sd.closure_kind(), ClosureKind::Conservative);
            assert!(sd.skew_defect() < 1e-13, "{}", sd.skew_defect());
        }
    }

    #[test]
    fn dissipative_closure_defect_vanishes_on_admissible_states() {
        let r = 0.5;
        let sys = library::transmission_line(1.0, 1.0, r).unwrap();
        let sd = discretize(&sys, 32, &tol()).unwrap();
        assert!(sd.skew_defect() <= 1e-13);
        // V(a) = 0 and V(b) = R I(b).
        let good = sd
            .state_from_fn(|z| DVector::from_vec(vec![(PI * z / 2.0).sin() * 2.0 * r, 1.0 + z]))
            .unwrap();
        assert!(sd.closure_defect(&good, &DVector::zeros(1)).abs() < 1e-14);
        let bad = sd.state_from_fn(|z| DVector::from_vec(vec![1.0 + z, z])).unwrap();
        assert!(sd.closure_defect(&bad, &DVector::zeros(1)) > 0.1);
    }

    #[test]
    fn midpoint_matches_euler_for_small_steps() {
        let sys = library::transmission_line(1.0, 1.0, 1.0).unwrap();
        let sd = discretize(&sys, 16, &tol()).unwrap();
        let x = smooth_tl_state(&sd);
        let u = DVector::from_element(1, 0.3);
        let mut errs = Vec::new();
        for dt in [1e-3, 5e-4] {
            let next = step_implicit_midpoint(&sd, &x, &u, dt, &tol()).unwrap();
            let euler = &x + sd.rhs(&x, &u) * dt;
            errs.push((next - euler).amax());
        }
        assert!((errs[0] / errs[1] - 4.0).abs() < 0.1);
    }

    #[test]
    fn conservative_step_preserves_energy() {
        let sys = library::transmission_line(1.0, 1.0, 0.0).unwrap();
        let sd = discretize(&sys, 32, &tol()).unwrap();
        let x = smooth_tl_state(&sd);
        let next = step_implicit_midpoint(&sd, &x, &DVector::zeros(1), 0.01, &tol()).unwrap();
        assert!((sd.energy(&next) - sd.energy(&x)).abs() <= 1e-12 * sd.energy(&x));
    }

    #[test]
    fn resistive_line_energy_decreases() {
        let sys = library::transmission_line(1.0, 1.0, 0.5).unwrap();
        let sd = discretize(&sys, 32, &tol()).unwrap();
        let x0 = smooth_tl_state(&sd);
        let trace = simulate_discrete(&sd, x0, &zero_input(1), 1.0, 1e-3, &tol()).unwrap();
        assert_eq!(trace.times.len(), 1001);
        for w in trace.energies.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-14));
        }
        assert!(trace.final_energy() < trace.energies[0]);
    }

    #[test]
    fn periodic_transport_conserves_energy() {
        let sys = library::scalar_transport(0.0, 1.0, [1.0, -1.0]).unwrap();
        let sd = discretize(&sys, 64, &tol()).unwrap();
        assert_eq!(sd.closure_kind(), ClosureKind::Conservative);
        let x0 = sd.state_from_fn(|z| DVector::from_element(1, (2.0 * PI * z).sin() + 0.2)).unwrap();
        let trace = simulate_discrete(&sd, x0, &zero_input(0), 10.0, 1.0 / 64.0, &tol()).unwrap();
        let e0 = trace.energies[0];
        let drift = trace.energies.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max);
        assert!(drift / e0 <= 1e-10, "{}", drift / e0);
    }

    #[test]
    fn arrays_are_congruent_and_times_increase() {
        let sys = library::wave_equation(1.0, 1.0, 0.3).unwrap();
        let sd = discretize(&sys, 8, &tol()).unwrap();
        let x0 = sd.state_from_fn(|z| DVector::from_vec(vec![z, 1.0 - z])).unwrap();
        let tr = simulate_discrete(&sd, x0, &|t: f64| DVector::from_element(1, t.sin()), 0.1, 0.01, &tol()).unwrap();
        let k = tr.times.len();
        assert_eq!(k, 11);
        for len in [
            tr.states.len(),
            tr.inputs.len(),
            tr.outputs.len(),
            tr.energies.len(),
            tr.flows.len(),
            tr.efforts.len(),
            tr.residuals.len(),
        ] {
            assert_eq!(len, k);
        }
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let sys = library::transmission_line(1.0, 1.0, 1.0).unwrap();
        let sd = discretize(&sys, 8, &tol()).unwrap();
        let x0 = DVector::zeros(sd.dim());
        let err = simulate_discrete(&sd, x0, &|_| DVector::from_element(1, f64::NAN), 0.1, 0.01, &tol());
        assert!(err.is_err());
        let mut bad = DVector::zeros(sd.dim());
        bad[3] = f64::INFINITY;
        let err = simulate_discrete(&sd, bad, &zero_input(1), 0.1, 0.01, &tol());
        assert!(matches!(err, Err(PhsError::NonFinite { step: 0 })));
    }

    #[test]
    fn singular_closure_is_reported() {
        // Both rows act on the a-end only, x(a) and P1-invariant combos cannot fix x(b).
        let m = StructureMatrices::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let h = HamiltonianDensity::constant(DMatrix::identity(2, 2)).unwrap();
        let b = BoundaryStructure::new(
            DMatrix::zeros(0, 4),
            DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
            DMatrix::zeros(0, 4),
            BoundaryForm::Position,
        )
        .unwrap();
        let sys = PortHamiltonianSystem::new(SpatialDomain::new(0.0, 1.0).unwrap(), m, h, b).unwrap();
        assert!(matches!(discretize(&sys, 8, &tol()), Err(PhsError::SingularClosure(_))));
    }

    fn heat_x0(cells: usize, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction::sample_cells(&SpatialDomain::new(0.0, 1.0).unwrap(), cells, |z| {
            DVector::from_element(1, f(z))
        })
        .unwrap()
    }

    #[test]
    fn heat_constant_state_is_stationary_when_insulated() {
        let p = HeatProblem::uniform(1.0, 1.0, HeatBoundary::Insulated).unwrap();
        let opts = SimulationOptions { t_end: 0.1, dt: 1e-3, cells: 32 };
        let tr = simulate_heat_closure(&p, &heat_x0(32, |_| 0.7), &opts, &tol()).unwrap();
        let last = tr.states.last().unwrap();
        assert!(last.iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn insulated_heat_energy_is_nonincreasing() {
        let p = HeatProblem::uniform(1.3, 0.8, HeatBoundary::Insulated).unwrap();
        let opts = SimulationOptions { t_end: 0.2, dt: 1e-3, cells: 64 };
        let tr = simulate_heat_closure(&p, &heat_x0(64, |z| (3.0 * z).cos() + z), &opts, &tol()).unwrap();
        assert!(tr.energies.windows(2).all(|w| w[1] <= w[0]));
        assert!(tr.power.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn heat_balance_identity_holds() {
        let p = HeatProblem::uniform(0.7, 1.5, HeatBoundary::Trace { left: 0.3, right: -0.2 }).unwrap();
        let opts = SimulationOptions { t_end: 0.05, dt: 1e-4, cells: 32 };
        // Initial data compatible with the traces: e1 = 0.3 - 0.5 z + sin(pi z).
        let x0 = heat_x0(32, |z| (0.3 - 0.5 * z + (PI * z).sin()) / 1.5);
        let tr = simulate_heat_closure(&p, &x0, &opts, &tol()).unwrap();
        let scale = tr.dissipation.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
        assert!(tr.max_residual_space() <= 1e-9 * scale, "{}", tr.max_residual_space());
        assert!(tr.max_residual() <= 1e-3 * scale, "{} vs {scale}", tr.max_residual());
    }

    #[test]
    fn heat_zero_trace_decay_rate() {
        let p = HeatProblem::uniform(1.0, 1.0, HeatBoundary::Trace { left: 0.0, right: 0.0 }).unwrap();
        let opts = SimulationOptions { t_end: 0.2, dt: 1e-3, cells: 128 };
        let tr = simulate_heat_closure(&p, &heat_x0(128, |z| (PI * z).sin()), &opts, &tol()).unwrap();
        let slope = tr.log_energy_slope(0.02, 0.2).unwrap();
        let oracle = 2.0 * PI * PI;
        assert!((-slope - oracle).abs() <= 0.02 * oracle, "{slope}");
    }
}
