//! Domain types for linear port-Hamiltonian systems on an interval `[a, b]`:
//!
//! ```text
//!   dx/dt = P1 d/dz (H x) + P0 (H x)
//!   u = W_B1 (f_del; e_del),  0 = W_B2 (f_del; e_del),  y = W_C (f_del; e_del)
//! ```
//!
//! Boundary rows are accepted either acting on the boundary flow/effort pair or on the
//! position traces `((Hx)(b); (Hx)(a))`. Systems always store the flow/effort form.

use nalgebra::{DMatrix, DVector, Scalar};
use serde::{Deserialize, Serialize};

use crate::error::{PhsError, Result};
use crate::linalg;
use crate::tolerance::Tolerances;

fn rank_tol() -> f64 {
    Tolerances::default().rank
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialDomain {
    a: f64,
    b: f64,
}

impl SpatialDomain {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() {
            return Err(PhsError::invalid("domain", "endpoints must be finite"));
        }
        if a >= b {
            return Err(PhsError::invalid("domain", format!("need a < b, got [{a}, {b}]")));
        }
        Ok(SpatialDomain { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    /// `cells + 1` equispaced nodes from `a` to `b`.
    pub fn uniform_nodes(&self, cells: usize) -> Vec<f64> {
        let h = self.length() / cells as f64;
        (0..=cells)
            .map(|j| if j == cells { self.b } else { self.a + j as f64 * h })
            .collect()
    }
}

/// `P1` (symmetric, invertible) and `P0` (skew-symmetric).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureMatrices {
    p1: DMatrix<f64>,
    p0: DMatrix<f64>,
}

impl StructureMatrices {
    pub fn new(p1: DMatrix<f64>, p0: DMatrix<f64>) -> Result<Self> {
        let n = p1.nrows();
        if n == 0 || !p1.is_square() {
            return Err(PhsError::invalid("P1", "must be a nonempty square matrix"));
        }
        if p0.shape() != (n, n) {
            return Err(PhsError::invalid(
                "P0",
                format!("expected {n}x{n}, got {}x{}", p0.nrows(), p0.ncols()),
            ));
        }
        if p1.iter().chain(p0.iter()).any(|v| !v.is_finite()) {
            return Err(PhsError::invalid("P1/P0", "entries must be finite"));
        }
        if linalg::max_abs(&(&p1 - p1.transpose())) != 0.0 {
            return Err(PhsError::invalid("P1", "must be symmetric"));
        }
        if linalg::max_abs(&(&p0 + p0.transpose())) != 0.0 {
            return Err(PhsError::invalid("P0", "must be skew-symmetric"));
        }
        if linalg::rank(&p1, rank_tol()) < n {
            return Err(PhsError::invalid("P1", "must be invertible"));
        }
        Ok(StructureMatrices { p1, p0 })
    }

    pub fn n(&self) -> usize {
        self.p1.nrows()
    }

    pub fn p1(&self) -> &DMatrix<f64> {
        &self.p1
    }

    pub fn p0(&self) -> &DMatrix<f64> {
        &self.p0
    }

    pub fn p1_inverse(&self) -> DMatrix<f64> {
        self.p1
            .clone()
            .try_inverse()
            .expect("P1 invertible by construction")
    }

    /// `(-P1, -P0)`, the time-reversed operator.
    pub fn negated(&self) -> StructureMatrices {
        StructureMatrices {
            p1: -&self.p1,
            p0: -&self.p0,
        }
    }

    /// `Q = blockdiag(P1, -P1)`: twice the boundary power as a quadratic form in `(wb; wa)`.
    pub fn boundary_form(&self) -> DMatrix<f64> {
        linalg::block_diag(&self.p1, &(-&self.p1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DensityRepr {
    Constant(DMatrix<f64>),
    /// `matrices[i]` holds on `[breakpoints[i], breakpoints[i + 1])`.
    Piecewise {
        breakpoints: Vec<f64>,
        matrices: Vec<DMatrix<f64>>,
    },
    /// Linear interpolation between samples.
    Sampled {
        grid: Vec<f64>,
        matrices: Vec<DMatrix<f64>>,
    },
}

/// The coercive symmetric matrix field `H(z)` with bounds `c I <= H(z) <= C I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianDensity {
    repr: DensityRepr,
    n: usize,
    lower: f64,
    upper: f64,
}

fn check_spd(field: &str, m: &DMatrix<f64>, n: usize) -> Result<(DMatrix<f64>, f64, f64)> {
    if m.shape() != (n, n) {
        return Err(PhsError::invalid(
            field,
            format!("expected {n}x{n}, got {}x{}", m.nrows(), m.ncols()),
        ));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(PhsError::invalid(field, "entries must be finite"));
    }
    let scale = linalg::max_abs(m).max(f64::MIN_POSITIVE);
    if linalg::max_abs(&(m - m.transpose())) > 1e-12 * scale {
        return Err(PhsError::invalid(field, "must be symmetric"));
    }
    let sym = (m + m.transpose()) * 0.5;
    let (values, _) = linalg::sym_eigen(&sym);
    let lo = values[0];
    let hi = values[n - 1];
    if lo <= 0.0 {
        return Err(PhsError::invalid(
            field,
            format!("must be positive definite (smallest eigenvalue {lo:e})"),
        ));
    }
    Ok((sym, lo, hi))
}

fn check_increasing(field: &str, pts: &[f64]) -> Result<()> {
    if pts.iter().any(|v| !v.is_finite()) {
        return Err(PhsError::invalid(field, "entries must be finite"));
    }
    if pts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PhsError::invalid(field, "must be strictly increasing"));
    }
    Ok(())
}

impl HamiltonianDensity {
    pub fn constant(h: DMatrix<f64>) -> Result<Self> {
        let n = h.nrows();
        if n == 0 {
            return Err(PhsError::invalid("H", "must be nonempty"));
        }
        let (h, lower, upper) = check_spd("H", &h, n)?;
        Ok(HamiltonianDensity {
            repr: DensityRepr::Constant(h),
            n,
            lower,
            upper,
        })
    }

    pub fn piecewise(breakpoints: Vec<f64>, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        check_increasing("H.breakpoints", &breakpoints)?;
        if matrices.is_empty() || breakpoints.len() != matrices.len() + 1 {
            return Err(PhsError::invalid(
                "H.matrices",
                "need one matrix per interval between breakpoints",
            ));
        }
        let (matrices, lower, upper, n) = Self::check_all("H.matrices", matrices)?;
        Ok(HamiltonianDensity {
            repr: DensityRepr::Piecewise {
                breakpoints,
                matrices,
            },
            n,
            lower,
            upper,
        })
    }

    pub fn sampled(grid: Vec<f64>, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        check_increasing("H.grid", &grid)?;
        if grid.len() < 2 || grid.len() != matrices.len() {
            return Err(PhsError::invalid(
                "H.matrices",
                "need at least two samples and one matrix per grid point",
            ));
        }
        let (matrices, lower, upper, n) = Self::check_all("H.matrices", matrices)?;
        Ok(HamiltonianDensity {
            repr: DensityRepr::Sampled { grid, matrices },
            n,
            lower,
            upper,
        })
    }

    fn check_all(
        field: &str,
        matrices: Vec<DMatrix<f64>>,
    ) -> Result<(Vec<DMatrix<f64>>, f64, f64, usize)> {
        let n = matrices[0].nrows();
        if n == 0 {
            return Err(PhsError::invalid(field, "matrices must be nonempty"));
        }
        let mut lower = f64::INFINITY;
        let mut upper = 0.0_f64;
        let mut out = Vec::with_capacity(matrices.len());
        for (i, m) in matrices.iter().enumerate() {
            let (sym, lo, hi) = check_spd(&format!("{field}[{i}]"), m, n)?;
            lower = lower.min(lo);
            upper = upper.max(hi);
            out.push(sym);
        }
        Ok((out, lower, upper, n))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn repr(&self) -> &DensityRepr {
        &self.repr
    }

    /// Coercivity bounds `(c, C)`.
    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.repr, DensityRepr::Constant(_))
    }

    pub fn evaluate(&self, z: f64) -> DMatrix<f64> {
        match &self.repr {
            DensityRepr::Constant(h) => h.clone(),
            DensityRepr::Piecewise {
                breakpoints,
                matrices,
            } => {
                let idx = breakpoints[1..breakpoints.len() - 1]
                    .iter()
                    .take_while(|&&p| p <= z)
                    .count();
                matrices[idx].clone()
            }
            DensityRepr::Sampled { grid, matrices } => {
                if z <= grid[0] {
                    return matrices[0].clone();
                }
                let last = grid.len() - 1;
                if z >= grid[last] {
                    return matrices[last].clone();
                }
                let i = grid.partition_point(|&g| g <= z) - 1;
                let t = (z - grid[i]) / (grid[i + 1] - grid[i]);
                &matrices[i] * (1.0 - t) + &matrices[i + 1] * t
            }
        }
    }

    /// Constant pieces covering `domain`, or `None` for interpolated samples.
    pub fn constant_pieces(&self, domain: &SpatialDomain) -> Option<Vec<(f64, f64, DMatrix<f64>)>> {
        match &self.repr {
            DensityRepr::Constant(h) => Some(vec![(domain.a(), domain.b(), h.clone())]),
            DensityRepr::Piecewise {
                breakpoints,
                matrices,
            } => Some(
                breakpoints
                    .windows(2)
                    .zip(matrices)
                    .map(|(w, m)| (w[0], w[1], m.clone()))
                    .collect(),
            ),
            DensityRepr::Sampled { .. } => None,
        }
    }

    pub(crate) fn check_domain(&self, domain: &SpatialDomain) -> Result<()> {
        let (field, first, last) = match &self.repr {
            DensityRepr::Constant(_) => return Ok(()),
            DensityRepr::Piecewise { breakpoints, .. } => {
                ("H.breakpoints", breakpoints[0], *breakpoints.last().unwrap())
            }
            DensityRepr::Sampled { grid, .. } => ("H.grid", grid[0], *grid.last().unwrap()),
        };
        if first != domain.a() || last != domain.b() {
            return Err(PhsError::invalid(
                field,
                format!(
                    "must span the domain [{}, {}], got [{first}, {last}]",
                    domain.a(),
                    domain.b()
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryForm {
    /// Rows act on `(f_del; e_del)`.
    FlowEffort,
    /// Rows act on `((Hx)(b); (Hx)(a))`.
    Position,
}

/// Input, constraint and output rows `W_B1`, `W_B2`, `W_C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryStructure {
    wb1: DMatrix<f64>,
    wb2: DMatrix<f64>,
    wc: DMatrix<f64>,
    form: BoundaryForm,
}

impl BoundaryStructure {
    pub fn new(
        wb1: DMatrix<f64>,
        wb2: DMatrix<f64>,
        wc: DMatrix<f64>,
        form: BoundaryForm,
    ) -> Result<Self> {
        let cols = wb1.ncols().max(wb2.ncols()).max(wc.ncols());
        if cols == 0 || !cols.is_multiple_of(2) {
            return Err(PhsError::invalid(
                "boundary",
                "rows must have 2n columns for some n >= 1",
            ));
        }
        let n = cols / 2;
        let m = wb1.nrows();
        for (field, mat, rows) in [("WB1", &wb1, m), ("WB2", &wb2, n.saturating_sub(m)), ("WC", &wc, m)] {
            if mat.nrows() != rows || (mat.nrows() > 0 && mat.ncols() != cols) {
                return Err(PhsError::invalid(
                    format!("boundary.{field}"),
                    format!(
                        "expected {rows}x{cols}, got {}x{}",
                        mat.nrows(),
                        mat.ncols()
                    ),
                ));
            }
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(PhsError::invalid(format!("boundary.{field}"), "entries must be finite"));
            }
        }
        if m > n {
            return Err(PhsError::invalid("boundary.WB1", format!("m = {m} exceeds n = {n}")));
        }
        // Normalize empty blocks to the right column count.
        let fix = |mat: DMatrix<f64>| {
            if mat.nrows() == 0 {
                DMatrix::zeros(0, cols)
            } else {
                mat
            }
        };
        let out = BoundaryStructure {
            wb1: fix(wb1),
            wb2: fix(wb2),
            wc: fix(wc),
            form,
        };
        let wb = out.wb();
        if linalg::rank(&wb, rank_tol()) < n {
            return Err(PhsError::invalid("boundary", "W_B must have full row rank n"));
        }
        if linalg::rank(&linalg::vstack(&wb, &out.wc), rank_tol()) < n + m {
            return Err(PhsError::invalid(
                "boundary",
                "[W_B; W_C] must have full row rank n + m",
            ));
        }
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.wb1.ncols() / 2
    }

    pub fn m(&self) -> usize {
        self.wb1.nrows()
    }

    pub fn form(&self) -> BoundaryForm {
        self.form
    }

    pub fn wb1(&self) -> &DMatrix<f64> {
        &self.wb1
    }

    pub fn wb2(&self) -> &DMatrix<f64> {
        &self.wb2
    }

    pub fn wc(&self) -> &DMatrix<f64> {
        &self.wc
    }

    /// `W_B = [W_B1; W_B2]`.
    pub fn wb(&self) -> DMatrix<f64> {
        linalg::vstack(&self.wb1, &self.wb2)
    }

    fn map_rows(&self, t: &DMatrix<f64>, form: BoundaryForm) -> BoundaryStructure {
        BoundaryStructure {
            wb1: &self.wb1 * t,
            wb2: &self.wb2 * t,
            wc: &self.wc * t,
            form,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortHamiltonianSystem {
    domain: SpatialDomain,
    matrices: StructureMatrices,
    density: HamiltonianDensity,
    boundary: BoundaryStructure,
}

impl PortHamiltonianSystem {
    /// Position-form boundaries are converted to flow/effort form.
    pub fn new(
        domain: SpatialDomain,
        matrices: StructureMatrices,
        density: HamiltonianDensity,
        boundary: BoundaryStructure,
    ) -> Result<Self> {
        let n = matrices.n();
        if density.n() != n {
            return Err(PhsError::invalid(
                "H",
                format!("expected {n}x{n} matrices, got {0}x{0}", density.n()),
            ));
        }
        if boundary.n() != n {
            return Err(PhsError::invalid(
                "boundary",
                format!("expected {} columns, got {}", 2 * n, 2 * boundary.n()),
            ));
        }
        density.check_domain(&domain)?;
        let boundary = match boundary.form() {
            BoundaryForm::FlowEffort => boundary,
            BoundaryForm::Position => convert_position_to_flow_effort(&boundary, &matrices)?,
        };
        Ok(PortHamiltonianSystem {
            domain,
            matrices,
            density,
            boundary,
        })
    }

    pub fn n(&self) -> usize {
        self.matrices.n()
    }

    pub fn m(&self) -> usize {
        self.boundary.m()
    }

    pub fn domain(&self) -> &SpatialDomain {
        &self.domain
    }

    pub fn matrices(&self) -> &StructureMatrices {
        &self.matrices
    }

    pub fn density(&self) -> &HamiltonianDensity {
        &self.density
    }

    /// Boundary rows in flow/effort form.
    pub fn boundary(&self) -> &BoundaryStructure {
        &self.boundary
    }

    /// Boundary rows acting on `((Hx)(b); (Hx)(a))`.
    pub fn position_boundary(&self) -> BoundaryStructure {
        self.boundary
            .map_rows(&extension_matrix(&self.matrices), BoundaryForm::Position)
    }

    /// `W_B R_ext`: the homogeneous boundary rows acting on `((Hx)(b); (Hx)(a))`.
    pub fn trace_constraint(&self) -> DMatrix<f64> {
        self.boundary.wb() * extension_matrix(&self.matrices)
    }

    /// Same boundary conditions in position form, with `(P1, P0)` replaced by `(-P1, -P0)`.
    pub fn reversed(&self) -> Result<PortHamiltonianSystem> {
        PortHamiltonianSystem::new(
            self.domain,
            self.matrices.negated(),
            self.density.clone(),
            self.position_boundary(),
        )
    }
}

/// `((Hx)(b); (Hx)(a))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTrace {
    pub wb: DVector<f64>,
    pub wa: DVector<f64>,
}

impl BoundaryTrace {
    pub fn new(wb: DVector<f64>, wa: DVector<f64>) -> Result<Self> {
        if wb.len() != wa.len() {
            return Err(PhsError::dim("boundary trace", wb.len(), wa.len()));
        }
        if wb.iter().chain(wa.iter()).any(|v| !v.is_finite()) {
            return Err(PhsError::invalid("trace", "entries must be finite"));
        }
        Ok(BoundaryTrace { wb, wa })
    }

    pub fn from_stacked(v: &DVector<f64>) -> Result<Self> {
        let n = v.len() / 2;
        Self::new(v.rows(0, n).into_owned(), v.rows(n, n).into_owned())
    }

    pub fn stacked(&self) -> DVector<f64> {
        let n = self.wb.len();
        DVector::from_fn(2 * n, |i, _| if i < n { self.wb[i] } else { self.wa[i - n] })
    }
}

/// Boundary flow `f_del` and effort `e_del`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEffortPair {
    pub f: DVector<f64>,
    pub e: DVector<f64>,
}

impl FlowEffortPair {
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.f.len();
        DVector::from_fn(2 * n, |i, _| if i < n { self.f[i] } else { self.e[i - n] })
    }

    /// `e_del^T f_del`.
    pub fn power(&self) -> f64 {
        self.e.dot(&self.f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Node,
    Cell,
}

/// Vector-valued samples on a grid of `N + 1` points, stored per node or per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<T: Scalar = f64> {
    grid: Vec<f64>,
    values: Vec<DVector<T>>,
    layout: Layout,
}

impl<T: Scalar> GridFunction<T> {
    pub fn new(grid: Vec<f64>, values: Vec<DVector<T>>, layout: Layout) -> Result<Self> {
        if grid.len() < 2 {
            return Err(PhsError::invalid("grid", "need at least two points"));
        }
        check_increasing("grid", &grid)?;
        let expected = match layout {
            Layout::Node => grid.len(),
            Layout::Cell => grid.len() - 1,
        };
        if values.len() != expected {
            return Err(PhsError::dim("grid function values", expected, values.len()));
        }
        if let Some(first) = values.first() {
            let n = first.len();
            if let Some(bad) = values.iter().find(|v| v.len() != n) {
                return Err(PhsError::dim("grid function component count", n, bad.len()));
            }
        }
        Ok(GridFunction {
            grid,
            values,
            layout,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[DVector<T>] {
        &self.values
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn cells(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn components(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    /// Sample locations: nodes or cell midpoints.
    pub fn points(&self) -> Vec<f64> {
        match self.layout {
            Layout::Node => self.grid.clone(),
            Layout::Cell => self.grid.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect(),
        }
    }
}

impl GridFunction<f64> {
    /// Midpoint sampling of `f` on `cells` uniform cells.
    pub fn sample_cells(
        domain: &SpatialDomain,
        cells: usize,
        f: impl Fn(f64) -> DVector<f64>,
    ) -> Result<Self> {
        let grid = domain.uniform_nodes(cells);
        let values = grid.windows(2).map(|w| f(0.5 * (w[0] + w[1]))).collect();
        GridFunction::new(grid, values, Layout::Cell)
    }

    pub fn sample_nodes(
        domain: &SpatialDomain,
        cells: usize,
        f: impl Fn(f64) -> DVector<f64>,
    ) -> Result<Self> {
        let grid = domain.uniform_nodes(cells);
        let values = grid.iter().map(|&z| f(z)).collect();
        GridFunction::new(grid, values, Layout::Node)
    }

    /// Values at cell midpoints; node data are averaged.
    pub fn midpoint_values(&self) -> Vec<DVector<f64>> {
        match self.layout {
            Layout::Cell => self.values.clone(),
            Layout::Node => self
                .values
                .windows(2)
                .map(|w| (&w[0] + &w[1]) * 0.5)
                .collect(),
        }
    }
}

/// `R_ext = (1/sqrt 2) [[P1, -P1], [I, I]]`.
pub fn extension_matrix(matrices: &StructureMatrices) -> DMatrix<f64> {
    let n = matrices.n();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut r = DMatrix::zeros(2 * n, 2 * n);
    r.view_mut((0, 0), (n, n)).copy_from(&(matrices.p1() * s));
    r.view_mut((0, n), (n, n)).copy_from(&(matrices.p1() * -s));
    r.view_mut((n, 0), (n, n)).fill_with_identity();
    r.view_mut((n, n), (n, n)).fill_with_identity();
    r.view_mut((n, 0), (n, 2 * n)).scale_mut(s);
    r
}

/// `R_ext^-1 = (1/sqrt 2) [[P1^-1, I], [-P1^-1, I]]`.
pub fn extension_matrix_inverse(matrices: &StructureMatrices) -> DMatrix<f64> {
    let n = matrices.n();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let p1_inv = matrices.p1_inverse();
    let mut r = DMatrix::zeros(2 * n, 2 * n);
    r.view_mut((0, 0), (n, n)).copy_from(&(&p1_inv * s));
    r.view_mut((n, 0), (n, n)).copy_from(&(&p1_inv * -s));
    for i in 0..n {
        r[(i, n + i)] = s;
        r[(n + i, n + i)] = s;
    }
    r
}

/// `(f_del; e_del) = R_ext (wb; wa)`.
pub fn boundary_flow_effort(
    trace: &BoundaryTrace,
    matrices: &StructureMatrices,
) -> Result<FlowEffortPair> {
    let n = matrices.n();
    if trace.wb.len() != n {
        return Err(PhsError::dim("boundary trace", n, trace.wb.len()));
    }
    let v = extension_matrix(matrices) * trace.stacked();
    Ok(FlowEffortPair {
        f: v.rows(0, n).into_owned(),
        e: v.rows(n, n).into_owned(),
    })
}

/// Rewrites position-form rows `W~` as `W = W~ R_ext^-1`.
pub fn convert_position_to_flow_effort(
    boundary: &BoundaryStructure,
    matrices: &StructureMatrices,
) -> Result<BoundaryStructure> {
    if boundary.form() != BoundaryForm::Position {
        return Err(PhsError::WrongBoundaryForm {
            expected: "position",
        });
    }
    if boundary.n() != matrices.n() {
        return Err(PhsError::dim("boundary columns", 2 * matrices.n(), 2 * boundary.n()));
    }
    Ok(boundary.map_rows(&extension_matrix_inverse(matrices), BoundaryForm::FlowEffort))
}

pub fn convert_flow_effort_to_position(
    boundary: &BoundaryStructure,
    matrices: &StructureMatrices,
) -> Result<BoundaryStructure> {
    if boundary.form() != BoundaryForm::FlowEffort {
        return Err(PhsError::WrongBoundaryForm {
            expected: "flow_effort",
        });
    }
    if boundary.n() != matrices.n() {
        return Err(PhsError::dim("boundary columns", 2 * matrices.n(), 2 * boundary.n()));
    }
    Ok(boundary.map_rows(&extension_matrix(matrices), BoundaryForm::Position))
}

/// `(1/2) int x^T H x dz` by the composite midpoint rule.
///
/// Cell data are used as given; node data are averaged to cell midpoints.
pub fn hamiltonian_energy(x: &GridFunction, density: &HamiltonianDensity) -> f64 {
    let mids = x.midpoint_values();
    x.grid()
        .windows(2)
        .zip(&mids)
        .map(|(w, v)| {
            let h = density.evaluate(0.5 * (w[0] + w[1]));
            0.5 * (w[1] - w[0]) * v.dot(&(h * v))
        })
        .sum()
}

/// `(1/2) [wb^T P1 wb - wa^T P1 wa]`, the right-hand side of the energy balance.
pub fn power_balance_rhs(trace: &BoundaryTrace, matrices: &StructureMatrices) -> Result<f64> {
    let n = matrices.n();
    if trace.wb.len() != n {
        return Err(PhsError::dim("boundary trace", n, trace.wb.len()));
    }
    let p1 = matrices.p1();
    Ok(0.5 * (trace.wb.dot(&(p1 * &trace.wb)) - trace.wa.dot(&(p1 * &trace.wa))))
}
