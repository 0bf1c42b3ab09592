//! Finite-dimensional Dirac structures: bond spaces with a symmetric power pairing,
//! self-orthogonality checks, composition over shared ports, and the discrete
//! port-Hamiltonian Dirac structure used by the simulator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PhsError, Result};
use crate::linalg;
use crate::model::{extension_matrix, GridFunction, Layout, StructureMatrices};
use crate::tolerance::Tolerances;

/// Flow space `F` and effort space `E` of equal dimension with the pairing
/// `<(f1, e1), (f2, e2)> = f1^T G e2 + f2^T G e1` for a duality matrix `G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BondSpace {
    duality: DMatrix<f64>,
    pairing_matrix: DMatrix<f64>,
}

impl BondSpace {
    /// Euclidean duality `G = I`.
    pub fn standard(dim: usize) -> Self {
        Self::with_duality(DMatrix::identity(dim, dim)).expect("identity duality is valid")
    }

    pub fn with_duality(duality: DMatrix<f64>) -> Result<Self> {
        let k = duality.nrows();
        if k == 0 || !duality.is_square() {
            return Err(PhsError::invalid("bond.duality", "must be a nonempty square matrix"));
        }
        if linalg::rank(&duality, Tolerances::default().rank) < k {
            return Err(PhsError::invalid("bond.duality", "pairing must be nondegenerate"));
        }
        let mut pairing_matrix = DMatrix::zeros(2 * k, 2 * k);
        pairing_matrix.view_mut((0, k), (k, k)).copy_from(&duality);
        pairing_matrix
            .view_mut((k, 0), (k, k))
            .copy_from(&duality.transpose());
        Ok(BondSpace {
            duality,
            pairing_matrix,
        })
    }

    pub fn dim_flow(&self) -> usize {
        self.duality.nrows()
    }

    pub fn dim_effort(&self) -> usize {
        self.duality.nrows()
    }

    pub fn dim(&self) -> usize {
        2 * self.duality.nrows()
    }

    pub fn duality(&self) -> &DMatrix<f64> {
        &self.duality
    }

    pub fn pairing_matrix(&self) -> &DMatrix<f64> {
        &self.pairing_matrix
    }
}

/// `<b1, b2>_+` with bond vectors laid out as `(f; e)`.
pub fn pairing(b1: &DVector<f64>, b2: &DVector<f64>, bond: &BondSpace) -> Result<f64> {
    for b in [b1, b2] {
        if b.len() != bond.dim() {
            return Err(PhsError::dim("bond vector", bond.dim(), b.len()));
        }
    }
    Ok(b1.dot(&(bond.pairing_matrix() * b2)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum DiracVerdict {
    Yes,
    /// Largest normalized Gram entry.
    NotIsotropic { max_entry: f64 },
    NotMaximal { dim: usize, expected: usize },
}

impl DiracVerdict {
    pub fn is_yes(&self) -> bool {
        matches!(self, DiracVerdict::Yes)
    }
}

/// Largest Gram entry `|<b_i, b_j>| / (|b_i| |b_j|)` over the columns of `basis`.
pub fn isotropy_defect(basis: &DMatrix<f64>, bond: &BondSpace) -> f64 {
    let gram = basis.transpose() * bond.pairing_matrix() * basis;
    let norms: Vec<f64> = basis.column_iter().map(|c| c.norm()).collect();
    let mut worst = 0.0_f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let scale = norms[i] * norms[j];
            if scale > 0.0 {
                worst = worst.max(gram[(i, j)].abs() / scale);
            }
        }
    }
    worst
}

/// Decides `D = D^perp` for `D = span(basis)`: isotropy plus `dim D = dim B / 2`.
pub fn is_dirac(basis: &DMatrix<f64>, bond: &BondSpace, tol: &Tolerances) -> Result<DiracVerdict> {
    if !bond.dim().is_multiple_of(2) {
        return Err(PhsError::invalid("bond", "bond space must be even-dimensional"));
    }
    if basis.nrows() != bond.dim() {
        return Err(PhsError::dim("Dirac basis rows", bond.dim(), basis.nrows()));
    }
    let dim = basis.ncols();
    if dim > 0 && linalg::rank(basis, tol.rank) < dim {
        return Err(PhsError::invalid("basis", "columns must be linearly independent"));
    }
    let defect = isotropy_defect(basis, bond);
    if defect > tol.isotropy {
        return Ok(DiracVerdict::NotIsotropic { max_entry: defect });
    }
    if dim != bond.dim() / 2 {
        return Ok(DiracVerdict::NotMaximal {
            dim,
            expected: bond.dim() / 2,
        });
    }
    Ok(DiracVerdict::Yes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDiracStructure {
    bond: BondSpace,
    basis: DMatrix<f64>,
}

impl FiniteDiracStructure {
    /// Accepts `span(basis)` only if it is a Dirac structure.
    pub fn new(bond: BondSpace, basis: DMatrix<f64>) -> Result<Self> {
        match is_dirac(&basis, &bond, &Tolerances::default())? {
            DiracVerdict::Yes => Ok(FiniteDiracStructure { bond, basis }),
            other => Err(PhsError::Dirac(format!("not a Dirac structure: {other:?}"))),
        }
    }

    /// `{(J e, e)}` for a skew-symmetric `J` on the standard bond space.
    pub fn skew_graph(j: &DMatrix<f64>) -> Result<Self> {
        let k = j.nrows();
        if !j.is_square() || linalg::max_abs(&(j + j.transpose())) > 1e-12 * linalg::max_abs(j).max(1.0) {
            return Err(PhsError::invalid("J", "must be square and skew-symmetric"));
        }
        let basis = linalg::vstack(j, &DMatrix::identity(k, k));
        Self::new(BondSpace::standard(k), basis)
    }

    pub fn bond(&self) -> &BondSpace {
        &self.bond
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Image under `(f, e) -> (T f, T^-T e)`, which preserves the standard pairing.
    pub fn transformed(&self, t: &DMatrix<f64>) -> Result<Self> {
        let k = self.bond.dim_flow();
        if t.shape() != (k, k) {
            return Err(PhsError::dim("transform", k, t.nrows()));
        }
        let t_inv_t = t
            .clone()
            .try_inverse()
            .ok_or_else(|| PhsError::invalid("transform", "must be invertible"))?
            .transpose();
        let f = t * self.basis.rows(0, k);
        let e = t_inv_t * self.basis.rows(k, k);
        let basis = linalg::vstack(&f, &e);
        Self::new(self.bond.clone(), basis)
    }

    /// Exchanges flow and effort of the listed ports.
    pub fn swap_ports(&self, ports: &[usize]) -> Result<Self> {
        let k = self.bond.dim_flow();
        let mut basis = self.basis.clone();
        for &p in ports {
            if p >= k {
                return Err(PhsError::invalid("ports", format!("port {p} out of range")));
            }
            basis.swap_rows(p, k + p);
        }
        Self::new(self.bond.clone(), basis)
    }
}

/// Result of [`compose`]; maximality of the composite is reported, not assumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub bond: BondSpace,
    pub basis: DMatrix<f64>,
    pub verdict: DiracVerdict,
}

impl Composition {
    pub fn into_dirac(self) -> Result<FiniteDiracStructure> {
        match self.verdict {
            DiracVerdict::Yes => Ok(FiniteDiracStructure {
                bond: self.bond,
                basis: self.basis,
            }),
            other => Err(PhsError::Dirac(format!("composition is not Dirac: {other:?}"))),
        }
    }
}

/// Couples `d1` and `d2` through their last `shared` ports.
///
/// With `d1` on ports `(p1, c)` and `d2` on ports `(p2, c)`, the composite lives on
/// `(p1, p2)` and contains `(f1, f2, e1, e2)` whenever some `(fc, ec)` gives
/// `(f1, fc, e1, ec)` in `d1` and `(f2, fc, e2, -ec)` in `d2`.
pub fn compose(
    d1: &FiniteDiracStructure,
    d2: &FiniteDiracStructure,
    shared: usize,
    tol: &Tolerances,
) -> Result<Composition> {
    let k1 = d1.bond.dim_flow();
    let k2 = d2.bond.dim_flow();
    if shared > k1 || shared > k2 {
        return Err(PhsError::invalid(
            "shared",
            format!("{shared} shared ports exceed port counts {k1} and {k2}"),
        ));
    }
    let (p1, p2, c) = (k1 - shared, k2 - shared, shared);
    if p1 + p2 == 0 {
        return Err(PhsError::invalid("shared", "composite would have no external ports"));
    }
    let g1 = d1.bond.duality();
    let g2 = d2.bond.duality();
    let shared_block_ok = linalg::max_abs(
        &(g1.view((p1, p1), (c, c)) - g2.view((p2, p2), (c, c))),
    ) == 0.0;
    let decoupled = |g: &DMatrix<f64>, p: usize| {
        g.view((0, p), (p, c)).iter().all(|&v| v == 0.0)
            && g.view((p, 0), (c, p)).iter().all(|&v| v == 0.0)
    };
    if !shared_block_ok || !decoupled(g1, p1) || !decoupled(g2, p2) {
        return Err(PhsError::invalid(
            "shared",
            "shared ports must carry the same duality and be decoupled from private ports",
        ));
    }

    let b1 = &d1.basis;
    let b2 = &d2.basis;
    let (m1, m2) = (b1.ncols(), b2.ncols());
    // Matching conditions on (alpha; beta): fc agrees, ec flips sign.
    let mut constraint = DMatrix::zeros(2 * c, m1 + m2);
    constraint
        .view_mut((0, 0), (c, m1))
        .copy_from(&b1.rows(p1, c));
    constraint
        .view_mut((0, m1), (c, m2))
        .copy_from(&(-b2.rows(p2, c)));
    constraint
        .view_mut((c, 0), (c, m1))
        .copy_from(&b1.rows(k1 + p1, c));
    constraint
        .view_mut((c, m1), (c, m2))
        .copy_from(&b2.rows(k2 + p2, c));
    let coeffs = if c == 0 {
        DMatrix::identity(m1 + m2, m1 + m2)
    } else {
        linalg::null_space(&constraint, tol.rank)
    };

    // External components (f1, f2, e1, e2) of each admissible combination.
    let k = p1 + p2;
    let mut external = DMatrix::zeros(2 * k, m1 + m2);
    external.view_mut((0, 0), (p1, m1)).copy_from(&b1.rows(0, p1));
    external.view_mut((p1, m1), (p2, m2)).copy_from(&b2.rows(0, p2));
    external
        .view_mut((k, 0), (p1, m1))
        .copy_from(&b1.rows(k1, p1));
    external
        .view_mut((k + p1, m1), (p2, m2))
        .copy_from(&b2.rows(k2, p2));
    let basis = linalg::column_space(&(external * coeffs), tol.rank);

    let duality = linalg::block_diag(
        &g1.view((0, 0), (p1, p1)).into_owned(),
        &g2.view((0, 0), (p2, p2)).into_owned(),
    );
    let bond = BondSpace::with_duality(duality)?;
    let verdict = is_dirac(&basis, &bond, tol)?;
    Ok(Composition {
        bond,
        basis,
        verdict,
    })
}

/// Discrete port-Hamiltonian Dirac structure on a grid.
///
/// Nodal efforts `e_0..e_N` produce cell flows
/// `f_k = P1 (e_{k+1} - e_k) / dz_k + P0 (e_k + e_{k+1}) / 2` and the boundary pair
/// `(f_del; e_del) = R_ext (e_N; e_0)`. Paired with the cell-averaged efforts under
/// `sum dz_k f_k^T e_k - f_del^T e_del`, the image is exactly a Dirac structure.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedPHDirac {
    matrices: StructureMatrices,
    grid: Vec<f64>,
    derivative_operator: DMatrix<f64>,
}

impl DiscretizedPHDirac {
    pub fn new(matrices: StructureMatrices, grid: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 {
            return Err(PhsError::invalid("grid", "need at least two points"));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(PhsError::invalid("grid", "must be strictly increasing"));
        }
        let n = matrices.n();
        let cells = grid.len() - 1;
        let mut d = DMatrix::zeros(n * cells, n * (cells + 1));
        for k in 0..cells {
            let h = grid[k + 1] - grid[k];
            let left = matrices.p1() * (-1.0 / h) + matrices.p0() * 0.5;
            let right = matrices.p1() * (1.0 / h) + matrices.p0() * 0.5;
            d.view_mut((n * k, n * k), (n, n)).copy_from(&left);
            d.view_mut((n * k, n * (k + 1)), (n, n)).copy_from(&right);
        }
        Ok(DiscretizedPHDirac {
            matrices,
            grid,
            derivative_operator: d,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn cells(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn matrices(&self) -> &StructureMatrices {
        &self.matrices
    }

    /// Maps stacked nodal efforts to stacked cell flows.
    pub fn derivative_operator(&self) -> &DMatrix<f64> {
        &self.derivative_operator
    }

    fn stack(values: &[DVector<f64>]) -> DVector<f64> {
        let n = values.first().map_or(0, |v| v.len());
        DVector::from_iterator(values.len() * n, values.iter().flat_map(|v| v.iter().copied()))
    }

    fn check_nodal(&self, e: &GridFunction) -> Result<()> {
        if e.layout() != Layout::Node || e.grid() != self.grid.as_slice() {
            return Err(PhsError::invalid("e", "must be nodal data on the operator grid"));
        }
        if e.components() != self.matrices.n() {
            return Err(PhsError::dim("effort components", self.matrices.n(), e.components()));
        }
        Ok(())
    }

    /// Cell flows and boundary pair generated from nodal efforts.
    pub fn apply(&self, e: &GridFunction) -> Result<(GridFunction, crate::model::FlowEffortPair)> {
        self.check_nodal(e)?;
        let n = self.matrices.n();
        let f = &self.derivative_operator * Self::stack(e.values());
        let cells = (0..self.cells())
            .map(|k| f.rows(n * k, n).into_owned())
            .collect();
        let f = GridFunction::new(self.grid.clone(), cells, Layout::Cell)?;
        Ok((f, self.boundary_pair(e)))
    }

    fn boundary_pair(&self, e: &GridFunction) -> crate::model::FlowEffortPair {
        let n = self.matrices.n();
        let vals = e.values();
        let trace = DVector::from_iterator(
            2 * n,
            vals[vals.len() - 1].iter().chain(vals[0].iter()).copied(),
        );
        let v = extension_matrix(&self.matrices) * trace;
        crate::model::FlowEffortPair {
            f: v.rows(0, n).into_owned(),
            e: v.rows(n, n).into_owned(),
        }
    }

    /// Bond space `(f_cells, f_del; e_cells, e_del)` with duality `blockdiag(dz_k I, -I)`.
    pub fn bond(&self) -> BondSpace {
        let n = self.matrices.n();
        let cells = self.cells();
        let mut g = DMatrix::zeros(n * (cells + 1), n * (cells + 1));
        for k in 0..cells {
            let h = self.grid[k + 1] - self.grid[k];
            for i in 0..n {
                g[(n * k + i, n * k + i)] = h;
            }
        }
        for i in 0..n {
            g[(n * cells + i, n * cells + i)] = -1.0;
        }
        BondSpace::with_duality(g).expect("positive cell widths")
    }

    /// Basis of the discrete Dirac structure: one column per nodal effort unit vector.
    pub fn basis(&self) -> DMatrix<f64> {
        let n = self.matrices.n();
        let cells = self.cells();
        let dim = n * (cells + 1);
        let r = extension_matrix(&self.matrices);
        let mut basis = DMatrix::zeros(2 * dim, dim);
        // Cell flows.
        basis
            .view_mut((0, 0), (n * cells, dim))
            .copy_from(&self.derivative_operator);
        for k in 0..cells {
            for i in 0..n {
                // Cell-averaged efforts.
                basis[(dim + n * k + i, n * k + i)] = 0.5;
                basis[(dim + n * k + i, n * (k + 1) + i)] = 0.5;
            }
        }
        // Boundary pair from (e_N; e_0).
        for row in 0..n {
            for col in 0..n {
                basis[(n * cells + row, n * cells + col)] = r[(row, col)];
                basis[(n * cells + row, col)] = r[(row, n + col)];
                basis[(dim + n * cells + row, n * cells + col)] = r[(n + row, col)];
                basis[(dim + n * cells + row, col)] = r[(n + row, n + col)];
            }
        }
        basis
    }

    /// `sum dz_k f_k^T e(mid_k) - f_del^T e_del` for flows generated from nodal samples of
    /// `e`; the exact effort at midpoints exposes the second-order consistency defect.
    pub fn power_defect(&self, e: impl Fn(f64) -> DVector<f64>) -> Result<f64> {
        let nodal: Vec<DVector<f64>> = self.grid.iter().map(|&z| e(z)).collect();
        let e_nodes = GridFunction::new(self.grid.clone(), nodal, Layout::Node)?;
        let (f, pair) = self.apply(&e_nodes)?;
        let interior: f64 = self
            .grid
            .windows(2)
            .zip(f.values())
            .map(|(w, fk)| (w[1] - w[0]) * fk.dot(&e(0.5 * (w[0] + w[1]))))
            .sum();
        Ok(interior - pair.power())
    }
}

/// Max-norm defect of `f = P1 de/dz + P0 e` and `(f_del; e_del) = R_ext (e(b); e(a))`
/// under the discrete operator; zero for exact members.
pub fn ph_dirac_membership_residual(
    op: &DiscretizedPHDirac,
    f: &GridFunction,
    pair_f: &DVector<f64>,
    e: &GridFunction,
    pair_e: &DVector<f64>,
) -> Result<f64> {
    op.check_nodal(e)?;
    if f.layout() != Layout::Cell || f.grid() != op.grid() {
        return Err(PhsError::invalid("f", "must be cell data on the operator grid"));
    }
    let (expected_f, expected_pair) = op.apply(e)?;
    let mut worst = 0.0_f64;
    for (a, b) in f.values().iter().zip(expected_f.values()) {
        worst = worst.max((a - b).amax());
    }
    worst = worst.max((pair_f - &expected_pair.f).amax());
    worst = worst.max((pair_e - &expected_pair.e).amax());
    Ok(worst)
}

/// Resistive closure output for the heat equation.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatClosure {
    /// Nodal state `x = e1 / h`.
    pub x: GridFunction,
    /// Cell efforts `e2 = -alpha de1/dz`.
    pub e2: GridFunction,
    /// Cell flows `f2 = e2 / alpha`.
    pub f2: GridFunction,
    /// `int f2 alpha f2 dz` by the midpoint rule.
    pub dissipation: f64,
}

/// Applies `e2 = -alpha de1/dz`, `f2 = e2 / alpha` to nodal scalar `e1`.
///
/// `alpha` is sampled at cell midpoints, `h` at the nodes.
pub fn closure_residual_heat(e1: &GridFunction, alpha: &[f64], h: &[f64]) -> Result<HeatClosure> {
    if e1.layout() != Layout::Node || e1.components() != 1 {
        return Err(PhsError::invalid("e1", "must be scalar nodal data"));
    }
    let cells = e1.cells();
    if alpha.len() != cells {
        return Err(PhsError::dim("alpha samples", cells, alpha.len()));
    }
    if h.len() != cells + 1 {
        return Err(PhsError::dim("h samples", cells + 1, h.len()));
    }
    if let Some(bad) = alpha.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(PhsError::invalid("alpha", format!("samples must be positive, got {bad}")));
    }
    if let Some(bad) = h.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(PhsError::invalid("h", format!("samples must be positive, got {bad}")));
    }
    let grid = e1.grid().to_vec();
    let vals = e1.values();
    let mut e2 = Vec::with_capacity(cells);
    let mut f2 = Vec::with_capacity(cells);
    let mut dissipation = 0.0;
    for k in 0..cells {
        let dz = grid[k + 1] - grid[k];
        let slope = (vals[k + 1][0] - vals[k][0]) / dz;
        let e = -alpha[k] * slope;
        let f = e / alpha[k];
        dissipation += dz * f * alpha[k] * f;
        e2.push(DVector::from_element(1, e));
        f2.push(DVector::from_element(1, f));
    }
    let x = vals
        .iter()
        .zip(h)
        .map(|(v, &hj)| v / hj)
        .collect();
    Ok(HeatClosure {
        x: GridFunction::new(grid.clone(), x, Layout::Node)?,
        e2: GridFunction::new(grid.clone(), e2, Layout::Cell)?,
        f2: GridFunction::new(grid, f2, Layout::Cell)?,
        dissipation,
    })
}
