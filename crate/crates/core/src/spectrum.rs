//! Boundary eigenvalue problem `P1 (H phi)' + P0 H phi = lambda phi` with the homogeneous
//! boundary rows, solved through the transfer matrix of `psi = H phi`:
//! `psi' = P1^-1 (lambda H^-1 - P0) psi`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{PhsError, Result};
use crate::linalg;
use crate::model::{GridFunction, Layout, PortHamiltonianSystem};
use crate::tolerance::Tolerances;

pub type C64 = Complex<f64>;

/// Axis-aligned rectangle in the complex plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Region {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Result<Self> {
        if [re_min, re_max, im_min, im_max].iter().any(|v| !v.is_finite()) {
            return Err(PhsError::invalid("region", "bounds must be finite"));
        }
        if re_min > re_max || im_min > im_max {
            return Err(PhsError::invalid("region", "need re_min <= re_max and im_min <= im_max"));
        }
        Ok(Region {
            re_min,
            re_max,
            im_min,
            im_max,
        })
    }

    /// `[-5, 5] x [-20, 20]` scaled by `1 / (b - a)`.
    pub fn default_for(system: &PortHamiltonianSystem) -> Self {
        let l = system.domain().length();
        Region {
            re_min: -5.0 / l,
            re_max: 5.0 / l,
            im_min: -20.0 / l,
            im_max: 20.0 / l,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.re_min >= self.re_max || self.im_min >= self.im_max
    }

    pub fn contains(&self, z: C64) -> bool {
        z.re >= self.re_min && z.re <= self.re_max && z.im >= self.im_min && z.im <= self.im_max
    }

    pub fn center(&self) -> C64 {
        C64::new(0.5 * (self.re_min + self.re_max), 0.5 * (self.im_min + self.im_max))
    }

    fn width(&self) -> f64 {
        self.re_max - self.re_min
    }

    fn height(&self) -> f64 {
        self.im_max - self.im_min
    }

    fn inflate(&self, eps: f64) -> Region {
        Region {
            re_min: self.re_min - eps,
            re_max: self.re_max + eps,
            im_min: self.im_min - eps,
            im_max: self.im_max + eps,
        }
    }

    fn corners(&self) -> [C64; 4] {
        [
            C64::new(self.re_min, self.im_min),
            C64::new(self.re_max, self.im_min),
            C64::new(self.re_max, self.im_max),
            C64::new(self.re_min, self.im_max),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMethod {
    /// Products of matrix exponentials over constant pieces of `H`.
    MatrixExponential,
    /// Adaptive RK4 with step doubling.
    Rk4,
}

/// Transfer matrix and characteristic function of one system.
#[derive(Debug, Clone)]
pub struct TransferEvaluator {
    system: PortHamiltonianSystem,
    method: TransferMethod,
    constraint: DMatrix<C64>,
    p1_inv: DMatrix<f64>,
    p1_inv_p0: DMatrix<f64>,
    /// `(z0, z1, H^-1)` per constant piece, for the exponential path.
    pieces: Vec<(f64, f64, DMatrix<f64>)>,
    /// Points where the RK4 path restarts (kinks of `H`).
    breaks: Vec<f64>,
    tol: Tolerances,
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|v| C64::new(v, 0.0))
}

impl TransferEvaluator {
    /// Exponential path when `H` is piecewise constant, RK4 otherwise.
    pub fn new(system: &PortHamiltonianSystem, tol: &Tolerances) -> Result<Self> {
        let method = if system.density().constant_pieces(system.domain()).is_some() {
            TransferMethod::MatrixExponential
        } else {
            TransferMethod::Rk4
        };
        Self::with_method(system, method, tol)
    }

    pub fn with_method(
        system: &PortHamiltonianSystem,
        method: TransferMethod,
        tol: &Tolerances,
    ) -> Result<Self> {
        let invert = |h: &DMatrix<f64>| {
            h.clone()
                .try_inverse()
                .ok_or_else(|| PhsError::invalid("H", "not invertible"))
        };
        let pieces = match (method, system.density().constant_pieces(system.domain())) {
            (TransferMethod::MatrixExponential, Some(p)) => p
                .into_iter()
                .map(|(z0, z1, h)| Ok((z0, z1, invert(&h)?)))
                .collect::<Result<Vec<_>>>()?,
            (TransferMethod::MatrixExponential, None) => {
                return Err(PhsError::invalid(
                    "method",
                    "matrix exponentials need a piecewise-constant H",
                ))
            }
            (TransferMethod::Rk4, _) => Vec::new(),
        };
        let mut breaks = vec![system.domain().a(), system.domain().b()];
        match system.density().repr() {
            crate::model::DensityRepr::Constant(_) => {}
            crate::model::DensityRepr::Piecewise { breakpoints, .. } => breaks = breakpoints.clone(),
            crate::model::DensityRepr::Sampled { grid, .. } => breaks = grid.clone(),
        }
        let p1_inv = system.matrices().p1_inverse();
        let p1_inv_p0 = &p1_inv * system.matrices().p0();
        Ok(TransferEvaluator {
            system: system.clone(),
            method,
            constraint: to_complex(&system.trace_constraint()),
            p1_inv,
            p1_inv_p0,
            pieces,
            breaks,
            tol: *tol,
        })
    }

    pub fn method(&self) -> TransferMethod {
        self.method
    }

    pub fn system(&self) -> &PortHamiltonianSystem {
        &self.system
    }

    fn generator(&self, lambda: C64, h_inv: &DMatrix<f64>) -> DMatrix<C64> {
        let a = to_complex(&(&self.p1_inv * h_inv));
        a * lambda - to_complex(&self.p1_inv_p0)
    }

    fn generator_at(&self, lambda: C64, z: f64) -> Result<DMatrix<C64>> {
        let h = self.system.density().evaluate(z);
        let h_inv = h.try_inverse().ok_or_else(|| PhsError::Transfer {
            zeta: z,
            reason: "H not invertible".into(),
        })?;
        Ok(self.generator(lambda, &h_inv))
    }

    fn rk4_step(&self, lambda: C64, z: f64, psi: &DMatrix<C64>, h: f64) -> Result<DMatrix<C64>> {
        let g0 = self.generator_at(lambda, z)?;
        let gm = self.generator_at(lambda, z + 0.5 * h)?;
        let g1 = self.generator_at(lambda, z + h)?;
        let hc = C64::new(h, 0.0);
        let half = C64::new(0.5 * h, 0.0);
        let k1 = &g0 * psi;
        let k2 = &gm * (psi + &k1 * half);
        let k3 = &gm * (psi + &k2 * half);
        let k4 = &g1 * (psi + &k3 * hc);
        Ok(psi + (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * (hc / 6.0))
    }

    /// Adaptive RK4 on `[z0, z1]`, which must not contain a kink of `H`.
    fn rk4_segment(&self, lambda: C64, z0: f64, z1: f64) -> Result<DMatrix<C64>> {
        let n = self.system.n();
        let mut psi = DMatrix::<C64>::identity(n, n);
        let span = z1 - z0;
        let mut z = z0;
        let mut h = span / 8.0;
        let tol = self.tol.transfer;
        let fifteenth = C64::new(1.0 / 15.0, 0.0);
        while z < z1 {
            let last = z + h >= z1;
            let step = if last { z1 - z } else { h };
            if step <= 1e-14 * span.max(1.0) && !last {
                return Err(PhsError::Transfer {
                    zeta: z,
                    reason: "step size underflow".into(),
                });
            }
            let full = self.rk4_step(lambda, z, &psi, step)?;
            let half = self.rk4_step(lambda, z, &psi, 0.5 * step)?;
            let two = self.rk4_step(lambda, z + 0.5 * step, &half, 0.5 * step)?;
            let diff = &two - &full;
            let scale = two.iter().map(|c| c.norm()).fold(1.0, f64::max);
            let err = diff.iter().map(|c| c.norm()).fold(0.0, f64::max) / (15.0 * scale);
            if !err.is_finite() {
                return Err(PhsError::Transfer {
                    zeta: z,
                    reason: "non-finite propagation".into(),
                });
            }
            if err <= tol {
                psi = &two + diff * fifteenth;
                z = if last { z1 } else { z + step };
                let grow = if err == 0.0 { 4.0 } else { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 4.0) };
                h = step * grow;
            } else {
                h = step * (0.9 * (tol / err).powf(0.2)).clamp(0.1, 0.9);
                if h <= 1e-14 * span.max(1.0) {
                    return Err(PhsError::Transfer {
                        zeta: z,
                        reason: "step size underflow".into(),
                    });
                }
            }
        }
        Ok(psi)
    }

    /// Propagator from `z0` to `z1 >= z0`.
    pub fn transfer_between(&self, lambda: C64, z0: f64, z1: f64) -> Result<DMatrix<C64>> {
        let n = self.system.n();
        let mut total = DMatrix::<C64>::identity(n, n);
        if z1 <= z0 {
            return Ok(total);
        }
        match self.method {
            TransferMethod::MatrixExponential => {
                for (p0, p1, h_inv) in &self.pieces {
                    let lo = p0.max(z0);
                    let hi = p1.min(z1);
                    if hi > lo {
                        let g = self.generator(lambda, h_inv) * C64::new(hi - lo, 0.0);
                        total = g.exp() * total;
                    }
                }
            }
            TransferMethod::Rk4 => {
                let mut cuts = vec![z0];
                cuts.extend(self.breaks.iter().copied().filter(|&p| p > z0 && p < z1));
                cuts.push(z1);
                for w in cuts.windows(2) {
                    total = self.rk4_segment(lambda, w[0], w[1])? * total;
                }
            }
        }
        Ok(total)
    }

    /// `T(lambda)` with `psi(b) = T(lambda) psi(a)`.
    pub fn transfer_matrix(&self, lambda: C64) -> Result<DMatrix<C64>> {
        let d = self.system.domain();
        self.transfer_between(lambda, d.a(), d.b())
    }

    /// `W_B R_ext [T(lambda); I]`.
    pub fn boundary_matrix(&self, lambda: C64) -> Result<DMatrix<C64>> {
        let n = self.system.n();
        let t = self.transfer_matrix(lambda)?;
        let cb = self.constraint.columns(0, n);
        let ca = self.constraint.columns(n, n);
        Ok(cb * t + ca)
    }

    pub fn characteristic_function(&self, lambda: C64) -> Result<C64> {
        Ok(self.boundary_matrix(lambda)?.determinant())
    }

    /// Rate of phase change of `char` along the imaginary direction, `(b - a) / min |Delta|`.
    fn phase_rate(&self) -> f64 {
        let d = self.system.domain();
        let mut slowest = f64::INFINITY;
        for z in d.uniform_nodes(8) {
            let h = self.system.density().evaluate(z);
            let (hs, _) = linalg::spd_sqrt(&h);
            let (vals, _) = linalg::sym_eigen(&(&hs * self.system.matrices().p1() * &hs));
            slowest = slowest.min(vals.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
        }
        self.system.n() as f64 * d.length() / slowest
    }
}

/// One refined eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub value: C64,
    pub multiplicity: usize,
    /// `|char(lambda)|` after refinement.
    pub residual: f64,
    /// Residual relative to the largest `|char|` on the enclosing cell contour.
    pub relative_residual: f64,
    /// Set for clusters resolved only to the subdivision floor.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub region: Region,
    /// Zero count in `region` from the argument principle.
    pub count: usize,
    pub eigenvalues: Vec<Eigenvalue>,
    /// Cells whose zeros could not be isolated.
    pub inconclusive: Vec<Region>,
}

impl SpectrumResult {
    pub fn values(&self) -> Vec<C64> {
        self.eigenvalues.iter().map(|e| e.value).collect()
    }
}

struct Contour {
    winding: i64,
    max_abs: f64,
}

struct Finder<'a> {
    ev: &'a TransferEvaluator,
    samples_per_unit: f64,
    floor: f64,
    newton_tol: f64,
}

const MAX_SEGMENT_DEPTH: u32 = 24;
const SPLIT_FRACTIONS: [f64; 4] = [0.5137, 0.4781, 0.5371, 0.4567];

impl Finder<'_> {
    fn eval(&self, z: C64) -> Result<C64> {
        let c = self.ev.characteristic_function(z)?;
        if !(c.re.is_finite() && c.im.is_finite()) {
            return Err(PhsError::Transfer {
                zeta: f64::NAN,
                reason: format!("characteristic function not finite at {z}"),
            });
        }
        Ok(c)
    }

    /// Accumulated phase along `[z0, z1]`; `None` if a zero sits on the segment.
    fn segment(&self, z0: C64, c0: C64, z1: C64, c1: C64, depth: u32, max_abs: &mut f64) -> Result<Option<f64>> {
        if c0 == C64::new(0.0, 0.0) || c1 == C64::new(0.0, 0.0) {
            return Ok(None);
        }
        let d = (c1 / c0).arg();
        if d.abs() <= 0.3 {
            return Ok(Some(d));
        }
        if depth >= MAX_SEGMENT_DEPTH {
            return Ok(None);
        }
        let zm = (z0 + z1) * 0.5;
        let cm = self.eval(zm)?;
        *max_abs = max_abs.max(cm.norm());
        let Some(left) = self.segment(z0, c0, zm, cm, depth + 1, max_abs)? else {
            return Ok(None);
        };
        let Some(right) = self.segment(zm, cm, z1, c1, depth + 1, max_abs)? else {
            return Ok(None);
        };
        Ok(Some(left + right))
    }

    fn edge(&self, z0: C64, z1: C64, max_abs: &mut f64) -> Result<Option<f64>> {
        let len = (z1 - z0).norm();
        let pieces = ((len * self.samples_per_unit).ceil() as usize).clamp(8, 100_000);
        let mut total = 0.0;
        let mut prev_z = z0;
        let mut prev_c = self.eval(z0)?;
        *max_abs = max_abs.max(prev_c.norm());
        for k in 1..=pieces {
            let z = if k == pieces {
                z1
            } else {
                z0 + (z1 - z0) * (k as f64 / pieces as f64)
            };
            let c = self.eval(z)?;
            *max_abs = max_abs.max(c.norm());
            match self.segment(prev_z, prev_c, z, c, 0, max_abs)? {
                Some(d) => total += d,
                None => return Ok(None),
            }
            prev_z = z;
            prev_c = c;
        }
        Ok(Some(total))
    }

    /// Argument-principle winding number; `None` when a zero lies on the contour.
    fn contour(&self, rect: &Region) -> Result<Option<Contour>> {
        let corners = rect.corners();
        let mut total = 0.0;
        let mut max_abs = 0.0_f64;
        for i in 0..4 {
            match self.edge(corners[i], corners[(i + 1) % 4], &mut max_abs)? {
                Some(d) => total += d,
                None => return Ok(None),
            }
        }
        let turns = total / std::f64::consts::TAU;
        let winding = turns.round();
        if (turns - winding).abs() > 0.05 || winding < 0.0 {
            return Ok(None);
        }
        Ok(Some(Contour {
            winding: winding as i64,
            max_abs,
        }))
    }

    fn derivative(&self, z: C64) -> Result<C64> {
        let step = 1e-6 * (1.0 + z.norm());
        let dz = C64::new(step, 0.0);
        Ok((self.eval(z + dz)? - self.eval(z - dz)?) / (2.0 * step))
    }

    /// Newton iteration `z -= m f / f'` from the centre of `cell`. Iterates leaving the
    /// cell inflated by its own size count as non-convergence.
    fn newton(&self, cell: &Region, multiplicity: usize, scale: f64) -> Result<Option<(C64, f64)>> {
        let bounds = cell.inflate(cell.width().max(cell.height()));
        let mut z = cell.center();
        let m = multiplicity as f64;
        for _ in 0..60 {
            let f = self.eval(z)?;
            if f.norm() <= 1e-15 * scale {
                return Ok(Some((z, f.norm())));
            }
            let df = self.derivative(z)?;
            if df.norm() == 0.0 || !df.re.is_finite() {
                return Ok(None);
            }
            let step = f / df * m;
            z -= step;
            if !(z.re.is_finite() && z.im.is_finite()) || !bounds.contains(z) {
                return Ok(None);
            }
            if step.norm() <= 1e-14 * (1.0 + z.norm()) {
                let f = self.eval(z)?;
                return Ok(Some((z, f.norm())));
            }
        }
        let f = self.eval(z)?;
        if f.norm() <= self.newton_tol * scale {
            Ok(Some((z, f.norm())))
        } else {
            Ok(None)
        }
    }

    fn split(rect: &Region, frac: f64) -> (Region, Region) {
        if rect.width() >= rect.height() {
            let x = rect.re_min + frac * rect.width();
            (Region { re_max: x, ..*rect }, Region { re_min: x, ..*rect })
        } else {
            let y = rect.im_min + frac * rect.height();
            (Region { im_max: y, ..*rect }, Region { im_min: y, ..*rect })
        }
    }

    fn solve(
        &self,
        rect: Region,
        contour: Contour,
        out: &mut Vec<Eigenvalue>,
        inconclusive: &mut Vec<Region>,
    ) -> Result<()> {
        let count = contour.winding as usize;
        if count == 0 {
            return Ok(());
        }
        let size = rect.width().max(rect.height());
        let margin = 1e-9 * (1.0 + size);
        let inside = |z: C64| rect.inflate(margin).contains(z);
        if count == 1 {
            if let Some((z, res)) = self.newton(&rect, 1, contour.max_abs)? {
                if inside(z) {
                    out.push(Eigenvalue {
                        value: z,
                        multiplicity: 1,
                        residual: res,
                        relative_residual: res / contour.max_abs,
                        flagged: false,
                    });
                    return Ok(());
                }
            }
        }
        if size <= self.floor * (1.0 + rect.center().norm()) {
            match self.newton(&rect, count, contour.max_abs)? {
                Some((z, res)) if inside(z) => out.push(Eigenvalue {
                    value: z,
                    multiplicity: count,
                    residual: res,
                    relative_residual: res / contour.max_abs,
                    flagged: count > 1,
                }),
                _ => inconclusive.push(rect),
            }
            return Ok(());
        }
        for frac in SPLIT_FRACTIONS {
            let (lo, hi) = Self::split(&rect, frac);
            let (Some(c_lo), Some(c_hi)) = (self.contour(&lo)?, self.contour(&hi)?) else {
                continue;
            };
            if (c_lo.winding + c_hi.winding) as usize != count {
                continue;
            }
            self.solve(lo, c_lo, out, inconclusive)?;
            self.solve(hi, c_hi, out, inconclusive)?;
            return Ok(());
        }
        inconclusive.push(rect);
        Ok(())
    }
}

/// Eigenvalues in `region` by argument-principle counting, subdivision and Newton
/// refinement. Results are sorted by real then imaginary part.
pub fn find_eigenvalues(
    region: &Region,
    evaluator: &TransferEvaluator,
    max_count: usize,
) -> Result<SpectrumResult> {
    if region.is_empty() {
        return Ok(SpectrumResult {
            region: *region,
            count: 0,
            eigenvalues: Vec::new(),
            inconclusive: Vec::new(),
        });
    }
    let finder = Finder {
        ev: evaluator,
        samples_per_unit: 4.0 * evaluator.phase_rate().max(1.0),
        floor: 1e-7,
        newton_tol: evaluator.tol.newton,
    };
    let mut searched = *region;
    let mut contour = None;
    for _ in 0..8 {
        contour = finder.contour(&searched)?;
        if contour.is_some() {
            break;
        }
        let size = searched.width().max(searched.height());
        searched = searched.inflate(1e-6 * (1.0 + size));
    }
    let Some(contour) = contour else {
        return Ok(SpectrumResult {
            region: searched,
            count: 0,
            eigenvalues: Vec::new(),
            inconclusive: vec![searched],
        });
    };
    let count = contour.winding as usize;
    if count > max_count {
        return Err(PhsError::invalid(
            "region",
            format!("contains {count} eigenvalues, more than the limit {max_count}"),
        ));
    }
    let mut eigenvalues = Vec::new();
    let mut inconclusive = Vec::new();
    finder.solve(searched, contour, &mut eigenvalues, &mut inconclusive)?;
    let q = 1e-9 * (1.0 + searched.width().max(searched.height()));
    eigenvalues.sort_by(|x, y| {
        let kx = (x.value.re / q).round() as i64;
        let ky = (y.value.re / q).round() as i64;
        kx.cmp(&ky).then(x.value.im.total_cmp(&y.value.im))
    });
    Ok(SpectrumResult {
        region: searched,
        count,
        eigenvalues,
        inconclusive,
    })
}

/// Sampled eigenfunction with unit energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigenfunction {
    pub lambda: C64,
    /// Nodal values of `phi`.
    pub phi: GridFunction<C64>,
    /// Smallest singular value of the boundary matrix at `lambda`.
    pub sigma_min: f64,
}

/// Relative size of the smallest singular value accepted as a null direction.
pub const NULL_VECTOR_TOLERANCE: f64 = 1e-7;

pub fn eigenfunction(lambda: C64, evaluator: &TransferEvaluator, cells: usize) -> Result<Eigenfunction> {
    if cells == 0 {
        return Err(PhsError::invalid("cells", "must be positive"));
    }
    let system = evaluator.system();
    let n = system.n();
    let m = evaluator.boundary_matrix(lambda)?;
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (mut imin, mut smin, mut smax) = (0, f64::INFINITY, 0.0_f64);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        smax = smax.max(s);
        if s < smin {
            smin = s;
            imin = i;
        }
    }
    // Scale by the transfer matrix too, so an overall tiny boundary matrix is not accepted.
    let scale = smax.max(evaluator.transfer_matrix(lambda)?.iter().map(|c| c.norm()).fold(1.0, f64::max));
    if smin > NULL_VECTOR_TOLERANCE * scale {
        return Err(PhsError::NotAnEigenvalue { sigma_min: smin });
    }
    let psi_a = DVector::from_iterator(n, v_t.row(imin).iter().map(|c| c.conj()));

    let grid = system.domain().uniform_nodes(cells);
    let mut psi = psi_a;
    let mut values = Vec::with_capacity(grid.len());
    for (j, &z) in grid.iter().enumerate() {
        if j > 0 {
            psi = evaluator.transfer_between(lambda, grid[j - 1], z)? * psi;
        }
        let h_inv = to_complex(
            &system
                .density()
                .evaluate(z)
                .try_inverse()
                .ok_or_else(|| PhsError::invalid("H", "not invertible"))?,
        );
        values.push(h_inv * &psi);
    }
    // Unit energy with the midpoint rule on cell averages.
    let mut energy = 0.0;
    for k in 0..cells {
        let mid = (&values[k] + &values[k + 1]) * C64::new(0.5, 0.0);
        let h = to_complex(&system.density().evaluate(0.5 * (grid[k] + grid[k + 1])));
        let hm = h * &mid;
        energy += 0.5 * (grid[k + 1] - grid[k]) * mid.dotc(&hm).re;
    }
    let first = &values[0];
    let peak = first.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let phase = first
        .iter()
        .find(|c| c.norm() > 1e-8 * peak)
        .map(|c| c.conj() / c.norm())
        .unwrap_or(C64::new(1.0, 0.0));
    let factor = phase / energy.sqrt();
    for v in values.iter_mut() {
        *v *= factor;
    }
    Ok(Eigenfunction {
        lambda,
        phi: GridFunction::new(grid, values, Layout::Node)?,
        sigma_min: smin,
    })
}
