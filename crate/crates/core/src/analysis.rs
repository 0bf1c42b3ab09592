//! Finite-matrix certificates for boundary port-Hamiltonian systems: generation of a
//! contraction semigroup, well-posedness, impedance passivity, exponential stability and
//! the Riesz-basis direct-sum condition.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PhsError, Result};
use crate::linalg;
use crate::model::{
    extension_matrix, BoundaryForm, BoundaryStructure, PortHamiltonianSystem, StructureMatrices,
};
use crate::tolerance::Tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// Numeric evidence attached to a certificate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub values: BTreeMap<String, f64>,
    pub vectors: BTreeMap<String, Vec<f64>>,
    pub matrices: BTreeMap<String, Vec<Vec<f64>>>,
    pub labels: BTreeMap<String, String>,
}

impl Witness {
    pub fn value(mut self, key: &str, v: f64) -> Self {
        self.values.insert(key.to_string(), v);
        self
    }

    pub fn vector(mut self, key: &str, v: &DVector<f64>) -> Self {
        self.vectors.insert(key.to_string(), v.iter().copied().collect());
        self
    }

    pub fn matrix(mut self, key: &str, m: &DMatrix<f64>) -> Self {
        self.matrices.insert(key.to_string(), rows_of(m));
        self
    }

    pub fn label(mut self, key: &str, v: impl Into<String>) -> Self {
        self.labels.insert(key.to_string(), v.into());
        self
    }
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub name: String,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    pub tolerances: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub sub_reports: Vec<CertificateReport>,
}

impl CertificateReport {
    fn new(name: &str, verdict: Verdict) -> Self {
        CertificateReport {
            name: name.to_string(),
            verdict,
            witness: None,
            tolerances: BTreeMap::new(),
            notes: Vec::new(),
            sub_reports: Vec::new(),
        }
    }

    fn with_witness(mut self, w: Witness) -> Self {
        self.witness = Some(w);
        self
    }

    fn tol(mut self, key: &str, v: f64) -> Self {
        self.tolerances.insert(key.to_string(), v);
        self
    }

    fn note(mut self, s: impl Into<String>) -> Self {
        self.notes.push(s.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn witness_value(&self, key: &str) -> Option<f64> {
        self.witness.as_ref()?.values.get(key).copied()
    }
}

fn sigma(n: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        s[(i, n + i)] = 1.0;
        s[(n + i, i)] = 1.0;
    }
    s
}

/// `W_B Sigma W_B^T` with `Sigma = [[0, I], [I, 0]]`.
pub fn generation_matrix(boundary: &BoundaryStructure) -> DMatrix<f64> {
    let wb = boundary.wb();
    let m = &wb * sigma(boundary.n()) * wb.transpose();
    (&m + m.transpose()) * 0.5
}

/// Contraction-semigroup generation: passes iff `W_B Sigma W_B^T >= 0`.
pub fn check_generation(boundary: &BoundaryStructure, tol: &Tolerances) -> Result<CertificateReport> {
    if boundary.form() != BoundaryForm::FlowEffort {
        return Err(PhsError::WrongBoundaryForm {
            expected: "flow_effort",
        });
    }
    let n = boundary.n();
    let wb = boundary.wb();
    let base = |v| CertificateReport::new("generation", v).tol("psd", tol.psd).tol("rank", tol.rank);
    if linalg::rank(&wb, tol.rank) < n {
        return Ok(base(Verdict::Inconclusive)
            .with_witness(Witness::default().matrix("W_B", &wb))
            .note("W_B is rank deficient"));
    }
    let m = generation_matrix(boundary);
    let (values, vectors) = linalg::sym_eigen(&m);
    let min = values[0];
    let scale = linalg::norm2(&m).max(linalg::norm2(&wb).powi(2));
    let verdict = if min >= -tol.psd * scale {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(base(verdict).with_witness(
        Witness::default()
            .matrix("W_B_Sigma_W_B^T", &m)
            .value("min_eigenvalue", min)
            .vector("min_eigenvector", &vectors.column(0).into_owned())
            .value("psd_threshold", -tol.psd * scale),
    ))
}

/// `P1 H(z) = S^-1 Delta S` at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalSample {
    pub zeta: f64,
    pub s: DMatrix<f64>,
    pub delta: DVector<f64>,
    pub s_inv: DMatrix<f64>,
}

impl DiagonalSample {
    pub fn negative_count(&self) -> usize {
        self.delta.iter().filter(|&&d| d < 0.0).count()
    }

    /// Eigenvectors of `P1 H` for negative (`false`) or positive (`true`) eigenvalues.
    pub fn eigenvectors(&self, positive: bool) -> DMatrix<f64> {
        let k = self.negative_count();
        if positive {
            self.s_inv.columns(k, self.delta.len() - k).into_owned()
        } else {
            self.s_inv.columns(0, k).into_owned()
        }
    }
}

pub fn diagonalize_at(
    matrices: &StructureMatrices,
    h: &DMatrix<f64>,
    zeta: f64,
    tol: &Tolerances,
) -> Result<DiagonalSample> {
    let n = matrices.n();
    let (h_sqrt, h_inv_sqrt) = linalg::spd_sqrt(h);
    // H^{1/2} P1 H^{1/2} is symmetric and similar to P1 H.
    let a = &h_sqrt * matrices.p1() * &h_sqrt;
    let (delta, v) = linalg::sym_eigen(&a);
    let mut s_inv = &h_inv_sqrt * &v;
    let mut s = v.transpose() * &h_sqrt;
    for k in 0..n {
        let column = s_inv.column(k);
        let scale = column.amax();
        let first = column.iter().copied().find(|x| x.abs() > 1e-12 * scale);
        if first.is_some_and(|x| x < 0.0) {
            s_inv.column_mut(k).neg_mut();
            s.row_mut(k).neg_mut();
        }
    }
    let dmax = delta.amax();
    if let Some(&d) = delta.iter().find(|d| d.abs() <= tol.rank * dmax) {
        return Err(PhsError::Diagonalization {
            zeta,
            reason: format!("P1 H has a zero eigenvalue ({d:e})"),
        });
    }
    let p1h = matrices.p1() * h;
    let rebuilt = &s_inv * DMatrix::from_diagonal(&delta) * &s;
    let residual = linalg::max_abs(&(rebuilt - &p1h)) / linalg::max_abs(&p1h);
    if residual > tol.diagonalization {
        return Err(PhsError::Diagonalization {
            zeta,
            reason: format!("reconstruction residual {residual:e}"),
        });
    }
    Ok(DiagonalSample {
        zeta,
        s,
        delta,
        s_inv,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalizationField {
    pub samples: Vec<DiagonalSample>,
    /// Largest increment of `S` or `Delta` between consecutive samples.
    pub smoothness: f64,
}

pub fn diagonalize_field(
    system: &PortHamiltonianSystem,
    samples: usize,
    tol: &Tolerances,
) -> Result<DiagonalizationField> {
    if samples < 2 {
        return Err(PhsError::invalid("samples", "need at least two samples"));
    }
    let nodes = system.domain().uniform_nodes(samples - 1);
    let mut out: Vec<DiagonalSample> = Vec::with_capacity(samples);
    for &z in &nodes {
        let d = diagonalize_at(system.matrices(), &system.density().evaluate(z), z, tol)?;
        if let Some(first) = out.first() {
            if d.negative_count() != first.negative_count() {
                return Err(PhsError::Diagonalization {
                    zeta: z,
                    reason: "eigenvalue sign pattern changes along the domain".into(),
                });
            }
        }
        out.push(d);
    }
    let smoothness = out
        .windows(2)
        .map(|w| {
            linalg::max_abs(&(&w[1].s - &w[0].s))
                .max((&w[1].delta - &w[0].delta).amax())
        })
        .fold(0.0, f64::max);
    Ok(DiagonalizationField {
        samples: out,
        smoothness,
    })
}

/// Sample count for the refinement test of the diagonalization.
pub const SMOOTHNESS_SAMPLES: usize = 65;

/// Refinement heuristic for a continuously differentiable `S`, `Delta`: increments must
/// shrink when the sample spacing halves. A pass is consistent with C^1, never a proof.
pub fn check_smoothness(system: &PortHamiltonianSystem, tol: &Tolerances) -> Result<CertificateReport> {
    let coarse = diagonalize_field(system, SMOOTHNESS_SAMPLES, tol)?;
    let fine = diagonalize_field(system, 2 * SMOOTHNESS_SAMPLES - 1, tol)?;
    let scale = coarse
        .samples
        .iter()
        .map(|d| linalg::max_abs(&d.s).max(d.delta.amax()))
        .fold(0.0, f64::max);
    let flat = coarse.smoothness <= tol.diagonalization * scale;
    let ratio = if flat {
        0.0
    } else {
        fine.smoothness / coarse.smoothness
    };
    let verdict = if flat || ratio <= 0.75 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let mut report = CertificateReport::new("diagonalization_smoothness", verdict)
        .tol("diagonalization", tol.diagonalization)
        .tol("increment_ratio", 0.75)
        .with_witness(
            Witness::default()
                .value("coarse_increment", coarse.smoothness)
                .value("fine_increment", fine.smoothness)
                .value("ratio", ratio)
                .value("samples", SMOOTHNESS_SAMPLES as f64),
        );
    if verdict == Verdict::Pass {
        report = report.note("numerically consistent with C^1");
    } else {
        report = report.note("increments do not shrink under refinement");
    }
    Ok(report)
}

/// Generation plus smoothness of the diagonalization.
pub fn check_wellposedness(system: &PortHamiltonianSystem, tol: &Tolerances) -> Result<CertificateReport> {
    let generation = check_generation(system.boundary(), tol)?;
    let smooth = check_smoothness(system, tol)?;
    let verdict = match (generation.verdict, smooth.verdict) {
        (Verdict::Fail, _) => Verdict::Fail,
        (Verdict::Pass, Verdict::Pass) => Verdict::Pass,
        _ => Verdict::Inconclusive,
    };
    let mut witness = Witness::default()
        .label("generation", format!("{:?}", generation.verdict).to_lowercase())
        .label("smoothness", format!("{:?}", smooth.verdict).to_lowercase());
    if let Some(min) = generation.witness_value("min_eigenvalue") {
        witness = witness.value("min_eigenvalue", min);
    }
    let mut report = CertificateReport::new("wellposedness", verdict).with_witness(witness);
    report.sub_reports = vec![generation, smooth];
    Ok(report)
}

/// Impedance passivity for `m = n`, read as
/// `[W_B; W_C] Sigma [W_B; W_C]^T` inverted and compared with `Sigma`.
///
/// The reading without the inverse is evaluated as well and reported alongside.
pub fn check_impedance_passive(boundary: &BoundaryStructure, tol: &Tolerances) -> Result<CertificateReport> {
    if boundary.form() != BoundaryForm::FlowEffort {
        return Err(PhsError::WrongBoundaryForm {
            expected: "flow_effort",
        });
    }
    let (n, m) = (boundary.n(), boundary.m());
    let base = CertificateReport::new("impedance_passive", Verdict::Inconclusive)
        .tol("psd", tol.psd)
        .tol("rank", tol.rank);
    if m != n {
        return Ok(base
            .with_witness(Witness::default().value("m", m as f64).value("n", n as f64))
            .note("condition stated only for m = n"));
    }
    let w = linalg::vstack(&boundary.wb(), boundary.wc());
    let s = sigma(n);
    let assembled = &w * &s * w.transpose();
    if linalg::rank(&assembled, tol.rank) < 2 * n {
        return Ok(base
            .with_witness(Witness::default().matrix("assembled", &assembled))
            .note("assembled matrix is singular"));
    }
    let inverse = assembled
        .clone()
        .try_inverse()
        .ok_or_else(|| PhsError::Factorization("assembled matrix".into()))?;
    let inverse = (&inverse + inverse.transpose()) * 0.5;
    let (inv_values, inv_vectors) = linalg::sym_eigen(&(&inverse - &s));
    let (direct_values, _) = linalg::sym_eigen(&(&assembled - &s));
    let max_inverse = inv_values[2 * n - 1];
    let max_direct = direct_values[2 * n - 1];
    let scale = linalg::norm2(&inverse).max(1.0);
    let threshold = tol.psd * scale;
    let verdict = if max_inverse <= threshold {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let direct_holds = max_direct <= tol.psd * linalg::norm2(&assembled).max(1.0);
    let mut report = base.with_witness(
        Witness::default()
            .matrix("assembled", &assembled)
            .value("max_eigenvalue_inverse_reading", max_inverse)
            .value("max_eigenvalue_direct_reading", max_direct)
            .vector("violating_direction", &inv_vectors.column(2 * n - 1).into_owned())
            .label("direct_reading", if direct_holds { "holds" } else { "violated" }),
    );
    report.verdict = verdict;
    if direct_holds != (verdict == Verdict::Pass) {
        report = report.note("readings with and without the inverse disagree; verdict uses the inverse");
    }
    Ok(report)
}

/// Orthonormal kernel of `W_B R_ext` in trace coordinates `(wb; wa)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReduction {
    pub n: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub eb: DMatrix<f64>,
    pub ea: DMatrix<f64>,
}

impl KernelReduction {
    /// `N^T Q N`.
    pub fn reduced_form(&self) -> DMatrix<f64> {
        let a = self.n.transpose() * &self.q * &self.n;
        (&a + a.transpose()) * 0.5
    }

    pub fn side_form(&self, side: Side) -> DMatrix<f64> {
        let e = match side {
            Side::B => &self.eb,
            Side::A => &self.ea,
        };
        self.n.transpose() * e * &self.n
    }
}

pub fn kernel_reduction(
    boundary: &BoundaryStructure,
    matrices: &StructureMatrices,
    tol: &Tolerances,
) -> Result<KernelReduction> {
    if boundary.form() != BoundaryForm::FlowEffort {
        return Err(PhsError::WrongBoundaryForm {
            expected: "flow_effort",
        });
    }
    let n = matrices.n();
    let constraint = boundary.wb() * extension_matrix(matrices);
    let basis = linalg::null_space(&constraint, tol.rank);
    if basis.ncols() != n {
        return Err(PhsError::invalid(
            "boundary",
            format!("W_B R_ext has a kernel of dimension {} instead of {n}", basis.ncols()),
        ));
    }
    let mut eb = DMatrix::zeros(2 * n, 2 * n);
    let mut ea = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        eb[(i, i)] = 1.0;
        ea[(n + i, n + i)] = 1.0;
    }
    Ok(KernelReduction {
        n: basis,
        q: matrices.boundary_form(),
        eb,
        ea,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    B,
    A,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::B => "b",
            Side::A => "a",
        }
    }
}

/// Outcome of the decay condition on one boundary side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideCertificate {
    pub side: Side,
    pub certified: bool,
    /// Largest admissible `k`; `None` when every `k` works.
    pub best_k: Option<f64>,
    pub violating_direction: Option<DVector<f64>>,
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    let (values, _) = linalg::sym_eigen(m);
    values[values.len() - 1]
}

fn certify_side(kr: &KernelReduction, side: Side, tol: &Tolerances) -> SideCertificate {
    let a = kr.reduced_form();
    let b = kr.side_form(side);
    let b = (&b + b.transpose()) * 0.5;
    let thr = tol.psd * linalg::norm2(&kr.q).max(f64::MIN_POSITIVE);
    let (values, vectors) = linalg::sym_eigen(&a);
    let dim = values.len();
    if values[dim - 1] > thr {
        return SideCertificate {
            side,
            certified: false,
            best_k: None,
            violating_direction: Some(&kr.n * vectors.column(dim - 1)),
        };
    }
    // B must vanish on the null space of A.
    let null: Vec<usize> = (0..dim).filter(|&i| values[i] >= -thr).collect();
    if !null.is_empty() {
        let z = DMatrix::from_fn(dim, null.len(), |r, c| vectors[(r, null[c])]);
        let restricted = z.transpose() * &b * &z;
        let (rv, rvec) = linalg::sym_eigen(&restricted);
        if rv[rv.len() - 1] > tol.psd {
            return SideCertificate {
                side,
                certified: false,
                best_k: None,
                violating_direction: Some(&kr.n * (&z * rvec.column(rv.len() - 1))),
            };
        }
    }
    let feasible = |k: f64| lambda_max(&(&a + &b * k)) <= thr;
    if lambda_max(&b) <= tol.psd {
        return SideCertificate {
            side,
            certified: true,
            best_k: None,
            violating_direction: None,
        };
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while feasible(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e15 {
            return SideCertificate {
                side,
                certified: true,
                best_k: None,
                violating_direction: None,
            };
        }
    }
    while hi - lo > tol.bisection * hi {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    SideCertificate {
        side,
        certified: lo > 0.0,
        best_k: Some(lo),
        violating_direction: None,
    }
}

/// Decay condition on the trace kernel: some `k > 0` with `N^T Q N + k N^T E_side N <= 0`.
pub fn check_exponential_stability(
    system: &PortHamiltonianSystem,
    tol: &Tolerances,
) -> Result<CertificateReport> {
    let generation = check_generation(system.boundary(), tol)?;
    let base = CertificateReport::new("exponential_stability", Verdict::Inconclusive)
        .tol("psd", tol.psd)
        .tol("bisection", tol.bisection);
    if !generation.passed() {
        let mut r = base
            .with_witness(Witness::default().label("generation", format!("{:?}", generation.verdict).to_lowercase()))
            .note("generation certificate did not pass");
        r.sub_reports.push(generation);
        return Ok(r);
    }
    let kr = kernel_reduction(system.boundary(), system.matrices(), tol)?;
    let sides = [certify_side(&kr, Side::B, tol), certify_side(&kr, Side::A, tol)];
    let mut witness = Witness::default();
    for s in &sides {
        let key = s.side.name();
        witness = witness.label(&format!("side_{key}"), if s.certified { "certified" } else { "not_certified" });
        match s.best_k {
            Some(k) => witness = witness.value(&format!("best_k_{key}"), k),
            None if s.certified => witness = witness.label(&format!("best_k_{key}"), "unbounded"),
            None => {}
        }
        if let Some(v) = &s.violating_direction {
            witness = witness.vector(&format!("violating_direction_{key}"), v);
        }
    }
    // Larger k wins; side b is preferred on ties.
    let mut best: Option<&SideCertificate> = None;
    for s in sides.iter().filter(|s| s.certified) {
        let k = s.best_k.unwrap_or(f64::INFINITY);
        if best.is_none_or(|b| k > b.best_k.unwrap_or(f64::INFINITY)) {
            best = Some(s);
        }
    }
    let mut report = match best {
        Some(s) => {
            witness = witness.label("side", s.side.name());
            match s.best_k {
                Some(k) => witness = witness.value("best_k", k),
                None => witness = witness.label("best_k", "unbounded"),
            }
            let mut r = base.with_witness(witness);
            r.verdict = Verdict::Pass;
            r
        }
        None => {
            let mut r = base.with_witness(witness);
            r.verdict = Verdict::Fail;
            r
        }
    };
    report.sub_reports.push(generation);
    Ok(report)
}

/// Riesz-basis direct-sum condition for position-form rows `W~_B = [W_b W_a]`.
pub fn check_riesz_basis(
    system: &PortHamiltonianSystem,
    position_wb: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<CertificateReport> {
    let n = system.n();
    if position_wb.shape() != (n, 2 * n) {
        return Err(PhsError::invalid(
            "W~_B",
            format!("expected {n}x{}, got {}x{}", 2 * n, position_wb.nrows(), position_wb.ncols()),
        ));
    }
    if linalg::rank(position_wb, tol.rank) < n {
        return Err(PhsError::invalid("W~_B", "must have full row rank"));
    }
    let (a, b) = (system.domain().a(), system.domain().b());
    let hb = system.density().evaluate(b);
    let ha = system.density().evaluate(a);
    let db = diagonalize_at(system.matrices(), &hb, b, tol)?;
    let da = diagonalize_at(system.matrices(), &ha, a, tol)?;
    let w_b = position_wb.columns(0, n).into_owned();
    let w_a = position_wb.columns(n, n).into_owned();
    let image = |w: &DMatrix<f64>, h: &DMatrix<f64>, z: DMatrix<f64>| w * h * z;
    // Absolute threshold: an image that vanishes entirely must not be renormalized by its
    // own largest singular value.
    let scale = linalg::norm2(position_wb) * linalg::norm2(&hb).max(linalg::norm2(&ha)).sqrt();
    let abs_rank = |left: DMatrix<f64>, right: DMatrix<f64>| {
        linalg::singular_values(&linalg::hstack(&left, &right))
            .iter()
            .filter(|&&s| s > tol.rank * scale)
            .count()
    };
    let first = abs_rank(
        image(&w_b, &hb, db.eigenvectors(false)),
        image(&w_a, &ha, da.eigenvectors(true)),
    );
    let second = abs_rank(
        image(&w_b, &hb, db.eigenvectors(true)),
        image(&w_a, &ha, da.eigenvectors(false)),
    );
    let verdict = if first == n && second == n {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let mut report = CertificateReport::new("riesz_basis", verdict)
        .tol("rank", tol.rank)
        .with_witness(
            Witness::default()
                .value("rank_neg_b_pos_a", first as f64)
                .value("rank_pos_b_neg_a", second as f64)
                .value("n", n as f64),
        );

    // Contraction generation for the system and for (-P1, -P0) with the same W~_B.
    let forward = check_generation(system.boundary(), tol)?;
    let reversed = check_generation(system.reversed()?.boundary(), tol)?;
    let both = forward.passed() && reversed.passed();
    let label = |r: &CertificateReport| format!("{:?}", r.verdict).to_lowercase();
    if let Some(w) = report.witness.as_mut() {
        w.labels.insert("generation_forward".into(), label(&forward));
        w.labels.insert("generation_reversed".into(), label(&reversed));
        w.labels.insert(
            "contraction_both_directions".into(),
            if both { "pass" } else { "fail" }.into(),
        );
    }
    if both != (verdict == Verdict::Pass) {
        report = report.note("direct-sum verdict differs from two-sided contraction generation");
    }
    report.sub_reports = vec![forward, reversed];
    Ok(report)
}
