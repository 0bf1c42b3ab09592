//! Acceptance suite: one line per criterion.
//!
//! Criterion 4 is expected to fail (see `KNOWN_FAILURES`); any other failure makes the target
//! exit non-zero.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use phs_core::analysis::{
    check_exponential_stability, check_generation, check_riesz_basis, generation_matrix, Verdict,
};
use phs_core::dirac::{compose, is_dirac, isotropy_defect, DiscretizedPHDirac, FiniteDiracStructure};
use phs_core::library;
use phs_core::model::{
    BoundaryForm, BoundaryStructure, GridFunction, HamiltonianDensity, PortHamiltonianSystem,
    SpatialDomain, StructureMatrices,
};
use phs_core::simulate::{
    discretize, simulate_discrete, simulate_heat_closure, HeatBoundary, HeatProblem, SimulationOptions,
};
use phs_core::spectrum::{find_eigenvalues, Region, TransferEvaluator};
use phs_core::Tolerances;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KNOWN_FAILURES: &[usize] = &[4];

// Pinned thresholds.
const GENERATION_TOL: f64 = 1e-12;
const BEST_K_TOL: f64 = 1e-8;
const ORACLE_DIRECTIONS: usize = 100_000;
const EIGENVALUE_RESIDUAL: f64 = 1e-8;
const RIESZ_BATTERY: usize = 24;
const BALANCE_FACTOR: f64 = 10.0;
const TIME_PART_RATIO: f64 = 3.5;
const CONSERVATION_TOL: f64 = 1e-10;
const HEAT_RATE_TOL: f64 = 0.02;
const WAVE_CONSERVATION_TOL: f64 = 1e-8;
const DIRAC_CASES: usize = 240;
const DIRAC_TOL: f64 = 1e-10;
const DEFECT_RATIO: f64 = 3.5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn tol() -> Tolerances {
    Tolerances::default()
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn rand_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    rand_matrix(rng, n, n).qr().q()
}

fn rand_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = rand_matrix(rng, n, n);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

fn rand_skew(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = rand_matrix(rng, n, n);
    &a - a.transpose()
}

/// Symmetric with eigenvalues of magnitude in [0.5, 2] and random signs.
fn rand_p1(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let q = rand_orthogonal(rng, n);
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| {
        let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        s * rng.gen_range(0.5..2.0)
    }));
    let p = &q * d * q.transpose();
    (&p + p.transpose()) * 0.5
}

/// `(1/sqrt 2) [[P1, -P1], [I, I]]`, written out independently of the library.
fn oracle_extension(p1: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p1.nrows();
    let s = 1.0 / 2f64.sqrt();
    DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let (rb, cb) = (r / n, c / n);
        let (i, j) = (r % n, c % n);
        let id = if i == j { 1.0 } else { 0.0 };
        s * match (rb, cb) {
            (0, 0) => p1[(i, j)],
            (0, 1) => -p1[(i, j)],
            _ => id,
        }
    })
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rows_match = true;
    for r in [0.0, 0.5, 1.0, 10.0] {
        // Substitution oracle: V(a) = u, V(b) - R I(b) = 0 on (V(b), I(b), V(a), I(a)).
        let position = DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 0.0, 1.0, -r, 0.0, 0.0]);
        let p1 = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]);
        let wb_oracle = position * oracle_extension(&p1).try_inverse().unwrap();
        let sys = library::transmission_line(1.0, 1.0, r).unwrap();
        rows_match &= (sys.boundary().wb() - &wb_oracle).amax() <= GENERATION_TOL;
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 2.0 * r]);
        worst = worst.max((generation_matrix(sys.boundary()) - expected).amax());
        rows_match &= check_generation(sys.boundary(), &tol()).unwrap().passed();
    }
    Outcome {
        pass: rows_match && worst <= GENERATION_TOL,
        detail: format!("W_B Sigma W_B^T = diag(0, 2R) for R in {{0, 0.5, 1, 10}}, max deviation {worst:.1e}"),
    }
}

/// `inf -q(v) / |H(b) x(b)|^2` over the kernel of the position rows, sampled.
fn brute_force_k(r: f64, rng: &mut ChaCha8Rng) -> f64 {
    let position = DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 0.0, 1.0, -r, 0.0, 0.0]);
    // Orthogonal projector onto the kernel.
    let gram = (&position * position.transpose()).try_inverse().unwrap();
    let projector = DMatrix::<f64>::identity(4, 4) - position.transpose() * gram * &position;
    // q = 2 e_del^T f_del = -2 V(b) I(b) + 2 V(a) I(a) on (V(b), I(b), V(a), I(a)).
    let q = |v: &DVector<f64>| -2.0 * v[0] * v[1] + 2.0 * v[2] * v[3];
    let mut best = f64::INFINITY;
    for _ in 0..ORACLE_DIRECTIONS {
        let g = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
        let v = &projector * g;
        let wb = v[0] * v[0] + v[1] * v[1];
        if wb > 1e-6 {
            best = best.min(-q(&v) / wb);
        }
    }
    best
}

fn criterion_2(rng: &mut ChaCha8Rng) -> Outcome {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    for r in [0.25, 0.5, 1.0, 2.0, 10.0] {
        let sys = library::transmission_line(1.0, 1.0, r).unwrap();
        let rep = check_exponential_stability(&sys, &tol()).unwrap();
        let closed = 2.0 * r / (1.0 + r * r);
        let sampled = brute_force_k(r, rng);
        ok &= rep.passed() && (sampled - closed).abs() <= 1e-9;
        match rep.witness_value("best_k") {
            Some(k) => worst = worst.max((k - closed).abs()),
            None => ok = false,
        }
        if r == 0.5 {
            notes.push(format!("R = 0.5: k* = {closed:.6} vs printed R/(1+R) = {:.6}", r / (1.0 + r)));
        }
    }
    let lossless = library::transmission_line(1.0, 1.0, 0.0).unwrap();
    ok &= check_exponential_stability(&lossless, &tol()).unwrap().verdict == Verdict::Fail;
    Outcome {
        pass: ok && worst <= BEST_K_TOL,
        detail: format!(
            "R > 0 pass, R = 0 fail; best k vs 2R/(1+R^2) max deviation {worst:.1e}; {}",
            notes.join("")
        ),
    }
}

fn criterion_3() -> Outcome {
    let periodic = library::scalar_transport(0.0, 1.0, [1.0, -1.0]).unwrap();
    let ev = TransferEvaluator::new(&periodic, &tol()).unwrap();
    let region = Region::new(-0.5, 0.5, -34.0, 34.0).unwrap();
    let res = find_eigenvalues(&region, &ev, 64).unwrap();
    let mut ok = res.count == 11 && res.eigenvalues.len() == 11 && res.inconclusive.is_empty();
    let mut worst: f64 = 0.0;
    for (i, e) in res.eigenvalues.iter().enumerate() {
        let n = i as f64 - 5.0;
        worst = worst.max((e.value - phs_core::spectrum::C64::new(0.0, 2.0 * n * PI)).norm());
        ok &= e.residual <= EIGENVALUE_RESIDUAL;
    }
    let dirichlet = library::scalar_transport(0.0, 1.0, [0.0, 1.0]).unwrap();
    let ev = TransferEvaluator::new(&dirichlet, &tol()).unwrap();
    let mut none = true;
    for region in [
        Region::new(-5.0, 5.0, -40.0, 40.0).unwrap(),
        Region::new(-50.0, 20.0, -3.0, 3.0).unwrap(),
        Region::new(0.3, 0.7, 6.0, 7.0).unwrap(),
    ] {
        none &= find_eigenvalues(&region, &ev, 64).unwrap().count == 0;
    }
    Outcome {
        pass: ok && none && worst <= EIGENVALUE_RESIDUAL,
        detail: format!(
            "periodic: {} eigenvalues, max |lambda - 2 n pi i| {worst:.1e}; Dirichlet: {} in 3 regions",
            res.count,
            if none { "none" } else { "some" }
        ),
    }
}

fn random_system(rng: &mut ChaCha8Rng) -> (PortHamiltonianSystem, DMatrix<f64>) {
    loop {
        let n = rng.gen_range(1..=4);
        let p1 = rand_p1(rng, n);
        let p0 = if rng.gen_bool(0.5) { rand_skew(rng, n) } else { DMatrix::zeros(n, n) };
        let h = rand_spd(rng, n);
        let wb = rand_matrix(rng, n, 2 * n);
        let m = StructureMatrices::new(p1, p0).unwrap();
        let Ok(density) = HamiltonianDensity::constant(h) else { continue };
        let Ok(boundary) = BoundaryStructure::new(
            DMatrix::zeros(0, 2 * n),
            wb.clone(),
            DMatrix::zeros(0, 2 * n),
            BoundaryForm::Position,
        ) else {
            continue;
        };
        let domain = SpatialDomain::new(0.0, 1.0).unwrap();
        if let Ok(sys) = PortHamiltonianSystem::new(domain, m, density, boundary) {
            return (sys, wb);
        }
    }
}

fn criterion_4(rng: &mut ChaCha8Rng) -> Outcome {
    let mut cases: Vec<(String, PortHamiltonianSystem)> = (0..RIESZ_BATTERY)
        .map(|i| (format!("random {i}"), random_system(rng).0))
        .collect();
    cases.push(("transmission line R = 0.5".into(), library::transmission_line(1.0, 1.0, 0.5).unwrap()));
    cases.push(("wave k = 0.5".into(), library::wave_equation(1.0, 1.0, 0.5).unwrap()));
    cases.push(("heat skeleton".into(), library::heat_skeleton(1.0, 1.0).unwrap()));
    let mut mismatches = Vec::new();
    for (name, sys) in &cases {
        let wb = sys.position_boundary().wb();
        let rep = check_riesz_basis(sys, &wb, &tol()).unwrap();
        let direct = rep.verdict == Verdict::Pass;
        let both = rep.witness.as_ref().unwrap().labels["contraction_both_directions"] == "pass";
        if direct != both {
            mismatches.push(name.clone());
        }
    }
    let random = mismatches.iter().filter(|m| m.starts_with("random")).count();
    let bundled: Vec<_> = mismatches.iter().filter(|m| !m.starts_with("random")).cloned().collect();
    Outcome {
        pass: mismatches.is_empty(),
        detail: format!(
            "direct-sum vs two-sided contraction: {} mismatches in {} systems ({random} of {RIESZ_BATTERY} random; bundled: {})",
            mismatches.len(),
            cases.len(),
            if bundled.is_empty() { "none".to_string() } else { bundled.join(", ") }
        ),
    }
}

fn criterion_5() -> Outcome {
    let sys = library::transmission_line(1.0, 1.0, 1.0).unwrap();
    let sd = discretize(&sys, 128, &tol()).unwrap();
    let x0 = DVector::zeros(sd.dim());
    let u = |t: f64| DVector::from_element(1, t.sin());
    let dt = 1.0 / 512.0;
    let coarse = simulate_discrete(&sd, x0.clone(), &u, 10.0, dt, &tol()).unwrap();
    let fine = simulate_discrete(&sd, x0, &u, 10.0, dt / 2.0, &tol()).unwrap();
    let threshold = BALANCE_FACTOR * (dt * dt + sd.dz() * sd.dz());
    let max_r = coarse.max_residual();
    let ratio = coarse.max_residual_time() / fine.max_residual_time();
    Outcome {
        pass: max_r <= threshold && ratio >= TIME_PART_RATIO,
        detail: format!(
            "max residual {max_r:.2e} <= {threshold:.2e}; time part ratio under dt/2 {ratio:.2}"
        ),
    }
}

fn criterion_6() -> Outcome {
    let sys = library::transmission_line(1.0, 1.0, 0.0).unwrap();
    let sd = discretize(&sys, 128, &tol()).unwrap();
    let x0 = sd
        .state_from_fn(|z| DVector::from_vec(vec![(PI * z).cos() + 0.3, (2.0 * PI * z).sin()]))
        .unwrap();
    let tr = simulate_discrete(&sd, x0, &|_| DVector::zeros(1), 10.0, 1.0 / 512.0, &tol()).unwrap();
    let e0 = tr.energies[0];
    let drift = tr.energies.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0;
    Outcome {
        pass: drift <= CONSERVATION_TOL,
        detail: format!("lossless line, relative energy drift {drift:.1e} over T = 10"),
    }
}

/// Rayleigh quotient `int (x')^2 / int x^2` of `sin(pi z)` by the midpoint rule.
fn separated_rate() -> f64 {
    let k = 100_000;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..k {
        let z = (i as f64 + 0.5) / k as f64;
        num += (PI * (PI * z).cos()).powi(2);
        den += (PI * z).sin().powi(2);
    }
    // d/dt int x^2 = -2 int (x')^2 for the separated solution.
    2.0 * num / den
}

fn criterion_7() -> Outcome {
    let oracle = separated_rate();
    let domain = SpatialDomain::new(0.0, 1.0).unwrap();
    let x0 = GridFunction::sample_cells(&domain, 128, |z| DVector::from_element(1, (PI * z).sin())).unwrap();
    let opts = SimulationOptions { t_end: 0.2, dt: 1e-3, cells: 128 };
    let zero_trace = HeatProblem::uniform(1.0, 1.0, HeatBoundary::Trace { left: 0.0, right: 0.0 }).unwrap();
    let tr = simulate_heat_closure(&zero_trace, &x0, &opts, &tol()).unwrap();
    let rate = -tr.log_energy_slope(0.02, 0.2).unwrap();
    let decreasing = tr.energies.windows(2).all(|w| w[1] <= w[0]);
    let insulated = HeatProblem::uniform(1.0, 1.0, HeatBoundary::Insulated).unwrap();
    let tr_ins = simulate_heat_closure(&insulated, &x0, &opts, &tol()).unwrap();
    let decreasing_ins = tr_ins.energies.windows(2).all(|w| w[1] <= w[0]);
    let rel = (rate - oracle).abs() / oracle;
    Outcome {
        pass: rel <= HEAT_RATE_TOL && decreasing && decreasing_ins,
        detail: format!(
            "zero-trace closure rate {rate:.4} vs 2 pi^2 = {oracle:.4} (rel {rel:.1e}); dH/dt <= 0 zero-trace {decreasing}, insulated {decreasing_ins}"
        ),
    }
}

fn criterion_8(rng: &mut ChaCha8Rng) -> Outcome {
    // Substitution oracle: with x = (rho w_t, w_z), P1 d/dz (H x) - dx/dt must equal
    // (T w_zz - rho w_tt, 0) for any smooth w.
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let rho: f64 = rng.gen_range(0.2..5.0);
        let tension: f64 = rng.gen_range(0.2..5.0);
        let sys = library::wave_equation(rho, tension, 0.0).unwrap();
        let (kz, om, ph): (f64, f64, f64) = (rng.gen_range(0.5..4.0), rng.gen_range(0.5..4.0), rng.gen_range(0.0..6.0));
        let (z, t): (f64, f64) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let arg = kz * z + om * t + ph;
        // w = sin(arg): first and second derivatives.
        let (w_t, w_z) = (om * arg.cos(), kz * arg.cos());
        let (w_tt, w_zz, w_zt) = (-om * om * arg.sin(), -kz * kz * arg.sin(), -kz * om * arg.sin());
        let h = sys.density().evaluate(z);
        // d/dz (H x) with x_z = (rho w_tz, w_zz).
        let hx_z = &h * DVector::from_vec(vec![rho * w_zt, w_zz]);
        let lhs = sys.matrices().p1() * hx_z - DVector::from_vec(vec![rho * w_tt, w_zt]);
        let expected = DVector::from_vec(vec![tension * w_zz - rho * w_tt, 0.0]);
        worst = worst.max((lhs - expected).amax());
        let x = DVector::from_vec(vec![rho * w_t, w_z]);
        let density = 0.5 * x.dot(&(&h * &x));
        worst = worst.max((density - 0.5 * (rho * w_t * w_t + tension * w_z * w_z)).abs());
    }
    let substitution = worst <= 1e-12;

    let x0_fn = |z: f64| DVector::from_vec(vec![(PI * z / 2.0).sin(), (PI * z).cos() + 0.2]);
    let damped = library::wave_equation(1.0, 1.0, 0.5).unwrap();
    let damped_cert = check_exponential_stability(&damped, &tol()).unwrap().passed();
    let sd = discretize(&damped, 128, &tol()).unwrap();
    let tr = simulate_discrete(&sd, sd.state_from_fn(x0_fn).unwrap(), &|_| DVector::zeros(1), 10.0, 1.0 / 512.0, &tol())
        .unwrap();
    let rate = -tr.log_energy_slope(5.0, 10.0).unwrap();
    let undamped = library::wave_equation(1.0, 1.0, 0.0).unwrap();
    let undamped_cert = check_exponential_stability(&undamped, &tol()).unwrap().verdict == Verdict::Fail;
    let sd0 = discretize(&undamped, 128, &tol()).unwrap();
    let tr0 = simulate_discrete(&sd0, sd0.state_from_fn(x0_fn).unwrap(), &|_| DVector::zeros(1), 10.0, 1.0 / 512.0, &tol())
        .unwrap();
    let e0 = tr0.energies[0];
    let drift = tr0.energies.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0;
    Outcome {
        pass: substitution && damped_cert && rate > 0.0 && undamped_cert && drift <= WAVE_CONSERVATION_TOL,
        detail: format!(
            "substitution defect {worst:.1e}; k = 0.5 certificate {} with fitted decay rate {rate:.3}; k = 0 certificate {} with drift {drift:.1e}",
            if damped_cert { "pass" } else { "fail" },
            if undamped_cert { "fail" } else { "pass" }
        ),
    }
}

fn criterion_9(rng: &mut ChaCha8Rng) -> Outcome {
    let per_kind = DIRAC_CASES / 4;
    let mut failures = 0usize;
    let mut worst_iso: f64 = 0.0;
    let mut worst_ratio = f64::INFINITY;
    // Skew graphs and their images under invertible port maps.
    for _ in 0..per_kind {
        let k = rng.gen_range(1..=6);
        let d = FiniteDiracStructure::skew_graph(&rand_skew(rng, k)).unwrap();
        let mut t = rand_matrix(rng, k, k);
        for i in 0..k {
            t[(i, i)] += 3.0;
        }
        for s in [d.clone(), d.transformed(&t).unwrap()] {
            worst_iso = worst_iso.max(isotropy_defect(s.basis(), s.bond()));
            if !is_dirac(s.basis(), s.bond(), &tol()).unwrap().is_yes() || s.dim() != k {
                failures += 1;
            }
        }
    }
    // Compositions through shared ports carry zero power.
    for _ in 0..per_kind {
        let (p1, p2, c) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let d1 = FiniteDiracStructure::skew_graph(&rand_skew(rng, p1 + c)).unwrap();
        let d2 = FiniteDiracStructure::skew_graph(&rand_skew(rng, p2 + c)).unwrap();
        let comp = compose(&d1, &d2, c, &tol()).unwrap();
        worst_iso = worst_iso.max(isotropy_defect(&comp.basis, &comp.bond));
        if !comp.verdict.is_yes() || comp.basis.ncols() != p1 + p2 {
            failures += 1;
        }
    }
    // Discrete port-Hamiltonian Dirac structures and their second-order power defect.
    for _ in 0..per_kind {
        let n = rng.gen_range(1..=3);
        let m = StructureMatrices::new(rand_p1(rng, n), rand_skew(rng, n)).unwrap();
        let cells = rng.gen_range(4..=12);
        let op = DiscretizedPHDirac::new(m, SpatialDomain::new(0.0, 1.0).unwrap().uniform_nodes(cells)).unwrap();
        let basis = op.basis();
        let bond = op.bond();
        worst_iso = worst_iso.max(isotropy_defect(&basis, &bond) / basis.amax().powi(2));
        if !is_dirac(&basis, &bond, &tol()).unwrap().is_yes() {
            failures += 1;
        }
    }
    for _ in 0..per_kind {
        let n = rng.gen_range(1..=3);
        let m = StructureMatrices::new(rand_p1(rng, n), rand_skew(rng, n)).unwrap();
        let coeff: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| (rng.gen_range(0.5..2.0), rng.gen_range(0.5..3.0), rng.gen_range(0.0..6.0)))
            .collect();
        let e = |z: f64| DVector::from_fn(n, |i, _| coeff[i].0 * (coeff[i].1 * z + coeff[i].2).sin());
        let defect = |cells: usize| {
            let grid = SpatialDomain::new(0.0, 1.0).unwrap().uniform_nodes(cells);
            DiscretizedPHDirac::new(m.clone(), grid).unwrap().power_defect(e).unwrap().abs()
        };
        let (d1, d2) = (defect(32), defect(64));
        if d2 < 1e-13 {
            continue;
        }
        let ratio = d1 / d2;
        worst_ratio = worst_ratio.min(ratio);
        if ratio < DEFECT_RATIO {
            failures += 1;
        }
    }
    Outcome {
        pass: failures == 0 && worst_iso <= DIRAC_TOL,
        detail: format!(
            "{DIRAC_CASES} cases, {failures} failures, max isotropy defect {worst_iso:.1e}, min power-defect refinement ratio {worst_ratio:.2}"
        ),
    }
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_917);
    let criteria: Vec<(&str, Box<dyn FnOnce(&mut ChaCha8Rng) -> Outcome>)> = vec![
        ("generation certificate", Box::new(|_| criterion_1())),
        ("stability certificate", Box::new(criterion_2)),
        ("spectrum", Box::new(|_| criterion_3())),
        ("Riesz cross-consistency", Box::new(criterion_4)),
        ("power balance", Box::new(|_| criterion_5())),
        ("conservation", Box::new(|_| criterion_6())),
        ("heat closure", Box::new(|_| criterion_7())),
        ("wave equation", Box::new(criterion_8)),
        ("Dirac properties", Box::new(criterion_9)),
    ];
    let mut unexpected = Vec::new();
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let id = i + 1;
        let start = Instant::now();
        let outcome = run(&mut rng);
        let secs = start.elapsed().as_secs_f64();
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        let known = if !outcome.pass && KNOWN_FAILURES.contains(&id) { " [known]" } else { "" };
        println!("criterion {id} {name}: {status}{known} ({secs:.2} s) {}", outcome.detail);
        if !outcome.pass && !KNOWN_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
