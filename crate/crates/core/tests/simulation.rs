use nalgebra::{DMatrix, DVector};
use phs_core::analysis::{check_generation, check_impedance_passive};
use phs_core::library;
use phs_core::model::{
    BoundaryForm, BoundaryStructure, GridFunction, HamiltonianDensity, PortHamiltonianSystem,
    SpatialDomain, StructureMatrices,
};
use phs_core::simulate::{discretize, simulate, simulate_discrete, SemiDiscreteSystem, SimulationOptions};
use phs_core::spectrum::{eigenfunction, find_eigenvalues, Region, TransferEvaluator};
use phs_core::Tolerances;
use std::f64::consts::PI;

fn tol() -> Tolerances {
    Tolerances::default()
}

/// `sqrt(2 E(x - x_ref))`, the discrete energy norm of a difference.
fn energy_distance(sd: &SemiDiscreteSystem, x: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    (2.0 * sd.energy(&(x - reference))).sqrt()
}

#[test]
fn matched_line_converges_at_second_order() {
    // C = L = R = 1: V = I = g(t - z) is exact and leaves through the matched end.
    let g = |s: f64| (2.0 * PI * s).sin() + 0.5 * (PI * s).cos();
    let sys = library::transmission_line(1.0, 1.0, 1.0).unwrap();
    let t_end = 0.75;
    let mut errors = Vec::new();
    for cells in [32, 64, 128] {
        let sd = discretize(&sys, cells, &tol()).unwrap();
        let x0 = sd.state_from_fn(|z| DVector::from_element(2, g(-z))).unwrap();
        let dt = 0.5 / cells as f64;
        let tr = simulate_discrete(&sd, x0, &|t| DVector::from_element(1, g(t)), t_end, dt, &tol()).unwrap();
        let exact = sd.state_from_fn(|z| DVector::from_element(2, g(t_end - z))).unwrap();
        errors.push(energy_distance(&sd, tr.states.last().unwrap(), &exact));
        let y_err = tr
            .times
            .iter()
            .zip(&tr.outputs)
            .map(|(t, y)| (y[0] - g(*t)).abs())
            .fold(0.0, f64::max);
        assert!(y_err < 50.0 / (cells * cells) as f64, "output error {y_err} at N = {cells}");
    }
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order > 1.8, "observed order {order} from {errors:?}");
    }
}

#[test]
fn balance_residual_time_part_is_second_order_in_dt() {
    let sys = library::transmission_line(1.0, 1.0, 1.0).unwrap();
    let sd = discretize(&sys, 64, &tol()).unwrap();
    let x0 = sd.state_from_fn(|z| DVector::from_vec(vec![(PI * z).sin(), 0.0])).unwrap();
    let run = |dt: f64| {
        simulate_discrete(&sd, x0.clone(), &|t: f64| DVector::from_element(1, t.sin()), 2.0, dt, &tol()).unwrap()
    };
    let (coarse, fine) = (run(1.0 / 128.0), run(1.0 / 256.0));
    let ratio = coarse.max_residual_time() / fine.max_residual_time();
    assert!(ratio > 3.5, "{ratio}");
    for tr in [&coarse, &fine] {
        assert!(tr.max_residual() <= tr.threshold);
        for ((r, s), t) in tr.residuals.iter().zip(&tr.residuals_space).zip(&tr.residuals_time) {
            assert!((r - s - t).abs() <= 1e-12 * (1.0 + r.abs()));
        }
    }
}

fn passive_transport() -> PortHamiltonianSystem {
    // Position rows on (x(b); x(a)): input u = x(b), output y = x(b) - x(a).
    let m = StructureMatrices::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 1)).unwrap();
    let h = HamiltonianDensity::constant(DMatrix::from_element(1, 1, 1.5)).unwrap();
    let b = BoundaryStructure::new(
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::zeros(0, 2),
        DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
        BoundaryForm::Position,
    )
    .unwrap();
    PortHamiltonianSystem::new(SpatialDomain::new(0.0, 2.0).unwrap(), m, h, b).unwrap()
}

#[test]
fn passive_system_supplies_at_most_input_power() {
    let sys = passive_transport();
    assert!(check_impedance_passive(sys.boundary(), &tol()).unwrap().passed());
    let sd = discretize(&sys, 48, &tol()).unwrap();
    let x0 = sd.state_from_fn(|z| DVector::from_element(1, (z * 1.7).cos())).unwrap();
    let u = |t: f64| DVector::from_element(1, (3.0 * t).sin() + 0.4 * (7.1 * t).cos());
    let tr = simulate_discrete(&sd, x0, &u, 3.0, 0.01, &tol()).unwrap();
    for k in 1..tr.times.len() {
        let rate = (tr.energies[k] - tr.energies[k - 1]) / tr.dt;
        let supply = 0.5 * (tr.inputs[k].dot(&tr.outputs[k]) + tr.inputs[k - 1].dot(&tr.outputs[k - 1]));
        assert!(rate <= supply + tr.threshold, "step {k}: {rate} > {supply}");
    }
}

#[test]
fn long_runs_stay_bounded() {
    let systems = vec![
        library::transmission_line(1.0, 1.0, 1.0).unwrap(),
        library::transmission_line(2.0, 0.5, 0.0).unwrap(),
        library::wave_equation(1.0, 2.0, 0.4).unwrap(),
        library::scalar_transport(0.0, 1.0, [1.0, -1.0]).unwrap(),
        library::heat_skeleton(0.7, 1.3).unwrap(),
    ];
    for sys in systems {
        assert!(check_generation(sys.boundary(), &tol()).unwrap().passed());
        let sd = discretize(&sys, 24, &tol()).unwrap();
        let n = sys.n();
        let x0 = sd
            .state_from_fn(|z| DVector::from_fn(n, |i, _| ((i + 1) as f64 * PI * z).sin() + 0.1 * z))
            .unwrap();
        let m = sys.m();
        let tr = simulate_discrete(&sd, x0, &|_| DVector::zeros(m), 100.0, 0.05, &tol()).unwrap();
        let e0 = tr.energies[0];
        assert!(tr.energies.iter().all(|e| *e <= e0 * (1.0 + 1e-10)));
    }
}

#[test]
fn simulate_accepts_node_and_foreign_grids() {
    let sys = library::transmission_line(1.0, 1.0, 0.5).unwrap();
    let domain = *sys.domain();
    let f = |z: f64| DVector::from_vec(vec![z * z, 1.0 - z]);
    let nodes = GridFunction::sample_nodes(&domain, 16, f).unwrap();
    let foreign = GridFunction::sample_cells(&domain, 7, f).unwrap();
    let opts = SimulationOptions { t_end: 0.1, dt: 0.01, cells: 16 };
    let quiet = |_: f64| DVector::zeros(1);
    let a = simulate(&sys, &nodes, &quiet, &opts, &tol()).unwrap();
    let b = simulate(&sys, &foreign, &quiet, &opts, &tol()).unwrap();
    assert_eq!(a.states[0].len(), 34);
    assert!((&a.states[0] - &b.states[0]).amax() < 0.05);
}

#[test]
fn eigenfunction_initial_data_follows_the_semigroup() {
    let sys = library::transmission_line(1.0, 2.0, 0.5).unwrap();
    let ev = TransferEvaluator::new(&sys, &tol()).unwrap();
    let region = Region::new(-3.0, 1.0, 0.5, 6.0).unwrap();
    let spectrum = find_eigenvalues(&region, &ev, 20).unwrap();
    let lambda = spectrum.values()[0];
    let cells = 256;
    let ef = eigenfunction(lambda, &ev, cells).unwrap();
    let sd = discretize(&sys, cells, &tol()).unwrap();
    let nodal = ef.phi.values();
    let state_at = |t: f64| {
        let rot = (lambda * t).exp();
        DVector::from_fn(2 * (cells + 1), |k, _| (nodal[k / 2][k % 2] * rot).re)
    };
    let period = (2.0 * PI / lambda.im.abs()).min(1.0 / lambda.re.abs());
    let tr = simulate_discrete(&sd, state_at(0.0), &|_| DVector::zeros(1), period, 1.0 / 1024.0, &tol()).unwrap();
    for (t, x) in tr.times.iter().zip(&tr.states) {
        let exact = state_at(*t);
        let err = energy_distance(&sd, x, &exact);
        let size = (2.0 * sd.energy(&exact)).sqrt();
        assert!(err <= 0.03 * size, "t = {t}: {err} vs {size}");
    }
}

#[test]
fn dissipative_defect_is_finite_when_all_characteristics_leave_at_one_end() {
    // P1 positive definite: every characteristic exits at b, so the symmetric part of the
    // weighted generator has exactly decoupled blocks.
    let p1 = DMatrix::from_row_slice(2, 2, &[1.1494437409260525, 0.23301298134240855, 0.23301298134240855, 1.2021127475339572]);
    let h = DMatrix::from_row_slice(2, 2, &[1.461785813211213, 0.18617716513276317, 0.18617716513276317, 0.5869195106905728]);
    let k = DMatrix::from_row_slice(2, 2, &[1.4528113947737467, 0.5967738388067419, 0.1599037136802131, 1.4677067801382115]);
    let mut wb = DMatrix::zeros(2, 4);
    wb.view_mut((0, 0), (2, 2)).fill_with_identity();
    wb.view_mut((0, 2), (2, 2)).copy_from(&k);
    let b = BoundaryStructure::new(DMatrix::zeros(0, 4), wb, DMatrix::zeros(0, 4), BoundaryForm::FlowEffort).unwrap();
    let sys = PortHamiltonianSystem::new(
        SpatialDomain::new(0.0, 1.0).unwrap(),
        StructureMatrices::new(p1, DMatrix::zeros(2, 2)).unwrap(),
        HamiltonianDensity::constant(h).unwrap(),
        b,
    )
    .unwrap();
    for cells in [8, 16, 32] {
        let sd = discretize(&sys, cells, &tol()).unwrap();
        assert!(sd.skew_defect().abs() <= 1e-12, "N = {cells}: {}", sd.skew_defect());
    }
}
