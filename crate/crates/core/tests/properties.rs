use nalgebra::{DMatrix, DVector};
use phs_core::analysis::check_generation;
use phs_core::dirac::{compose, is_dirac, DiscretizedPHDirac, FiniteDiracStructure};
use phs_core::model::{
    boundary_flow_effort, convert_flow_effort_to_position, convert_position_to_flow_effort,
    power_balance_rhs, BoundaryForm, BoundaryStructure, BoundaryTrace, HamiltonianDensity,
    PortHamiltonianSystem, SpatialDomain, StructureMatrices,
};
use phs_core::simulate::{discretize, simulate_discrete, ClosureKind};
use phs_core::Tolerances;
use proptest::prelude::*;

fn tol() -> Tolerances {
    Tolerances::default()
}

fn square(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| DMatrix::from_row_slice(n, n, &v))
}

fn skew(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    square(n).prop_map(|a| &a - a.transpose())
}

fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    square(n).prop_map(move |a| &a * a.transpose() + DMatrix::identity(n, n) * 0.5)
}

/// Symmetric `P1` with eigenvalues bounded away from zero.
fn p1(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (square(n), prop::collection::vec((0.5..2.0f64, any::<bool>()), n)).prop_map(move |(a, d)| {
        let q = a.qr().q();
        let diag = DVector::from_iterator(n, d.iter().map(|&(v, s)| if s { v } else { -v }));
        let p = &q * DMatrix::from_diagonal(&diag) * q.transpose();
        (&p + p.transpose()) * 0.5
    })
}

/// Flow/effort rows `[I, K]`; generation holds iff `K + K^T >= 0`.
fn system(n: usize, k: DMatrix<f64>, p1: DMatrix<f64>, p0: DMatrix<f64>, h: DMatrix<f64>) -> PortHamiltonianSystem {
    let mut wb = DMatrix::zeros(n, 2 * n);
    wb.view_mut((0, 0), (n, n)).fill_with_identity();
    wb.view_mut((0, n), (n, n)).copy_from(&k);
    let boundary = BoundaryStructure::new(
        DMatrix::zeros(0, 2 * n),
        wb,
        DMatrix::zeros(0, 2 * n),
        BoundaryForm::FlowEffort,
    )
    .unwrap();
    PortHamiltonianSystem::new(
        SpatialDomain::new(0.0, 1.0).unwrap(),
        StructureMatrices::new(p1, p0).unwrap(),
        HamiltonianDensity::constant(h).unwrap(),
        boundary,
    )
    .unwrap()
}

fn smooth_state(sd: &phs_core::simulate::SemiDiscreteSystem, n: usize) -> DVector<f64> {
    sd.state_from_fn(|z| DVector::from_fn(n, |i, _| ((i as f64 + 1.0) * 3.0 * z).sin() + 0.2))
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn skew_graphs_are_dirac(j in (1usize..6).prop_flat_map(skew)) {
        let d = FiniteDiracStructure::skew_graph(&j).unwrap();
        prop_assert!(is_dirac(d.basis(), d.bond(), &tol()).unwrap().is_yes());
        prop_assert_eq!(d.dim(), j.nrows());
    }

    #[test]
    fn compositions_of_skew_graphs_are_dirac(
        (j1, j2, c) in (1usize..4, 1usize..4, 1usize..4)
            .prop_flat_map(|(p1, p2, c)| (skew(p1 + c), skew(p2 + c), Just(c))),
    ) {
        let d1 = FiniteDiracStructure::skew_graph(&j1).unwrap();
        let d2 = FiniteDiracStructure::skew_graph(&j2).unwrap();
        let comp = compose(&d1, &d2, c, &tol()).unwrap();
        prop_assert!(comp.verdict.is_yes());
    }

    #[test]
    fn discretized_dirac_is_dirac(
        (p, p0) in (1usize..4).prop_flat_map(|n| (p1(n), skew(n))),
        cells in 3usize..10,
    ) {
        let m = StructureMatrices::new(p, p0).unwrap();
        let op = DiscretizedPHDirac::new(m, SpatialDomain::new(-1.0, 2.0).unwrap().uniform_nodes(cells)).unwrap();
        prop_assert!(is_dirac(&op.basis(), &op.bond(), &tol()).unwrap().is_yes());
    }

    #[test]
    fn boundary_forms_round_trip(
        (p, w) in (1usize..4).prop_flat_map(|n| (p1(n), square(2 * n))),
    ) {
        let n = p.nrows();
        prop_assume!(w.clone().svd(false, false).singular_values.min() > 0.05);
        let rows = w.rows(0, n).into_owned();
        let b = BoundaryStructure::new(DMatrix::zeros(0, 2 * n), rows, DMatrix::zeros(0, 2 * n), BoundaryForm::Position).unwrap();
        let m = StructureMatrices::new(p, DMatrix::zeros(n, n)).unwrap();
        let fe = convert_position_to_flow_effort(&b, &m).unwrap();
        let back = convert_flow_effort_to_position(&fe, &m).unwrap();
        prop_assert!((back.wb() - b.wb()).amax() <= 1e-10 * (1.0 + b.wb().amax()));
    }

    #[test]
    fn boundary_power_matches_trace_form(
        (p, wb, wa) in (1usize..4).prop_flat_map(|n| (
            p1(n),
            prop::collection::vec(-2.0..2.0f64, n),
            prop::collection::vec(-2.0..2.0f64, n),
        )),
    ) {
        let n = p.nrows();
        let m = StructureMatrices::new(p.clone(), DMatrix::zeros(n, n)).unwrap();
        let trace = BoundaryTrace::new(DVector::from_vec(wb.clone()), DVector::from_vec(wa.clone())).unwrap();
        let pair = boundary_flow_effort(&trace, &m).unwrap();
        let (wb, wa) = (DVector::from_vec(wb), DVector::from_vec(wa));
        let direct = 0.5 * (wb.dot(&(&p * &wb)) - wa.dot(&(&p * &wa)));
        prop_assert!((pair.power() - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        prop_assert!((power_balance_rhs(&trace, &m).unwrap() - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn conservative_boundaries_conserve_discrete_energy(
        (k, p, p0, h) in (1usize..4).prop_flat_map(|n| (skew(n), p1(n), skew(n), spd(n))),
    ) {
        let n = p.nrows();
        let sys = system(n, k, p, p0, h);
        let sd = discretize(&sys, 16, &tol()).unwrap();
        prop_assert_eq!(sd.closure_kind(), ClosureKind::Conservative);
        prop_assert!(sd.skew_defect() <= 1e-12);
        let tr = simulate_discrete(&sd, smooth_state(&sd, n), &|_| DVector::zeros(0), 2.0, 0.02, &tol()).unwrap();
        let e0 = tr.energies[0];
        prop_assert!(tr.energies.iter().all(|e| (e - e0).abs() <= 1e-11 * e0));
    }

    #[test]
    fn generating_boundaries_give_nonincreasing_energy(
        (k, d, p, h) in (1usize..4).prop_flat_map(|n| (skew(n), spd(n), p1(n), spd(n))),
    ) {
        let n = p.nrows();
        let sys = system(n, &k + &d, p, DMatrix::zeros(n, n), h);
        prop_assert!(check_generation(sys.boundary(), &tol()).unwrap().passed());
        let sd = discretize(&sys, 16, &tol()).unwrap();
        prop_assert!(sd.skew_defect() <= 1e-12);
        let tr = simulate_discrete(&sd, smooth_state(&sd, n), &|_| DVector::zeros(0), 2.0, 0.02, &tol()).unwrap();
        prop_assert!(tr.energies.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        prop_assert!(tr.residuals_space.iter().all(|r| *r <= 1e-12));
    }
}
