use num_complex::Complex64;
use proptest::prelude::*;

use qfilter::filter::{homodyne_sme_step, normalize_linear, zakai_step};
use qfilter::io::{format_trajectory, parse_record, parse_trajectory};
use qfilter::ito::Basis;
use qfilter::ito::{check_unitarity, drift_mismatch, expr_mul, flow_differential, ItoExpression};
use qfilter::operator::{
    hermitian_eigenvalues, lindblad_heisenberg, lindblad_schrodinger, nearest_density,
    trace_distance,
};
use qfilter::{
    DensityMatrix, Detection, FilterKind, ObservationRecord, Operator, SystemModel, TimeGrid,
};

fn operator(dim: usize) -> impl Strategy<Value = Operator> {
    proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), dim * dim).prop_map(move |v| {
        Operator::from_row_major(
            dim,
            v.into_iter()
                .map(|(re, im)| Complex64::new(re, im))
                .collect(),
        )
        .unwrap()
    })
}

fn hermitian(dim: usize) -> impl Strategy<Value = Operator> {
    operator(dim).prop_map(|a| a.hermitian_part())
}

fn density(dim: usize) -> impl Strategy<Value = DensityMatrix> {
    operator(dim).prop_map(|a| {
        let mut p = &a * &a.adjoint();
        p.add_scaled_re(&Operator::identity(a.dim()), 1e-3);
        let tr = p.trace().re;
        DensityMatrix::new(p.scale_re(1.0 / tr)).unwrap()
    })
}

fn model() -> impl Strategy<Value = SystemModel> {
    (2usize..=4).prop_flat_map(|d| {
        (hermitian(d), operator(d), density(d))
            .prop_map(|(h, l, rho)| SystemModel::new(h, l, rho, Detection::Homodyne).unwrap())
    })
}

fn model_and<T: std::fmt::Debug>(
    extra: impl Fn(usize) -> BoxedStrategy<T>,
) -> impl Strategy<Value = (SystemModel, T)> {
    model().prop_flat_map(move |m| {
        let d = m.dim();
        (Just(m), extra(d))
    })
}

fn assert_density(rho: &DensityMatrix, tol: f64) {
    let a = rho.as_operator();
    assert!((a.trace().re - 1.0).abs() < tol, "trace {}", a.trace());
    assert!(a.trace().im.abs() < tol);
    assert!(a.hermiticity_deviation() < tol);
    assert!(hermitian_eigenvalues(a).iter().all(|&e| e > -tol));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn heisenberg_and_schrodinger_generators_are_dual(
        (m, (x, rho)) in model_and(|d| (hermitian(d), density(d)).boxed())
    ) {
        let lhs = x.trace_product(&lindblad_schrodinger(&m, rho.as_operator()).unwrap());
        let rhs = lindblad_heisenberg(&m, &x).unwrap().trace_product(rho.as_operator());
        prop_assert!((lhs - rhs).norm() < 1e-10 * (1.0 + lhs.norm()));
    }

    #[test]
    fn generator_preserves_trace_and_identity(m in model()) {
        let d = m.dim();
        prop_assert!(lindblad_heisenberg(&m, &Operator::identity(d)).unwrap().max_abs() < 1e-12);
        let drift = lindblad_schrodinger(&m, m.initial_state().as_operator()).unwrap();
        prop_assert!(drift.trace().norm() < 1e-12);
        prop_assert!(drift.hermiticity_deviation() < 1e-12);
    }

    #[test]
    fn evolution_is_unitary_for_any_model(m in model()) {
        let scale = 1.0 + m.decay_operator().max_abs() + m.hamiltonian().max_abs();
        prop_assert!(check_unitarity(&m).pruned(1e-12 * scale).is_empty());
    }

    #[test]
    fn flow_drift_matches_lindblad((m, x) in model_and(|d| operator(d).boxed())) {
        prop_assert!(drift_mismatch(&m, &x).unwrap() < 1e-11);
        let flow = flow_differential(&m, &x).unwrap();
        // dA and dA† coefficients of the flow are [X, L] and [L†, X]
        let dadag = &(&x * m.coupling()) - &(m.coupling() * &x);
        let da = &(m.coupling_adjoint() * &x) - &(&x * m.coupling_adjoint());
        let zero = Operator::zeros(m.dim());
        prop_assert!(flow.coefficient(Basis::DAdag).unwrap_or(&zero).max_abs_diff(&dadag) < 1e-11);
        prop_assert!(flow.coefficient(Basis::DA).unwrap_or(&zero).max_abs_diff(&da) < 1e-11);
    }

    #[test]
    fn ito_products_are_associative(
        (a, b, c) in (operator(2), operator(2), operator(2))
    ) {
        let e1 = ItoExpression::term(a.clone(), Basis::DA).plus(b.clone(), Basis::DLambda);
        let e2 = ItoExpression::term(b, Basis::DAdag).plus(c.clone(), Basis::DLambda);
        let e3 = ItoExpression::term(c, Basis::DAdag).plus(a, Basis::DA);
        let left = expr_mul(&expr_mul(&e1, &e2).unwrap(), &e3).unwrap();
        let right = expr_mul(&e1, &expr_mul(&e2, &e3).unwrap()).unwrap();
        let diff = left.add(&right.scale(Complex64::new(-1.0, 0.0))).unwrap();
        prop_assert!(diff.pruned(1e-10).is_empty());
    }

    #[test]
    fn nearest_density_is_valid_and_idempotent(
        (h, shift) in (2usize..=4).prop_flat_map(|d| (hermitian(d), 0.5f64..8.0))
    ) {
        let mut a = h.clone();
        a.add_scaled_re(&Operator::identity(h.dim()), shift);
        prop_assume!(a.trace().re > 1e-3);
        let rho = nearest_density(&a).unwrap();
        assert_density(&rho, 1e-12);
        let again = nearest_density(rho.as_operator()).unwrap();
        prop_assert!(again.as_operator().max_abs_diff(rho.as_operator()) < 1e-12);
        if hermitian_eigenvalues(&a).iter().all(|&e| e >= 0.0) {
            let scaled = a.scale_re(1.0 / a.trace().re);
            prop_assert!(rho.as_operator().max_abs_diff(&scaled) < 1e-12);
        }
    }

    #[test]
    fn homodyne_step_keeps_a_density(
        (m, dy) in model_and(|_| (-0.2f64..0.2).boxed())
    ) {
        let rho = homodyne_sme_step(&m, m.initial_state(), dy, 1e-3).unwrap();
        assert_density(&rho, 1e-10);
    }

    #[test]
    fn zakai_step_is_linear_and_agrees_after_normalization(
        (m, (dy, c)) in model_and(|_| ((-0.1f64..0.1), (0.1f64..10.0)).boxed())
    ) {
        let sigma = m.initial_state().as_operator();
        let a = zakai_step(&m, sigma, dy, 1e-4).unwrap();
        let b = zakai_step(&m, &sigma.scale_re(c), dy, 1e-4).unwrap();
        prop_assert!(b.max_abs_diff(&a.scale_re(c)) < 1e-10 * c.max(1.0));
        let na = normalize_linear(&a).unwrap();
        let nb = normalize_linear(&b).unwrap();
        prop_assert!(trace_distance(na.as_operator(), nb.as_operator()) < 1e-10);
    }

    #[test]
    fn counting_records_roundtrip(bits in proptest::collection::vec(any::<bool>(), 1..100), dt in 1e-4f64..1e-1) {
        let grid = TimeGrid::new(0.0, dt, bits.len()).unwrap();
        let incs: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let rec = ObservationRecord::new(grid, Detection::Counting, incs, None).unwrap();
        let back = parse_record(&qfilter::io::format_record(&rec)).unwrap();
        prop_assert_eq!(back.increments(), rec.increments());
        prop_assert_eq!(back.grid(), rec.grid());
        prop_assert_eq!(back.detection(), Detection::Counting);
    }

    #[test]
    fn trajectories_roundtrip(
        (m, dys) in model_and(|_| proptest::collection::vec(-0.1f64..0.1, 1..30).boxed()),
        linear: bool,
    ) {
        let grid = TimeGrid::new(0.5, 1e-3, dys.len()).unwrap();
        let rec = ObservationRecord::new(grid, Detection::Homodyne, dys, None).unwrap();
        let kind = if linear { FilterKind::Linear } else { FilterKind::Normalized };
        let traj = qfilter::filter::run_filter(&m, &rec, kind).unwrap();
        let text = format_trajectory(&traj);
        let back = parse_trajectory(&text).unwrap();
        prop_assert_eq!(format_trajectory(&back), text);
    }
}
