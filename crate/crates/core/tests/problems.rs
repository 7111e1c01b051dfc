use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use pocoopt::oracle::{fd_grad, fd_hess, newton_reference, rel_err, FD_GRAD_RTOL, FD_HESS_RTOL};
use pocoopt::problems::{
    make_quadratic, make_synthetic_linreg, make_synthetic_logreg, Dataset, ExampleLoss, LabelKind, LossOracle,
    Problem, Regularizer,
};

// Values below come from tools/oracles.py (numpy).

fn three_point_logistic() -> Problem {
    let ds = Dataset::new(3, 2, vec![1.0, 0.5, -0.3, 2.0, 0.8, -1.2], vec![1.0, -1.0, 1.0], LabelKind::Classification)
        .unwrap();
    Problem::new(LossOracle::Logistic(ds), Regularizer::new(0.5).unwrap())
}

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

#[test]
fn logistic_matches_numpy() {
    let p = three_point_logistic();
    let th = v(&[0.3, -0.2]);
    let value: f64 = (0..3).map(|i| p.oracle.value(i, &th)).sum();
    assert!((value - 1.5576778943835967).abs() < 1e-14);
    let g = p.oracle.batch_grad_sum(&[0, 1, 2], &th);
    assert!((g - v(&[-0.869935773169196, 0.9934066842469599])).amax() < 1e-14);
    let mut h = DMatrix::zeros(2, 2);
    for i in 0..3 {
        p.oracle.add_hess(i, &th, 1.0, &mut h);
    }
    let want = DMatrix::from_row_slice(2, 2, &[0.41984495306563147, -0.24427640105779108, -0.24427640105779108, 1.344211953518972]);
    assert!((h - want).amax() < 1e-14);
}

#[test]
fn newton_reference_matches_numpy() {
    let r = newton_reference(&three_point_logistic()).unwrap();
    // Stops at gradient norm 1e-10, so θ is only pinned to about that.
    assert!((r.theta - v(&[1.0253103316967203, -0.684300410642965])).amax() < 1e-9);
    assert!((r.objective - 1.1372513178123342).abs() < 1e-12);
    assert!((r.mean_objective - 1.1372513178123342 / 3.0).abs() < 1e-12);
}

#[test]
fn logistic_at_origin_single_example() {
    let ds = Dataset::new(1, 2, vec![1.0, 0.0], vec![1.0], LabelKind::Classification).unwrap();
    let o = LossOracle::Logistic(ds);
    let z = DVector::zeros(2);
    assert!((o.value(0, &z) - std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(o.grad(0, &z), v(&[-0.5, 0.0]));
}

#[test]
fn desk_scale_reference_is_certified() {
    let (ds, r) = make_synthetic_logreg(5000, 100, 1.0, 0, 1.0).unwrap();
    let p = Problem::new(LossOracle::Logistic(ds), Regularizer::new(1.0).unwrap());
    assert!(p.full_grad(&r.theta).norm() <= 1e-10);
}

#[test]
fn regularized_quadratic_closed_form() {
    let q = make_quadratic(6, 3, 8).unwrap();
    let (a, c) = (q.a.clone(), q.c.clone());
    let p = Problem::new(LossOracle::Quadratic(q), Regularizer::new(0.7).unwrap());
    let r = newton_reference(&p).unwrap();
    // Σ_i ½(θ−c)ᵀA(θ−c)/N = ½(θ−c)ᵀA(θ−c): θ* = (A + s₀I)⁻¹ A c.
    let want = (&a + DMatrix::identity(6, 6) * 0.7).lu().solve(&(&a * &c)).unwrap();
    assert!((r.theta - want).amax() < 1e-12);
}

#[test]
fn separable_data_needs_and_finds_regularized_optimum() {
    let (ds, r) = make_synthetic_logreg(40, 3, 50.0, 4, 0.1).unwrap();
    let p = Problem::new(LossOracle::Logistic(ds), Regularizer::new(0.1).unwrap());
    assert!(p.full_grad(&r.theta).norm() <= 1e-10);
}

#[test]
fn sparse_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.svm");
    std::fs::write(&path, "+1 1:0.5 3:2\n-1 2:1.5\n").unwrap();
    let ds = Dataset::load(&path, pocoopt::problems::DataFormat::Auto, LabelKind::Classification, None).unwrap();
    assert_eq!(ds.dim(), 3);
    assert_eq!(ds.row(0), &[0.5, 0.0, 2.0]);
    assert_eq!(ds.labels(), &[1.0, -1.0]);
}

fn oracle_strategy() -> impl Strategy<Value = (LossOracle, u64)> {
    (0usize..3, 0u64..1000).prop_map(|(kind, seed)| {
        let o = match kind {
            0 => LossOracle::Logistic(make_synthetic_logreg(10, 4, 1.0, seed, 1.0).unwrap().0),
            1 => LossOracle::LeastSquares(make_synthetic_linreg(10, 4, 0.3, seed).unwrap()),
            _ => LossOracle::Quadratic(make_quadratic(4, 10, seed).unwrap()),
        };
        (o, seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn finite_differences_agree((o, _) in oracle_strategy(), i in 0usize..10, th in prop::collection::vec(-3.0f64..3.0, 4)) {
        let th = DVector::from_vec(th);
        let g = o.grad(i, &th);
        let fg = fd_grad(|x| o.value(i, x), &th, 1e-5);
        prop_assert!(rel_err(g.iter(), fg.iter()) <= FD_GRAD_RTOL);
        let h = o.hess(i, &th);
        let fh = fd_hess(|x| o.grad(i, x), &th, 1e-5);
        prop_assert!(rel_err(h.iter(), fh.iter()) <= FD_HESS_RTOL);
    }

    #[test]
    fn objective_is_convex_on_segments((o, _) in oracle_strategy(), a in prop::collection::vec(-3.0f64..3.0, 4),
                                       b in prop::collection::vec(-3.0f64..3.0, 4), s in 0.0f64..1.0) {
        let p = Problem::new(o, Regularizer::new(1.0).unwrap());
        let (a, b) = (DVector::from_vec(a), DVector::from_vec(b));
        let x = &a * (1.0 - s) + &b * s;
        let chord = (1.0 - s) * p.objective(&a) + s * p.objective(&b);
        prop_assert!(p.objective(&x) <= chord + 1e-12 * (1.0 + chord.abs()));
    }
}
