use nalgebra::{DMatrix, DVector};

use pocoopt::expfam::{CurvatureEstimator, GaussianPosterior};
use pocoopt::optim::{
    alpha_weighted_correction, ivon_update, von_poco_inner_step, von_poco_refresh, Cadence, IvonParams, IvonState,
    OptimizerConfig, Stepper, VonPocoRunner,
};
use pocoopt::outer::{refresh_mega, RefreshSpec};
use pocoopt::problems::{
    make_synthetic_logreg, Dataset, ExampleLoss, LabelKind, LossOracle, Problem, QuadraticLoss, Regularizer,
};
use pocoopt::rng::{MegaBatchSampler, NoiseKey, NoiseRole, NoiseStream};
use pocoopt::trace::param_hash;

// Frozen values come from tools/oracles.py (numpy).

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

#[test]
fn ivon_three_steps_match_numpy() {
    let hp = IvonParams { beta1: 0.9, beta2: 0.99, delta: 0.1, kappa: 1.0, xi: 1e3, curvature: CurvatureEstimator::Reparam };
    let mut st = IvonState::new(v(&[1.0, -2.0]), 0.5);
    let g = [v(&[0.4, -0.1]), v(&[0.2, 0.3]), v(&[-0.5, 0.6])];
    let h = [v(&[0.8, 0.1]), v(&[-0.3, 0.9]), v(&[1.2, 0.05])];
    for k in 0..3 {
        ivon_update(&mut st, &hp, &g[k], &h[k], None, 0.05).unwrap();
    }
    assert!((&st.m - v(&[0.9179103700107322, -1.9755109357026663])).amax() < 1e-14);
    assert!((&st.h - v(&[0.5021223441407722, 0.49558310062885025])).amax() < 1e-14);
    assert!((&st.g - v(&[0.0004000000000000045, 0.07889999999999997])).amax() < 1e-14);
}

fn two_by_two_quadratic(n: usize) -> Problem {
    let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    Problem::new(LossOracle::Quadratic(QuadraticLoss::new(a, v(&[1.0, -1.0]), n).unwrap()), Regularizer::new(0.5).unwrap())
}

#[test]
fn von_poco_inner_step_matches_numpy() {
    let p = two_by_two_quadratic(4);
    let loss = p.absorbed();
    let z = NoiseStream::zeroed();
    let mut st = von_poco_refresh(&loss, &v(&[0.2, 0.1]), &DMatrix::identity(2, 2), &z, 1).unwrap();
    st.m_in = v(&[0.5, -0.4]);
    st.s_in = DMatrix::identity(2, 2) * 3.0;
    von_poco_inner_step(&mut st, &loss, &[2], 0.5, 0.3, &z, 2, false).unwrap();
    assert!((&st.m_in - v(&[0.5807453416149069, -0.43416149068322984])).amax() < 1e-14);
    assert!((&st.s_in - DMatrix::from_row_slice(2, 2, &[2.85, 0.15, 0.15, 2.55])).amax() < 1e-14);
}

#[test]
fn mega_batch_recurrence_matches_numpy() {
    let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let loss = LossOracle::Quadratic(QuadraticLoss::new(a, v(&[1.0, -1.0]), 1).unwrap());
    let mut sampler = MegaBatchSampler::new(0, 1);
    let z = NoiseStream::zeroed();
    let mut prev = None;
    for (k, m) in [v(&[0.0, 0.0]), v(&[1.0, 2.0]), v(&[-1.0, 0.5])].into_iter().enumerate() {
        let q = GaussianPosterior::isotropic(m);
        let key = NoiseKey::shared(k as u64, NoiseRole::Refresh);
        prev = Some(refresh_mega(&loss, &q, 1, prev.as_ref(), (0.3, 0.3), &mut sampler, RefreshSpec::default(), &z, key).unwrap());
    }
    let g = prev.unwrap().g_out;
    assert!((g - v(&[-2.0949999999999998, 1.025])).amax() < 1e-14);
}

#[test]
fn alpha_half_on_two_examples_by_hand() {
    // ℓ_i = ½(xᵢᵀθ − yᵢ)², x₁ = (1, 0), y₁ = 1, x₂ = (1, 2), y₂ = −1.
    let ds = Dataset::new(2, 2, vec![1.0, 0.0, 1.0, 2.0], vec![1.0, -1.0], LabelKind::Regression).unwrap();
    let loss = LossOracle::LeastSquares(ds);
    let th_in = v(&[1.0, 1.0]);
    let th_out = v(&[0.5, 0.5]);
    let g_in = loss.grad(1, &th_in); // r = 4: (4, 8)
    let g_out = loss.grad(1, &th_out); // r = 2.5: (2.5, 5)
    let mean = loss.batch_grad_sum(&[0, 1], &th_out) / 2.0; // (1, 2.5)
    let got = alpha_weighted_correction(&g_in, &g_out, &mean, 0.5);
    // (4 − 1.25 + 0.5, 8 − 2.5 + 1.25)
    assert_eq!(got, v(&[3.25, 6.75]));
}

#[test]
fn diagonal_sample_unit_variance_example() {
    let q = GaussianPosterior::Diagonal(
        pocoopt::expfam::DiagonalGaussian::new(v(&[0.0, 0.0]), v(&[99.0, 99.0]), 1.0, 0.01).unwrap(),
    );
    assert!((q.sample_with(&v(&[1.0, 1.0])).unwrap() - v(&[1.0, 1.0])).amax() < 1e-15);
}

/// Pins the update order: any reordering of the precision
/// and mean updates changes this hash.
#[test]
fn von_poco_order_regression() {
    let (ds, _) = make_synthetic_logreg(30, 4, 1.5, 77, 1.0).unwrap();
    let p = Problem::new(LossOracle::Logistic(ds), Regularizer::new(1.0).unwrap());
    let cfg = OptimizerConfig { eta: 0.02, precision_eta: Some(0.1), inner_steps: 7, batch_size: 3, ..Default::default() };
    let mut r = VonPocoRunner::new(&p, &cfg, DVector::zeros(4), Cadence { start: 5, inner: 7 }, 40, 3).unwrap();
    for t in 1..=40 {
        r.step(t).unwrap();
    }
    assert_eq!(format!("{:016x}", param_hash(r.mean())), VON_ORDER_HASH);
}

const VON_ORDER_HASH: &str = "e80be58c9c5f9466";
