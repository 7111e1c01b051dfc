//! Outer correction state: the anchor gradient and curvature computed at a
//! snapshot of the posterior, either over the full dataset or online from
//! mega-batches with moving averages.
//!
//! Conventions are fixed per entry point. [`refresh_full`] returns sums over
//! all `N` examples (the inner step divides by `N`); [`refresh_mega`] returns
//! means over the mega-batch.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expfam::{CurvatureEstimator, GaussianPosterior};
use crate::problems::ExampleLoss;
use crate::rng::{MegaBatchSampler, NoiseKey, NoiseStream};

/// Curvature anchor in the shape the posterior family needs.
#[derive(Debug, Clone, PartialEq)]
pub enum OuterCurvature {
    None,
    Diag(DVector<f64>),
    Full(DMatrix<f64>),
}

/// Snapshot of the posterior scale taken at refresh.
#[derive(Debug, Clone, PartialEq)]
pub enum OuterScale {
    Unit,
    Sigma(DVector<f64>),
    Precision(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterState {
    pub g_out: DVector<f64>,
    pub curvature: OuterCurvature,
    pub m_out: DVector<f64>,
    pub scale_out: OuterScale,
    /// Posterior sample at which the anchor was evaluated.
    pub theta_out: DVector<f64>,
    pub refreshes: u64,
    pub rho1: f64,
    pub rho2: f64,
}

fn scale_of(q: &GaussianPosterior) -> OuterScale {
    match q {
        GaussianPosterior::Isotropic(_) => OuterScale::Unit,
        GaussianPosterior::Diagonal(d) => OuterScale::Sigma(d.sigma()),
        GaussianPosterior::Full(f) => OuterScale::Precision(f.precision.clone()),
    }
}

/// How a refresh estimates expectations under `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefreshSpec {
    pub estimator: CurvatureEstimator,
    /// Posterior samples averaged per refresh.
    pub samples: usize,
}

impl Default for RefreshSpec {
    fn default() -> Self {
        Self { estimator: CurvatureEstimator::Reparam, samples: 1 }
    }
}

/// Gradient sum and curvature sum over `indices` at one point `θ` drawn from
/// `q` (curvature per family).
fn accumulate<L: ExampleLoss + ?Sized>(
    q: &GaussianPosterior,
    loss: &L,
    indices: &[usize],
    theta: &DVector<f64>,
    estimator: CurvatureEstimator,
    zero_noise: bool,
) -> (DVector<f64>, OuterCurvature) {
    let d = q.dim();
    let mut g = DVector::zeros(d);
    for &i in indices {
        loss.add_grad(i, theta, 1.0, &mut g);
    }
    let curv = match q {
        GaussianPosterior::Isotropic(_) => OuterCurvature::None,
        GaussianPosterior::Diagonal(dq) => {
            if estimator == CurvatureEstimator::ExactDiag || zero_noise {
                let mut h = DVector::zeros(d);
                for &i in indices {
                    loss.add_hess_diag(i, theta, 1.0, &mut h);
                }
                OuterCurvature::Diag(h)
            } else {
                let sigma = dq.sigma();
                let h = DVector::from_fn(d, |j, _| g[j] * (theta[j] - dq.mean[j]) / (sigma[j] * sigma[j]));
                OuterCurvature::Diag(h)
            }
        }
        GaussianPosterior::Full(_) => {
            let mut h = DMatrix::zeros(d, d);
            for &i in indices {
                loss.add_hess(i, theta, 1.0, &mut h);
            }
            OuterCurvature::Full(h)
        }
    };
    (g, curv)
}

/// Average of [`accumulate`] over `spec.samples` draws; returns the first
/// draw as the representative sample.
fn sampled_sums<L: ExampleLoss + ?Sized>(
    q: &GaussianPosterior,
    loss: &L,
    indices: &[usize],
    spec: RefreshSpec,
    noise: &NoiseStream,
    key: NoiseKey,
) -> Result<(DVector<f64>, OuterCurvature, DVector<f64>)> {
    if spec.samples == 0 {
        return Err(Error::config("refresh needs at least one sample"));
    }
    let theta0 = q.sample(noise, key.with_sample(0))?;
    let (mut g, mut c) = accumulate(q, loss, indices, &theta0, spec.estimator, noise.is_zeroed());
    for k in 1..spec.samples {
        let theta = q.sample(noise, key.with_sample(k as u32))?;
        let (gk, ck) = accumulate(q, loss, indices, &theta, spec.estimator, noise.is_zeroed());
        g += gk;
        match (&mut c, ck) {
            (OuterCurvature::Diag(a), OuterCurvature::Diag(b)) => *a += b,
            (OuterCurvature::Full(a), OuterCurvature::Full(b)) => *a += b,
            _ => {}
        }
    }
    if spec.samples > 1 {
        let inv = 1.0 / spec.samples as f64;
        scale_curv_and_grad(&mut g, &mut c, inv);
    }
    Ok((g, c, theta0))
}

fn scale_curv_and_grad(g: &mut DVector<f64>, c: &mut OuterCurvature, a: f64) {
    *g *= a;
    match c {
        OuterCurvature::None => {}
        OuterCurvature::Diag(h) => *h *= a,
        OuterCurvature::Full(h) => *h *= a,
    }
}

fn check_finite(g: &DVector<f64>, c: &OuterCurvature) -> Result<()> {
    let ok = g.iter().all(|v| v.is_finite())
        && match c {
            OuterCurvature::None => true,
            OuterCurvature::Diag(h) => h.iter().all(|v| v.is_finite()),
            OuterCurvature::Full(h) => h.iter().all(|v| v.is_finite()),
        };
    if ok {
        Ok(())
    } else {
        Err(Error::NonFinite { what: "outer anchor", step: None })
    }
}

/// Exact sums `Σ_i ∇ℓ_i(θ)` (and curvature) at a single sample `θ ~ q`, or at
/// the mean when the noise stream is zeroed.
pub fn refresh_full<L: ExampleLoss + ?Sized>(
    loss: &L,
    q: &GaussianPosterior,
    spec: RefreshSpec,
    noise: &NoiseStream,
    key: NoiseKey,
) -> Result<OuterState> {
    let all: Vec<usize> = (0..loss.len()).collect();
    let (g_out, curvature, theta) = sampled_sums(q, loss, &all, spec, noise, key)?;
    check_finite(&g_out, &curvature)?;
    Ok(OuterState {
        g_out,
        curvature,
        m_out: q.mean().clone(),
        scale_out: scale_of(q),
        theta_out: theta,
        refreshes: 1,
        rho1: 0.0,
        rho2: 0.0,
    })
}

/// Online mega-batch refresh: mean gradient and curvature over `m` examples
/// drawn without replacement, blended into `prev` with rates `ρ₁`, `ρ₂`.
/// The first refresh (no `prev`) initializes the averages directly.
#[allow(clippy::too_many_arguments)]
pub fn refresh_mega<L: ExampleLoss + ?Sized>(
    loss: &L,
    q: &GaussianPosterior,
    m: usize,
    prev: Option<&OuterState>,
    rho: (f64, f64),
    sampler: &mut MegaBatchSampler,
    spec: RefreshSpec,
    noise: &NoiseStream,
    key: NoiseKey,
) -> Result<OuterState> {
    let n = loss.len();
    if m == 0 || m > n {
        return Err(Error::config(format!("mega-batch size {m} must be in 1..={n}")));
    }
    let idx = sampler.draw(m);
    let (mut g_hat, mut c_hat, theta) = sampled_sums(q, loss, &idx, spec, noise, key)?;
    scale_curv_and_grad(&mut g_hat, &mut c_hat, 1.0 / m as f64);
    check_finite(&g_hat, &c_hat)?;
    let (rho1, rho2) = rho;
    let (g_out, curvature, refreshes) = match prev {
        None => (g_hat, c_hat, 1),
        Some(p) => {
            let g = &p.g_out * rho1 + g_hat * (1.0 - rho1);
            let c = match (&p.curvature, c_hat) {
                (OuterCurvature::None, OuterCurvature::None) => OuterCurvature::None,
                (OuterCurvature::Diag(a), OuterCurvature::Diag(b)) => OuterCurvature::Diag(a * rho2 + b * (1.0 - rho2)),
                (OuterCurvature::Full(a), OuterCurvature::Full(b)) => OuterCurvature::Full(a * rho2 + b * (1.0 - rho2)),
                _ => return Err(Error::config("outer state family changed between refreshes")),
            };
            (g, c, p.refreshes + 1)
        }
    };
    Ok(OuterState {
        g_out,
        curvature,
        m_out: q.mean().clone(),
        scale_out: scale_of(q),
        theta_out: theta,
        refreshes,
        rho1,
        rho2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::DiagonalGaussian;
    use crate::problems::{Dataset, LabelKind, LossOracle};
    use crate::rng::NoiseRole;

    fn two_example_regression() -> LossOracle {
        let ds = Dataset::new(2, 2, vec![1.0, 0.0, 1.0, 2.0], vec![1.0, -1.0], LabelKind::Regression).unwrap();
        LossOracle::LeastSquares(ds)
    }

    #[test]
    fn full_refresh_is_hand_sum_at_mean() {
        let loss = two_example_regression();
        let m = DVector::from_vec(vec![0.5, 0.5]);
        let q = GaussianPosterior::isotropic(m.clone());
        let o = refresh_full(&loss, &q, RefreshSpec::default(), &NoiseStream::zeroed(), NoiseKey::shared(0, NoiseRole::Refresh))
            .unwrap();
        // r₁ = 0.5 − 1 = −0.5, r₂ = 1.5 + 1 = 2.5; g = r₁ x₁ + r₂ x₂.
        assert_eq!(o.g_out, DVector::from_vec(vec![2.0, 5.0]));
        assert_eq!(o.theta_out, m);
    }

    #[test]
    fn mega_full_size_with_zero_rho_is_full_mean() {
        let loss = two_example_regression();
        let q = GaussianPosterior::isotropic(DVector::from_vec(vec![0.5, 0.5]));
        let mut sampler = MegaBatchSampler::new(0, 2);
        let key = NoiseKey::shared(0, NoiseRole::Refresh);
        let z = NoiseStream::zeroed();
        let o = refresh_mega(&loss, &q, 2, None, (0.0, 0.0), &mut sampler, RefreshSpec::default(), &z, key).unwrap();
        assert_eq!(o.g_out, DVector::from_vec(vec![1.0, 2.5]));
        assert!(refresh_mega(&loss, &q, 3, None, (0.0, 0.0), &mut sampler, RefreshSpec::default(), &z, key).is_err());
    }

    #[test]
    fn rho_one_freezes_after_first_refresh() {
        let loss = two_example_regression();
        let mut sampler = MegaBatchSampler::new(0, 2);
        let z = NoiseStream::zeroed();
        let key = NoiseKey::shared(0, NoiseRole::Refresh);
        let q0 = GaussianPosterior::isotropic(DVector::from_vec(vec![0.5, 0.5]));
        let first = refresh_mega(&loss, &q0, 2, None, (1.0, 1.0), &mut sampler, RefreshSpec::default(), &z, key).unwrap();
        let q1 = GaussianPosterior::isotropic(DVector::from_vec(vec![-3.0, 4.0]));
        let second =
            refresh_mega(&loss, &q1, 2, Some(&first), (1.0, 1.0), &mut sampler, RefreshSpec::default(), &z, key).unwrap();
        assert_eq!(second.g_out, first.g_out);
        assert_eq!(second.m_out, q1.mean().clone());
        assert_eq!(second.refreshes, 2);
    }

    #[test]
    fn diagonal_zero_noise_uses_exact_curvature() {
        let loss = two_example_regression();
        let q = GaussianPosterior::Diagonal(
            DiagonalGaussian::new(DVector::zeros(2), DVector::from_element(2, 1.0), 0.0, 1.0).unwrap(),
        );
        let o = refresh_full(&loss, &q, RefreshSpec::default(), &NoiseStream::zeroed(), NoiseKey::shared(0, NoiseRole::Refresh))
            .unwrap();
        assert_eq!(o.curvature, OuterCurvature::Diag(DVector::from_vec(vec![2.0, 4.0])));
    }
}
