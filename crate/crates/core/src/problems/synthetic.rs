use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dataset::{Dataset, LabelKind};
use super::loss::{LossOracle, QuadraticLoss};
use super::{Problem, Regularizer};
use crate::error::{Error, Result};
use crate::oracle::newton_reference;
use crate::rng::mix_seed;

/// Minimizer of a convex problem and its objective `Σ ℓ_i + ℓ₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub theta: DVector<f64>,
    pub objective: f64,
    /// `objective / N`, on the same scale as trace objectives.
    pub mean_objective: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Two Gaussian classes `x ~ N(±(sep/2)·u, I)` along a random unit direction
/// `u`, labels `±1` with equal probability. Returns the dataset together with
/// the regularized optimum (strength `s0`) found by damped Newton.
pub fn make_synthetic_logreg(n: usize, d: usize, separability: f64, seed: u64, s0: f64) -> Result<(Dataset, Reference)> {
    if n == 0 || d == 0 {
        return Err(Error::config("synthetic logistic problem needs N >= 1 and d >= 1"));
    }
    if !separability.is_finite() {
        return Err(Error::config("separability must be finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x6c6f_6772]));
    let mut u = DVector::from_fn(d, |_, _| normal(&mut rng));
    let norm = u.norm();
    if norm > 0.0 {
        u /= norm;
    }
    let half = 0.5 * separability;
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
        for k in 0..d {
            features.push(y * half * u[k] + normal(&mut rng));
        }
        labels.push(y);
    }
    let ds = Dataset::new(n, d, features, labels, LabelKind::Classification)?;
    let problem = Problem::new(LossOracle::Logistic(ds), Regularizer::new(s0)?);
    let reference = newton_reference(&problem)?;
    let LossOracle::Logistic(ds) = problem.oracle else { unreachable!() };
    Ok((ds, reference))
}

/// Linear-Gaussian regression data `y = xᵀw + noise·ξ`.
pub fn make_synthetic_linreg(n: usize, d: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::config("synthetic regression problem needs N >= 1 and d >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x6c69_6e72]));
    let w = DVector::from_fn(d, |_, _| normal(&mut rng));
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        let y = row.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() + noise * normal(&mut rng);
        features.extend_from_slice(&row);
        labels.push(y);
    }
    Dataset::new(n, d, features, labels, LabelKind::Regression)
}

/// Random quadratic with `A = QᵀQ/d + I` (well conditioned) and `c ~ N(0, I)`.
pub fn make_quadratic(d: usize, n: usize, seed: u64) -> Result<QuadraticLoss> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x7175_6164]));
    let q = DMatrix::from_fn(d, d, |_, _| normal(&mut rng));
    let a = q.transpose() * &q / d as f64 + DMatrix::identity(d, d);
    let c = DVector::from_fn(d, |_, _| normal(&mut rng));
    QuadraticLoss::new(a, c, n)
}
