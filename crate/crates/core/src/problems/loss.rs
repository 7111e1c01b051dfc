use nalgebra::{DMatrix, DVector};

use super::dataset::Dataset;
use crate::error::{Error, Result};

/// Per-example loss oracle: value, gradient and Hessian of `ℓ_i`.
///
/// The `add_*` methods accumulate `scale · (derivative)` into `out` so that
/// sums over batches need no temporaries. Indices are 0-based and assumed in
/// range; use the checked methods on [`super::Problem`] at API boundaries.
pub trait ExampleLoss: Sync {
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    fn value(&self, i: usize, theta: &DVector<f64>) -> f64;
    fn add_grad(&self, i: usize, theta: &DVector<f64>, scale: f64, out: &mut DVector<f64>);
    fn add_hess(&self, i: usize, theta: &DVector<f64>, scale: f64, out: &mut DMatrix<f64>);
    fn add_hess_diag(&self, i: usize, theta: &DVector<f64>, scale: f64, out: &mut DVector<f64>);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn grad(&self, i: usize, theta: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        self.add_grad(i, theta, 1.0, &mut g);
        g
    }

    fn hess(&self, i: usize, theta: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let mut h = DMatrix::zeros(d, d);
        self.add_hess(i, theta, 1.0, &mut h);
        h
    }

    fn hess_diag(&self, i: usize, theta: &DVector<f64>) -> DVector<f64> {
        let mut h = DVector::zeros(self.dim());
        self.add_hess_diag(i, theta, 1.0, &mut h);
        h
    }

    /// `Σ_{i ∈ batch} ∇ℓ_i(θ)`, summed in batch order.
    fn batch_grad_sum(&self, batch: &[usize], theta: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        for &i in batch {
            self.add_grad(i, theta, 1.0, &mut g);
        }
        g
    }

    /// Mean gradient over a batch.
    fn batch_grad_mean(&self, batch: &[usize], theta: &DVector<f64>) -> DVector<f64> {
        let mut g = self.batch_grad_sum(batch, theta);
        g /= batch.len() as f64;
        g
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], theta: &DVector<f64>) -> f64 {
    x.iter().zip(theta.iter()).map(|(a, b)| a * b).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], out: &mut DVector<f64>) {
    for (o, xi) in out.iter_mut().zip(x) {
        *o += alpha * xi;
    }
}

#[inline]
fn add_outer(alpha: f64, x: &[f64], out: &mut DMatrix<f64>) {
    let d = x.len();
    for c in 0..d {
        let ac = alpha * x[c];
        if ac == 0.0 {
            continue;
        }
        for r in 0..d {
            out[(r, c)] += ac * x[r];
        }
    }
}

/// `log(1 + exp(t))` without overflow.
#[inline]
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Logistic sigmoid without overflow.
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ℓ_i(θ) = ½ (θ − c)ᵀ A (θ − c) / N`, the same for every example.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLoss {
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub n: usize,
}

impl QuadraticLoss {
    pub fn new(a: DMatrix<f64>, c: DVector<f64>, n: usize) -> Result<Self> {
        let d = c.len();
        if a.nrows() != d || a.ncols() != d {
            return Err(Error::config(format!("quadratic: A is {}x{}, c has {d} entries", a.nrows(), a.ncols())));
        }
        if n == 0 {
            return Err(Error::config("quadratic: need at least one example"));
        }
        Ok(Self { a, c, n })
    }
}

/// Which per-example loss is used.
#[derive(Debug, Clone, PartialEq)]
pub enum LossOracle {
    /// `log(1 + exp(−y xᵀθ))` on a classification dataset.
    Logistic(Dataset),
    /// `½ (xᵀθ − y)²` on a regression dataset.
    LeastSquares(Dataset),
    Quadratic(QuadraticLoss),
}

impl LossOracle {
    pub fn name(&self) -> &'static str {
        match self {
            LossOracle::Logistic(_) => "logistic",
            LossOracle::LeastSquares(_) => "least-squares",
            LossOracle::Quadratic(_) => "quadratic",
        }
    }

    /// For dataset-backed losses, the scalar `w_i` with `∇²ℓ_i = w_i x_i x_iᵀ`.
    pub(crate) fn curvature_weight(&self, i: usize, theta: &DVector<f64>) -> f64 {
        match self {
            LossOracle::Logistic(ds) => {
                let s = sigmoid(dot(ds.row(i), theta));
                s * (1.0 - s)
            }
            LossOracle::LeastSquares(_) => 1.0,
            LossOracle::Quadratic(_) => f64::NAN,
        }
    }

    pub fn dataset(&self) -> Option<&Dataset> {
        match self {
            LossOracle::Logistic(ds) | LossOracle::LeastSquares(ds) => Some(ds),
            LossOracle::Quadratic(_) => None,
        }
    }
}

impl ExampleLoss for LossOracle {
    fn len(&self) -> usize {
        match self {
            LossOracle::Logistic(ds) | LossOracle::LeastSquares(ds) => ds.len(),
            LossOracle::Quadratic(q) => q.n,
        }
    }

    fn dim(&self) -> usize {
        match self {
            LossOracle::Logistic(ds) | LossOracle::LeastSquares(ds) => ds.dim(),
            LossOracle::Quadratic(q) => q.c.len(),
        }
    }

    fn value(&self, i: usize, theta: &DVector<f64>) -> f64 {
        match self {
            LossOracle::Logistic(ds) => softplus(-ds.label(i) * dot(ds.row(i), theta)),
            LossOracle::LeastSquares(ds) => {
                let r = dot(ds.row(i), theta) - ds.label(i);
                0.5 * r * r
            }
            LossOracle::Quadratic(q) => {
                let diff = theta - &q.c;
                0.5 * diff.dot(&(&q.a * &diff)) / q.n as f64
            }
        }
    }

    fn add_grad(&self, i: usize, theta: &DVector<f64>, scale: f64, out: &mut DVector<f64>) {
        match self {
            LossOracle::Logistic(ds) => {
                let y = ds.label(i);
                let x = ds.row(i);
                let coef = -y * sigmoid(-y * dot(x, theta));
                axpy(scale * coef, x, out);
            }
            LossOracle::LeastSquares(ds) => {
                let x = ds.row(i);
                let r = dot(x, theta) - ds.label(i);
                axpy(scale * r, x, out);
            }
            LossOracle::Quadratic(q) => {
                let g = &q.a * (theta - &q.c);
                out.axpy(scale / q.n as f64, &g, 1.0);
            }
        }
    }

    fn add_hess(&self, i: usize, theta: &DVector<f64>, scale: f64, out: &mut DMatrix<f64>) {
        match self {
            LossOracle::Logistic(ds) => {
                let x = ds.row(i);
                let s = sigmoid(dot(x, theta));
                add_outer(scale * s * (1.0 - s), x, out);
            }
            LossOracle::LeastSquares(ds) => add_outer(scale, ds.row(i), out),
            LossOracle::Quadratic(q) => out.zip_apply(&q.a, |o, a| *o += scale * a / q.n as f64),
        }
    }

    fn add_hess_diag(&self, i: usize, theta: &DVector<f64>, scale: f64, out: &mut DVector<f64>) {
        match self {
            LossOracle::Logistic(ds) => {
                let x = ds.row(i);
                let s = sigmoid(dot(x, theta));
                let w = scale * s * (1.0 - s);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o += w * xi * xi;
                }
            }
            LossOracle::LeastSquares(ds) => {
                for (o, xi) in out.iter_mut().zip(ds.row(i)) {
                    *o += scale * xi * xi;
                }
            }
            LossOracle::Quadratic(q) => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o += scale * q.a[(k, k)] / q.n as f64;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::dataset::LabelKind;

    fn one_row(x: &[f64], y: f64) -> LossOracle {
        LossOracle::Logistic(Dataset::new(1, x.len(), x.to_vec(), vec![y], LabelKind::Classification).unwrap())
    }

    #[test]
    fn logistic_at_zero() {
        let l = one_row(&[1.0, 0.0], 1.0);
        let th = DVector::zeros(2);
        assert!((l.value(0, &th) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(l.grad(0, &th), DVector::from_vec(vec![-0.5, 0.0]));
        assert_eq!(l.hess(0, &th)[(0, 0)], 0.25);
    }

    #[test]
    fn logistic_saturates_without_overflow() {
        let l = one_row(&[1.0], 1.0);
        let far = DVector::from_vec(vec![1e4]);
        assert_eq!(l.value(0, &far), 0.0);
        assert_eq!(l.grad(0, &far)[0], -0.0);
        let wrong = DVector::from_vec(vec![-1e4]);
        assert!((l.value(0, &wrong) - 1e4).abs() < 1e-9);
        assert!((l.grad(0, &wrong)[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn quadratic_minimizer_has_zero_gradient() {
        let q = LossOracle::Quadratic(QuadraticLoss::new(DMatrix::identity(3, 3), DVector::zeros(3), 4).unwrap());
        let th = DVector::zeros(3);
        assert_eq!(q.grad(0, &th), DVector::zeros(3));
        assert_eq!(q.value(2, &DVector::from_element(3, 1.0)), 0.375);
    }

    #[test]
    fn hess_diag_matches_full_hessian_diagonal() {
        let ds = Dataset::new(2, 3, vec![1.0, -2.0, 0.5, 0.3, 0.1, 2.0], vec![1.0, -1.0], LabelKind::Classification)
            .unwrap();
        let l = LossOracle::Logistic(ds);
        let th = DVector::from_vec(vec![0.2, -0.1, 0.4]);
        for i in 0..2 {
            assert_eq!(l.hess(i, &th).diagonal(), l.hess_diag(i, &th));
        }
    }

    #[test]
    fn sigmoid_tails() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((softplus(-50.0) - (-50f64).exp()).abs() < 1e-30);
    }
}
