//! Loss oracles, datasets, synthetic generators and the quadratic regularizer.

mod dataset;
mod loss;
mod synthetic;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use dataset::{parse_csv, parse_sparse, DataFormat, Dataset, LabelKind};
pub use loss::{sigmoid, softplus, ExampleLoss, LossOracle, QuadraticLoss};
pub use synthetic::{make_quadratic, make_synthetic_linreg, make_synthetic_logreg, Reference};

use crate::error::{Error, Result};

/// `ℓ₀(θ) = s₀ · ½ θᵀθ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    pub s0: f64,
}

impl Regularizer {
    pub fn new(s0: f64) -> Result<Self> {
        if !(s0 >= 0.0 && s0.is_finite()) {
            return Err(Error::config(format!("regularizer strength must be finite and >= 0, got {s0}")));
        }
        Ok(Self { s0 })
    }

    pub fn value(&self, theta: &DVector<f64>) -> f64 {
        0.5 * self.s0 * theta.norm_squared()
    }
}

/// A dataset-backed objective `Σ_i ℓ_i(θ) + ℓ₀(θ)`.
#[derive(Debug, Clone)]
pub struct Problem {
    pub oracle: LossOracle,
    pub reg: Regularizer,
}

impl Problem {
    pub fn new(oracle: LossOracle, reg: Regularizer) -> Self {
        Self { oracle, reg }
    }

    pub fn len(&self) -> usize {
        self.oracle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.oracle.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.oracle.dim()
    }

    /// View with the regularizer folded into every example as `ℓ_i + ℓ₀/N`.
    pub fn absorbed(&self) -> Absorbed<'_> {
        Absorbed { problem: self, per_example: self.reg.s0 / self.len() as f64 }
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.len() });
        }
        Ok(())
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::config(format!("parameter has {} entries, problem has {}", theta.len(), self.dim())));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "parameter", step: None });
        }
        Ok(())
    }

    /// Checked `ℓ_i(θ)`; `i` is 0-based.
    pub fn loss_value(&self, i: usize, theta: &DVector<f64>) -> Result<f64> {
        self.check_index(i)?;
        self.check_theta(theta)?;
        Ok(self.oracle.value(i, theta))
    }

    pub fn loss_grad(&self, i: usize, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_index(i)?;
        self.check_theta(theta)?;
        Ok(self.oracle.grad(i, theta))
    }

    pub fn loss_hess(&self, i: usize, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_index(i)?;
        self.check_theta(theta)?;
        Ok(self.oracle.hess(i, theta))
    }

    pub fn loss_hess_diag(&self, i: usize, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_index(i)?;
        self.check_theta(theta)?;
        Ok(self.oracle.hess_diag(i, theta))
    }

    /// `Σ_i ℓ_i(θ) + ℓ₀(θ)`, summed in index order.
    pub fn objective(&self, theta: &DVector<f64>) -> f64 {
        let n = self.len();
        (0..n).map(|i| self.oracle.value(i, theta)).sum::<f64>() + self.reg.value(theta)
    }

    /// The objective divided by `N`; this is what traces report.
    pub fn mean_objective(&self, theta: &DVector<f64>) -> f64 {
        self.objective(theta) / self.len() as f64
    }

    pub fn full_grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut g = theta * self.reg.s0;
        for i in 0..self.len() {
            self.oracle.add_grad(i, theta, 1.0, &mut g);
        }
        g
    }

    pub fn full_hess(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        const CHUNK: usize = 512;
        let d = self.dim();
        let mut h = DMatrix::identity(d, d) * self.reg.s0;
        match &self.oracle {
            LossOracle::Logistic(ds) | LossOracle::LeastSquares(ds) => {
                // Σ w_i x_i x_iᵀ as blocked XᵀWX products.
                let n = ds.len();
                let mut start = 0;
                while start < n {
                    let end = (start + CHUNK).min(n);
                    let mut block = DMatrix::zeros(end - start, d);
                    for (r, i) in (start..end).enumerate() {
                        let w = self.oracle.curvature_weight(i, theta).sqrt();
                        for (k, x) in ds.row(i).iter().enumerate() {
                            block[(r, k)] = w * x;
                        }
                    }
                    h.gemm_tr(1.0, &block, &block, 1.0);
                    start = end;
                }
            }
            LossOracle::Quadratic(_) => {
                for i in 0..self.len() {
                    self.oracle.add_hess(i, theta, 1.0, &mut h);
                }
            }
        }
        h
    }
}

/// Per-example losses `ℓ_i + ℓ₀/N`.
#[derive(Debug, Clone, Copy)]
pub struct Absorbed<'a> {
    problem: &'a Problem,
    per_example: f64,
}

impl ExampleLoss for Absorbed<'_> {
    fn len(&self) -> usize {
        self.problem.len()
    }

    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn value(&self, i: usize, theta: &DVector<f64>) -> f64 {
        self.problem.oracle.value(i, theta) + 0.5 * self.per_example * theta.norm_squared()
    }

    fn add_grad(&self, i: usize, theta: &DVector<f64>, scale: f64, out: &mut DVector<f64>) {
        self.problem.oracle.add_grad(i, theta, scale, out);
        out.axpy(scale * self.per_example, theta, 1.0);
    }

    fn add_hess(&self, i: usize, theta: &DVector<f64>, scale: f64, out: &mut DMatrix<f64>) {
        self.problem.oracle.add_hess(i, theta, scale, out);
        for k in 0..out.nrows() {
            out[(k, k)] += scale * self.per_example;
        }
    }

    fn add_hess_diag(&self, i: usize, theta: &DVector<f64>, scale: f64, out: &mut DVector<f64>) {
        self.problem.oracle.add_hess_diag(i, theta, scale, out);
        out.add_scalar_mut(scale * self.per_example);
    }
}
