//! Independent verification oracles: central finite differences, exact
//! enumeration of expectations over the example index, and a damped-Newton
//! reference solve. Nothing here feeds back into optimizer state.

use std::ops::{AddAssign, DivAssign};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, eigen_floor};
use crate::problems::{Problem, Reference};

/// Relative tolerance for gradient checks against [`fd_grad`].
pub const FD_GRAD_RTOL: f64 = 1e-5;
/// Relative tolerance for Hessian checks against [`fd_hess`].
pub const FD_HESS_RTOL: f64 = 1e-4;
/// Gradient-norm target of [`newton_reference`].
pub const NEWTON_GRAD_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 200;

fn fd_step(theta_j: f64, step: f64) -> f64 {
    step * (1.0 + theta_j.abs())
}

/// Central-difference gradient of `f` with per-coordinate step `step·(1+|θ_j|)`.
pub fn fd_grad<F>(f: F, theta: &DVector<f64>, step: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut x = theta.clone();
    DVector::from_fn(theta.len(), |j, _| {
        let h = fd_step(theta[j], step);
        x[j] = theta[j] + h;
        let fp = f(&x);
        x[j] = theta[j] - h;
        let fm = f(&x);
        x[j] = theta[j];
        (fp - fm) / (2.0 * h)
    })
}

/// Central-difference Jacobian of a gradient map; column `j` differentiates
/// along `e_j`. Not symmetrized.
pub fn fd_hess<G>(g: G, theta: &DVector<f64>, step: f64) -> DMatrix<f64>
where
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let d = theta.len();
    let mut out = DMatrix::zeros(d, d);
    let mut x = theta.clone();
    for j in 0..d {
        let h = fd_step(theta[j], step);
        x[j] = theta[j] + h;
        let gp = g(&x);
        x[j] = theta[j] - h;
        let gm = g(&x);
        x[j] = theta[j];
        out.set_column(j, &((gp - gm) / (2.0 * h)));
    }
    out
}

/// Relative error `‖a − b‖_∞ / max(1, ‖b‖_∞)`.
pub fn rel_err<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (mut num, mut den) = (0.0f64, 1.0f64);
    for (x, y) in a.into_iter().zip(b) {
        num = num.max((x - y).abs());
        den = den.max(y.abs());
    }
    num / den
}

/// Exact average of `direction(i)` over `i = 0..n`, accumulated in index
/// order.
pub fn enumerate_expectation<T, F>(n: usize, direction: F) -> T
where
    F: Fn(usize) -> T,
    T: for<'a> AddAssign<&'a T> + DivAssign<f64>,
{
    assert!(n >= 1, "enumeration over an empty index set");
    let mut acc = direction(0);
    for i in 1..n {
        acc += &direction(i);
    }
    acc /= n as f64;
    acc
}

/// Damped Newton on `Σ ℓ_i + ℓ₀` from `θ = 0` to gradient norm
/// [`NEWTON_GRAD_TOL`].
pub fn newton_reference(problem: &Problem) -> Result<Reference> {
    newton_reference_with(problem, NEWTON_GRAD_TOL, NEWTON_MAX_ITER)
}

pub fn newton_reference_with(problem: &Problem, tol: f64, max_iter: usize) -> Result<Reference> {
    let d = problem.dim();
    let mut theta = DVector::zeros(d);
    let mut f = problem.objective(&theta);
    let mut g = problem.full_grad(&theta);
    let mut gnorm = g.norm();
    let mut iter = 0;
    while gnorm > tol {
        if iter == max_iter {
            return Err(Error::NoConvergence { iterations: iter, grad_norm: gnorm });
        }
        iter += 1;
        let h = problem.full_hess(&theta);
        let chol = match cholesky(&h) {
            Ok(c) => c,
            // Singular only for unregularized degenerate data; nudge it.
            Err(_) => cholesky(&eigen_floor(&h, 1e-12 * (1.0 + h.amax())))?,
        };
        let p = -chol.solve(&g);
        let slope = g.dot(&p);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &theta + &p * t;
            let fc = problem.objective(&cand);
            let gc = problem.full_grad(&cand);
            let gcn = gc.norm();
            if fc <= f + 1e-4 * t * slope || (fc <= f + 1e-12 * f.abs().max(1.0) && gcn < gnorm) {
                accepted = Some((cand, fc, gc, gcn));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc, gc, gcn)) = accepted else {
            return Err(Error::NoConvergence { iterations: iter, grad_norm: gnorm });
        };
        theta = cand;
        f = fc;
        g = gc;
        gnorm = gcn;
    }
    let n = problem.len() as f64;
    Ok(Reference { objective: f, mean_objective: f / n, theta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quadratic, make_synthetic_logreg, ExampleLoss, LossOracle, Regularizer};

    #[test]
    fn fd_grad_of_half_norm_is_identity() {
        let th = DVector::from_vec(vec![0.3, -1.2, 2.5]);
        let g = fd_grad(|x| 0.5 * x.norm_squared(), &th, 1e-5);
        assert!((g - &th).amax() < 1e-8);
    }

    #[test]
    fn fd_grad_of_constant_is_zero() {
        let th = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(fd_grad(|_| 4.2, &th, 1e-5), DVector::zeros(2));
    }

    #[test]
    fn fd_matches_analytic_logistic() {
        let (ds, _) = make_synthetic_logreg(3, 4, 1.0, 2, 1.0).unwrap();
        let l = LossOracle::Logistic(ds);
        let th = DVector::from_vec(vec![0.1, -0.4, 0.2, 0.7]);
        let g = fd_grad(|x| l.value(1, x), &th, 1e-5);
        assert!(rel_err(g.iter(), l.grad(1, &th).iter()) < FD_GRAD_RTOL);
        let h = fd_hess(|x| l.grad(1, x), &th, 1e-5);
        assert!(rel_err(h.iter(), l.hess(1, &th).iter()) < FD_HESS_RTOL);
    }

    #[test]
    fn enumeration_two_example_hand_instance() {
        let dirs = [DVector::from_vec(vec![1.0, 4.0]), DVector::from_vec(vec![3.0, -2.0])];
        let mean = enumerate_expectation(2, |i| dirs[i].clone());
        assert_eq!(mean, DVector::from_vec(vec![2.0, 1.0]));
    }

    #[test]
    fn newton_on_unregularized_quadratic_returns_center() {
        let q = make_quadratic(5, 3, 0).unwrap();
        let c = q.c.clone();
        let p = Problem::new(LossOracle::Quadratic(q), Regularizer::new(0.0).unwrap());
        let r = newton_reference(&p).unwrap();
        assert!((r.theta - c).amax() < 1e-10);
    }

    #[test]
    fn newton_on_regularized_quadratic_matches_closed_form() {
        let q = make_quadratic(6, 4, 1).unwrap();
        let s0 = 0.7;
        // Σ_i ½(θ−c)ᵀA(θ−c)/N = ½(θ−c)ᵀA(θ−c); minimizer (A + s0 I)⁻¹ A c.
        let expected = (&q.a + DMatrix::identity(6, 6) * s0).lu().solve(&(&q.a * &q.c)).unwrap();
        let p = Problem::new(LossOracle::Quadratic(q), Regularizer::new(s0).unwrap());
        let r = newton_reference(&p).unwrap();
        assert!((r.theta - expected).amax() < 1e-10);
    }

    #[test]
    fn newton_handles_separable_data_with_regularizer() {
        let (ds, r) = make_synthetic_logreg(40, 3, 50.0, 5, 0.5).unwrap();
        let p = Problem::new(LossOracle::Logistic(ds), Regularizer::new(0.5).unwrap());
        assert!(p.full_grad(&r.theta).norm() <= NEWTON_GRAD_TOL);
    }
}
