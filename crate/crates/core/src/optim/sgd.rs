use nalgebra::DVector;

use super::{check_finite, Cadence, OptimizerConfig, Schedule, StepReport, Stepper};
use crate::error::{Error, Result};
use crate::problems::{ExampleLoss, Problem};
use crate::rng::IndexSampler;

/// `θ − η · grad`.
pub fn sgd_step(theta: &DVector<f64>, grad: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
    check_finite(grad, "gradient")?;
    Ok(theta - grad * eta)
}

/// `∇ℓ_B(θ_in) − α ∇ℓ_B(θ_out) + α ḡ_out`: the α-weighted correction for the
/// isotropic family, with `ḡ_out` the per-example mean anchor.
pub fn alpha_weighted_correction(
    grad_in: &DVector<f64>,
    grad_out: &DVector<f64>,
    g_out_mean: &DVector<f64>,
    alpha: f64,
) -> DVector<f64> {
    grad_in - grad_out * alpha + g_out_mean * alpha
}

/// SVRG state. `g_out` is the full-batch gradient sum at `θ_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrgState {
    pub theta_in: DVector<f64>,
    pub theta_out: DVector<f64>,
    pub g_out: DVector<f64>,
    pub t: u64,
}

/// `(Σ_i ∇ℓ_i(θ_in), θ_in)`, summed in index order.
pub fn svrg_refresh<L: ExampleLoss + ?Sized>(loss: &L, theta_in: &DVector<f64>) -> Result<SvrgState> {
    let all: Vec<usize> = (0..loss.len()).collect();
    let g_out = loss.batch_grad_sum(&all, theta_in);
    check_finite(&g_out, "full-batch gradient")?;
    Ok(SvrgState { theta_in: theta_in.clone(), theta_out: theta_in.clone(), g_out, t: 0 })
}

/// One inner step on a mini-batch of indices. With `α = 1` this is
/// `g_in = ∇ℓ_B(θ_in) − ∇ℓ_B(θ_out) + g_out/N`, `θ_in ← θ_in − η g_in`.
/// Returns `g_in`.
pub fn svrg_inner_step<L: ExampleLoss + ?Sized>(
    state: &mut SvrgState,
    loss: &L,
    batch: &[usize],
    eta: f64,
    alpha: f64,
) -> Result<DVector<f64>> {
    if batch.is_empty() {
        return Err(Error::config("empty mini-batch"));
    }
    let n = loss.len() as f64;
    let now = loss.batch_grad_mean(batch, &state.theta_in);
    let stale = loss.batch_grad_mean(batch, &state.theta_out);
    let g_in = if alpha == 1.0 {
        now - stale + &state.g_out / n
    } else {
        alpha_weighted_correction(&now, &stale, &(&state.g_out / n), alpha)
    };
    check_finite(&g_in, "corrected gradient")?;
    state.theta_in -= &g_in * eta;
    state.t += 1;
    Ok(g_in)
}

/// Mini-batch SGD on `ℓ_i + ℓ₀/N`.
pub struct SgdRunner<'a> {
    problem: &'a Problem,
    theta: DVector<f64>,
    sampler: IndexSampler,
    eta: f64,
    schedule: Schedule,
    batch: usize,
    total: u64,
}

impl<'a> SgdRunner<'a> {
    pub fn new(problem: &'a Problem, cfg: &OptimizerConfig, init: DVector<f64>, total: u64, seed: u64) -> Result<Self> {
        cfg.resolve(problem.len(), problem.reg.s0)?;
        Ok(Self {
            problem,
            theta: init,
            sampler: IndexSampler::new(seed, problem.len(), cfg.sampling),
            eta: cfg.eta,
            schedule: cfg.schedule,
            batch: cfg.batch_size,
            total,
        })
    }
}

impl Stepper for SgdRunner<'_> {
    fn mean(&self) -> &DVector<f64> {
        &self.theta
    }

    fn step(&mut self, t: u64) -> Result<StepReport> {
        let b = self.sampler.next_batch(self.batch);
        let g = self.problem.absorbed().batch_grad_mean(&b, &self.theta);
        self.theta = sgd_step(&self.theta, &g, self.schedule.rate(self.eta, t, self.total))?;
        Ok(StepReport { grad_evals: b.len() as u64, events: Vec::new() })
    }
}

/// SVRG (or α-SVRG): SGD until the correction starts, then full-batch
/// refreshes every `m` steps.
pub struct SvrgRunner<'a> {
    problem: &'a Problem,
    state: SvrgState,
    refreshed: bool,
    sampler: IndexSampler,
    cadence: Cadence,
    alpha: f64,
    eta: f64,
    schedule: Schedule,
    batch: usize,
    total: u64,
}

impl<'a> SvrgRunner<'a> {
    pub fn new(
        problem: &'a Problem,
        cfg: &OptimizerConfig,
        init: DVector<f64>,
        cadence: Cadence,
        alpha: f64,
        total: u64,
        seed: u64,
    ) -> Result<Self> {
        cfg.resolve(problem.len(), problem.reg.s0)?;
        let d = init.len();
        Ok(Self {
            problem,
            state: SvrgState { theta_in: init.clone(), theta_out: init, g_out: DVector::zeros(d), t: 0 },
            refreshed: false,
            sampler: IndexSampler::new(seed, problem.len(), cfg.sampling),
            cadence,
            alpha,
            eta: cfg.eta,
            schedule: cfg.schedule,
            batch: cfg.batch_size,
            total,
        })
    }

    pub fn state(&self) -> &SvrgState {
        &self.state
    }
}

impl Stepper for SvrgRunner<'_> {
    fn mean(&self) -> &DVector<f64> {
        &self.state.theta_in
    }

    fn step(&mut self, t: u64) -> Result<StepReport> {
        let loss = self.problem.absorbed();
        let eta = self.schedule.rate(self.eta, t, self.total);
        let mut report = StepReport::default();
        if self.cadence.refresh_due(t) {
            self.state = svrg_refresh(&loss, &self.state.theta_in)?;
            self.refreshed = true;
            report.grad_evals += loss.len() as u64;
            report.events = self.cadence.refresh_events(t);
            if self.cadence.inner == 0 {
                return Ok(report);
            }
        }
        let b = self.sampler.next_batch(self.batch);
        if self.refreshed {
            svrg_inner_step(&mut self.state, &loss, &b, eta, self.alpha)?;
            report.grad_evals += 2 * b.len() as u64;
        } else {
            let g = loss.batch_grad_mean(&b, &self.state.theta_in);
            self.state.theta_in = sgd_step(&self.state.theta_in, &g, eta)?;
            report.grad_evals += b.len() as u64;
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quadratic, LossOracle, QuadraticLoss, Regularizer};
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn sgd_examples() {
        assert_eq!(sgd_step(&v(&[1.0, 1.0]), &v(&[1.0, 1.0]), 0.5).unwrap(), v(&[0.5, 0.5]));
        assert_eq!(sgd_step(&v(&[1.0, 2.0]), &v(&[0.0, 0.0]), 0.5).unwrap(), v(&[1.0, 2.0]));
        assert!(sgd_step(&v(&[1.0]), &v(&[f64::NAN]), 0.5).is_err());
        // A = I, c = 0, one example: θ' = (1 − η) θ = 0 at η = 1.
        let q = LossOracle::Quadratic(QuadraticLoss::new(DMatrix::identity(2, 2), DVector::zeros(2), 1).unwrap());
        let th = v(&[3.0, -4.0]);
        assert_eq!(sgd_step(&th, &q.grad(0, &th), 1.0).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn correction_cancels_at_refresh_point() {
        let q = make_quadratic(3, 4, 0).unwrap();
        let p = Problem::new(LossOracle::Quadratic(q), Regularizer::new(0.5).unwrap());
        let loss = p.absorbed();
        let th = v(&[0.1, 0.2, -0.3]);
        let mut s = svrg_refresh(&loss, &th).unwrap();
        let g = svrg_inner_step(&mut s, &loss, &[2], 0.1, 1.0).unwrap();
        assert!((g - p.full_grad(&th) / 4.0).amax() < 1e-15);
    }

    #[test]
    fn single_example_svrg_is_gradient_descent() {
        let q = make_quadratic(2, 1, 3).unwrap();
        let p = Problem::new(LossOracle::Quadratic(q), Regularizer::new(0.0).unwrap());
        let loss = p.absorbed();
        let mut s = svrg_refresh(&loss, &v(&[1.0, -1.0])).unwrap();
        for _ in 0..3 {
            let expect = &s.theta_in - p.full_grad(&s.theta_in) * 0.2;
            svrg_inner_step(&mut s, &loss, &[0], 0.2, 1.0).unwrap();
            assert!((&s.theta_in - expect).amax() < 1e-15);
        }
    }

    #[test]
    fn alpha_limits() {
        let a = v(&[1.0, 2.0]);
        let b = v(&[0.5, -1.0]);
        let g = v(&[3.0, 3.0]);
        assert_eq!(alpha_weighted_correction(&a, &b, &g, 0.0), a);
        assert_eq!(alpha_weighted_correction(&a, &b, &g, 1.0), &a - &b + &g);
        // 0.5: (1 − 0.25 + 1.5, 2 + 0.5 + 1.5).
        assert_eq!(alpha_weighted_correction(&a, &b, &g, 0.5), v(&[2.25, 4.0]));
    }
}
