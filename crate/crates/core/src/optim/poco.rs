use nalgebra::{DMatrix, DVector};

use super::{check_finite, noise_for, Cadence, OptimizerConfig, Resolved, Schedule, StepReport, Stepper};
use crate::error::{Error, Result};
use crate::expfam::{
    natgrad_mc, natural_step, DiagonalGaussian, Family, FullGaussian, GaussianPosterior, McSpec, NatGrad,
};
use crate::problems::{ExampleLoss, Problem};
use crate::rng::{IndexSampler, NoiseKey, NoiseRole, NoiseStream};

/// One BLR step `λ ← (1 − η) λ − η Σ_i ∇̃L_i`, given the summed natural
/// gradient (regularizer included).
pub fn blr_step(q: &GaussianPosterior, natgrad_sum: &NatGrad, eta: f64) -> Result<GaussianPosterior> {
    natural_step(q, natgrad_sum, eta, eta)
}

/// Posterior-correction state for any family. `g_out` is the natural
/// gradient summed over all examples at `λ_out`, evaluated with the noise at
/// `out_key`; inner steps reuse that key for the stale per-example terms so
/// both sides of the correction see the same samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PocoState {
    pub q_in: GaussianPosterior,
    pub q_out: GaussianPosterior,
    pub g_out: NatGrad,
    pub out_key: NoiseKey,
    pub spec: McSpec,
}

/// Refresh: `g̃_out ← Σ_i ∇̃L_i(λ_in)`, `λ_out ← λ_in`.
pub fn poco_refresh<L: ExampleLoss + ?Sized>(
    q_in: &GaussianPosterior,
    loss: &L,
    spec: McSpec,
    noise: &NoiseStream,
    step: u64,
) -> Result<PocoState> {
    let all: Vec<usize> = (0..loss.len()).collect();
    let out_key = NoiseKey::shared(step, NoiseRole::Refresh);
    let g_out = natgrad_mc(q_in, loss, &all, spec, noise, out_key)?;
    Ok(PocoState { q_in: q_in.clone(), q_out: q_in.clone(), g_out, out_key, spec })
}

/// Corrected direction `(1/|B|) Σ_{i∈B} [∇̃L_i(λ_in) − ∇̃L_i(λ_out)] + g̃_out / N`.
pub fn poco_direction<L: ExampleLoss + ?Sized>(
    state: &PocoState,
    loss: &L,
    batch: &[usize],
    noise: &NoiseStream,
    in_key: NoiseKey,
) -> Result<NatGrad> {
    let b = batch.len() as f64;
    let mut dir = natgrad_mc(&state.q_in, loss, batch, state.spec, noise, in_key)?;
    let stale = natgrad_mc(&state.q_out, loss, batch, state.spec, noise, state.out_key)?;
    dir -= &stale;
    dir /= b;
    dir.axpy(1.0 / loss.len() as f64, &state.g_out);
    Ok(dir)
}

/// Natural-gradient step on a mini-batch: `λ_in ← (1 − β) λ_in − η N · direction`, with `β`
/// the decay rate (usually equal to `η`).
#[allow(clippy::too_many_arguments)]
pub fn poco_inner_step<L: ExampleLoss + ?Sized>(
    state: &mut PocoState,
    loss: &L,
    batch: &[usize],
    eta: f64,
    decay: f64,
    noise: &NoiseStream,
    step: u64,
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::config("empty mini-batch"));
    }
    let key = NoiseKey::shared(step, NoiseRole::Inner);
    let dir = poco_direction(state, loss, batch, noise, key)?;
    state.q_in = natural_step(&state.q_in, &dir, decay, eta * loss.len() as f64)?;
    Ok(())
}

/// The full-batch variant: every example in the inner step.
pub fn poco_full_batch_step<L: ExampleLoss + ?Sized>(
    state: &mut PocoState,
    loss: &L,
    eta: f64,
    noise: &NoiseStream,
    step: u64,
) -> Result<()> {
    let all: Vec<usize> = (0..loss.len()).collect();
    poco_inner_step(state, loss, &all, eta, eta, noise, step)
}

/// VSGD-PoCo state: isotropic mean, frozen outer sample and gradient sum.
#[derive(Debug, Clone, PartialEq)]
pub struct VsgdPocoState {
    pub m_in: DVector<f64>,
    pub theta_out: DVector<f64>,
    pub g_out: DVector<f64>,
}

fn perturb(m: &DVector<f64>, noise: &NoiseStream, key: NoiseKey) -> DVector<f64> {
    if noise.is_zeroed() {
        m.clone()
    } else {
        m + noise.normal(key, m.len())
    }
}

/// Refresh at `θ_in = m_in + ε`.
pub fn vsgd_poco_refresh<L: ExampleLoss + ?Sized>(
    loss: &L,
    m_in: &DVector<f64>,
    noise: &NoiseStream,
    step: u64,
) -> Result<VsgdPocoState> {
    let theta = perturb(m_in, noise, NoiseKey::shared(step, NoiseRole::Refresh));
    let all: Vec<usize> = (0..loss.len()).collect();
    let g_out = loss.batch_grad_sum(&all, &theta);
    check_finite(&g_out, "full-batch gradient")?;
    Ok(VsgdPocoState { m_in: m_in.clone(), theta_out: theta, g_out })
}

/// Corrected inner step with a fresh `ε`.
pub fn vsgd_poco_inner_step<L: ExampleLoss + ?Sized>(
    state: &mut VsgdPocoState,
    loss: &L,
    batch: &[usize],
    eta: f64,
    noise: &NoiseStream,
    step: u64,
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::config("empty mini-batch"));
    }
    let theta_in = perturb(&state.m_in, noise, NoiseKey::shared(step, NoiseRole::Inner));
    let n = loss.len() as f64;
    let now = loss.batch_grad_mean(batch, &theta_in);
    let stale = loss.batch_grad_mean(batch, &state.theta_out);
    let g_in = now - stale + &state.g_out / n;
    check_finite(&g_in, "corrected gradient")?;
    state.m_in -= &g_in * eta;
    Ok(())
}

pub(crate) fn initial_posterior(
    family: Family,
    init: DVector<f64>,
    cfg: &OptimizerConfig,
    r: &Resolved,
    s0: f64,
) -> Result<GaussianPosterior> {
    let d = init.len();
    Ok(match family {
        Family::Isotropic => GaussianPosterior::isotropic(init),
        Family::Diagonal => {
            GaussianPosterior::Diagonal(DiagonalGaussian::new(init, DVector::from_element(d, cfg.h0), r.delta, r.kappa)?)
        }
        Family::Full => {
            let s = DMatrix::identity(d, d) * (r.n as f64 * cfg.h0 + s0);
            GaussianPosterior::Full(FullGaussian::new(init, s)?)
        }
    })
}

/// Mini-batch BLR: `λ ← (1 − η) λ − η (N/|B|) Σ_{i∈B} ∇̃L_i(λ)`.
pub struct BlrRunner<'a> {
    problem: &'a Problem,
    q: GaussianPosterior,
    mean: DVector<f64>,
    sampler: IndexSampler,
    noise: NoiseStream,
    spec: McSpec,
    eta: f64,
    decay: f64,
    schedule: Schedule,
    batch: usize,
    total: u64,
}

impl<'a> BlrRunner<'a> {
    pub fn new(problem: &'a Problem, cfg: &OptimizerConfig, init: DVector<f64>, total: u64, seed: u64) -> Result<Self> {
        let r = cfg.resolve(problem.len(), problem.reg.s0)?;
        let q = initial_posterior(cfg.family, init, cfg, &r, problem.reg.s0)?;
        Ok(Self {
            problem,
            mean: q.mean().clone(),
            q,
            sampler: IndexSampler::new(seed, problem.len(), cfg.sampling),
            noise: noise_for(cfg, seed),
            spec: McSpec { samples: cfg.mc_samples, per_example: false, curvature: cfg.curvature },
            eta: cfg.eta,
            decay: r.precision_eta,
            schedule: cfg.schedule,
            batch: cfg.batch_size,
            total,
        })
    }
}

impl Stepper for BlrRunner<'_> {
    fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    fn step(&mut self, t: u64) -> Result<StepReport> {
        let loss = self.problem.absorbed();
        let b = self.sampler.next_batch(self.batch);
        let mut g = natgrad_mc(&self.q, &loss, &b, self.spec, &self.noise, NoiseKey::shared(t, NoiseRole::Inner))?;
        g *= loss.len() as f64 / b.len() as f64;
        let eta = self.schedule.rate(self.eta, t, self.total);
        self.q = natural_step(&self.q, &g, self.decay, eta)?;
        self.mean = self.q.mean().clone();
        Ok(StepReport { grad_evals: (b.len() * self.spec.samples) as u64, events: Vec::new() })
    }
}

/// VSGD-PoCo with isotropic noise; SGD-style plain steps before the first
/// refresh.
pub struct VsgdPocoRunner<'a> {
    problem: &'a Problem,
    state: VsgdPocoState,
    refreshed: bool,
    sampler: IndexSampler,
    noise: NoiseStream,
    cadence: Cadence,
    eta: f64,
    schedule: Schedule,
    batch: usize,
    total: u64,
}

impl<'a> VsgdPocoRunner<'a> {
    pub fn new(
        problem: &'a Problem,
        cfg: &OptimizerConfig,
        init: DVector<f64>,
        cadence: Cadence,
        total: u64,
        seed: u64,
    ) -> Result<Self> {
        cfg.resolve(problem.len(), problem.reg.s0)?;
        let d = init.len();
        Ok(Self {
            problem,
            state: VsgdPocoState { m_in: init, theta_out: DVector::zeros(d), g_out: DVector::zeros(d) },
            refreshed: false,
            sampler: IndexSampler::new(seed, problem.len(), cfg.sampling),
            noise: noise_for(cfg, seed),
            cadence,
            eta: cfg.eta,
            schedule: cfg.schedule,
            batch: cfg.batch_size,
            total,
        })
    }

    pub fn state(&self) -> &VsgdPocoState {
        &self.state
    }
}

impl Stepper for VsgdPocoRunner<'_> {
    fn mean(&self) -> &DVector<f64> {
        &self.state.m_in
    }

    fn step(&mut self, t: u64) -> Result<StepReport> {
        let loss = self.problem.absorbed();
        let eta = self.schedule.rate(self.eta, t, self.total);
        let mut report = StepReport::default();
        if self.cadence.refresh_due(t) {
            self.state = vsgd_poco_refresh(&loss, &self.state.m_in, &self.noise, t)?;
            self.refreshed = true;
            report.grad_evals += loss.len() as u64;
            report.events = self.cadence.refresh_events(t);
            if self.cadence.inner == 0 {
                return Ok(report);
            }
        }
        let b = self.sampler.next_batch(self.batch);
        if self.refreshed {
            vsgd_poco_inner_step(&mut self.state, &loss, &b, eta, &self.noise, t)?;
            report.grad_evals += 2 * b.len() as u64;
        } else {
            let theta = perturb(&self.state.m_in, &self.noise, NoiseKey::shared(t, NoiseRole::Inner));
            let g = loss.batch_grad_mean(&b, &theta);
            check_finite(&g, "gradient")?;
            self.state.m_in -= g * eta;
            report.grad_evals += b.len() as u64;
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::NatVec;
    use crate::problems::{LossOracle, QuadraticLoss};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn blr_isotropic_quadratic_closed_form() {
        let c = v(&[1.0, -2.0]);
        let loss = LossOracle::Quadratic(QuadraticLoss::new(DMatrix::identity(2, 2), c.clone(), 1).unwrap());
        let m = v(&[0.5, 0.5]);
        let q = GaussianPosterior::isotropic(m.clone());
        let g = natgrad_mc(&q, &loss, &[0], McSpec::default(), &NoiseStream::zeroed(), NoiseKey::shared(0, NoiseRole::Inner))
            .unwrap();
        let out = blr_step(&q, &g, 0.3).unwrap();
        assert_eq!(out.mean(), &(&m - (&m - &c) * 0.3));
        assert_eq!(blr_step(&q, &g, 0.0).unwrap(), q);
    }

    #[test]
    fn blr_full_precision_update() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let loss = LossOracle::Quadratic(QuadraticLoss::new(a.clone(), v(&[1.0, 0.0]), 1).unwrap());
        let s = DMatrix::identity(2, 2) * 3.0;
        let q = GaussianPosterior::Full(FullGaussian::new(v(&[0.2, 0.1]), s.clone()).unwrap());
        let g = natgrad_mc(&q, &loss, &[0], McSpec::default(), &NoiseStream::zeroed(), NoiseKey::shared(0, NoiseRole::Inner))
            .unwrap();
        let GaussianPosterior::Full(out) = blr_step(&q, &g, 0.25).unwrap() else { panic!() };
        let expect = &s * 0.75 + &a * 0.25;
        assert!((out.precision - expect).amax() < 1e-14);
    }

    #[test]
    fn poco_zero_rate_is_identity() {
        let loss = LossOracle::Quadratic(QuadraticLoss::new(DMatrix::identity(2, 2), v(&[1.0, 1.0]), 3).unwrap());
        let q = GaussianPosterior::isotropic(v(&[0.0, 2.0]));
        let z = NoiseStream::zeroed();
        let mut st = poco_refresh(&q, &loss, McSpec::default(), &z, 0).unwrap();
        poco_inner_step(&mut st, &loss, &[1], 0.0, 0.0, &z, 1).unwrap();
        assert_eq!(st.q_in, q);
        assert!(matches!(st.g_out, NatVec::Isotropic(_)));
    }
}
