use nalgebra::DVector;

use super::{check_finite, noise_for, Cadence, OptimizerConfig, Schedule, StepReport, Stepper};
use crate::error::{Error, Result};
use crate::expfam::{CurvatureEstimator, DiagonalGaussian, GaussianPosterior};
use crate::outer::{refresh_mega, OuterCurvature, OuterScale, OuterState, RefreshSpec};
use crate::problems::{ExampleLoss, Problem};
use crate::rng::{IndexSampler, MegaBatchSampler, NoiseKey, NoiseRole, NoiseStream};
use crate::trace::Event;

/// Lower bound enforced on `h + δ`.
pub const CLAMP_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvonParams {
    pub beta1: f64,
    pub beta2: f64,
    pub delta: f64,
    pub kappa: f64,
    pub xi: f64,
    pub curvature: CurvatureEstimator,
}

impl IvonParams {
    pub fn from_config(cfg: &OptimizerConfig, n: usize, s0: f64) -> Result<Self> {
        let r = cfg.resolve(n, s0)?;
        Ok(Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            delta: r.delta,
            kappa: r.kappa,
            xi: cfg.xi,
            curvature: cfg.curvature,
        })
    }
}

/// IVON state: mean, curvature `h`, gradient momentum `g` and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct IvonState {
    pub m: DVector<f64>,
    pub h: DVector<f64>,
    pub g: DVector<f64>,
    pub t: u64,
}

impl IvonState {
    pub fn new(m: DVector<f64>, h0: f64) -> Self {
        let d = m.len();
        Self { m, h: DVector::from_element(d, h0), g: DVector::zeros(d), t: 0 }
    }

    /// `σ = 1 / sqrt(κ (h + δ))`.
    pub fn sigma(&self, hp: &IvonParams) -> DVector<f64> {
        self.h.map(|h| 1.0 / (hp.kappa * (h + hp.delta)).sqrt())
    }

    pub fn posterior(&self, hp: &IvonParams) -> GaussianPosterior {
        GaussianPosterior::Diagonal(DiagonalGaussian {
            mean: self.m.clone(),
            hess: self.h.clone(),
            delta: hp.delta,
            kappa: hp.kappa,
        })
    }
}

/// What one update did.
#[derive(Debug, Clone, PartialEq)]
pub struct IvonStepInfo {
    /// Coordinates where `h + δ` was clamped to [`CLAMP_FLOOR`].
    pub clamped: usize,
    /// Debiased momentum `g / (1 − β₁ᵗ)` before preconditioning.
    pub debiased: DVector<f64>,
    /// The applied mean step `η_t · clip(ḡ, ξ)`.
    pub applied: DVector<f64>,
}

/// Moment, curvature and mean updates given the (possibly corrected) estimates `ĝ`, `ĥ` and
/// the optional extra numerator term `w α (h_out − ĥ_out)(m_in − m_out)`.
pub fn ivon_update(
    st: &mut IvonState,
    hp: &IvonParams,
    g_hat: &DVector<f64>,
    h_hat: &DVector<f64>,
    extra: Option<&DVector<f64>>,
    eta_t: f64,
) -> Result<IvonStepInfo> {
    check_finite(g_hat, "gradient estimate")?;
    check_finite(h_hat, "curvature estimate")?;
    st.t += 1;
    let (b1, b2, delta) = (hp.beta1, hp.beta2, hp.delta);
    st.g = &st.g * b1 + g_hat * (1.0 - b1);
    let mut clamped = 0;
    for j in 0..st.h.len() {
        let h = st.h[j];
        let r = h - h_hat[j];
        let mut h_new = b2 * h + (1.0 - b2) * h_hat[j] + 0.5 * (1.0 - b2) * (1.0 - b2) * r * r / (h + delta);
        if !(h_new + delta > CLAMP_FLOOR) {
            h_new = CLAMP_FLOOR - delta;
            clamped += 1;
        }
        st.h[j] = h_new;
    }
    let debiased = &st.g / (1.0 - b1.powi(st.t.min(i32::MAX as u64) as i32));
    let mut num = &debiased + &st.m * delta;
    if let Some(e) = extra {
        num += e;
    }
    let applied = DVector::from_fn(st.m.len(), |j, _| eta_t * (num[j] / (st.h[j] + delta)).clamp(-hp.xi, hp.xi));
    check_finite(&applied, "mean step")?;
    st.m -= &applied;
    Ok(IvonStepInfo { clamped, debiased, applied })
}

fn draw(m: &DVector<f64>, sigma: &DVector<f64>, eps: Option<&DVector<f64>>) -> DVector<f64> {
    match eps {
        None => m.clone(),
        Some(e) => m + sigma.component_mul(e),
    }
}

/// `ĝ = mean_B ∇ℓ(θ)` and `ĥ = ĝ ⊙ (θ − m) / σ²` (or the exact diagonal).
fn estimates<L: ExampleLoss + ?Sized>(
    loss: &L,
    batch: &[usize],
    theta: &DVector<f64>,
    m: &DVector<f64>,
    sigma: &DVector<f64>,
    curvature: CurvatureEstimator,
    zero_noise: bool,
) -> (DVector<f64>, DVector<f64>) {
    let g = loss.batch_grad_mean(batch, theta);
    let h = if curvature == CurvatureEstimator::ExactDiag || zero_noise {
        let mut h = DVector::zeros(theta.len());
        for &i in batch {
            loss.add_hess_diag(i, theta, 1.0, &mut h);
        }
        h / batch.len() as f64
    } else {
        DVector::from_fn(theta.len(), |j, _| g[j] * (theta[j] - m[j]) / (sigma[j] * sigma[j]))
    };
    (g, h)
}

/// One plain IVON step on a mini-batch (`α = 0`).
pub fn ivon_step<L: ExampleLoss + ?Sized>(
    st: &mut IvonState,
    hp: &IvonParams,
    loss: &L,
    batch: &[usize],
    noise: &NoiseStream,
    step: u64,
    eta_t: f64,
) -> Result<IvonStepInfo> {
    if batch.is_empty() {
        return Err(Error::config("empty mini-batch"));
    }
    let sigma = st.sigma(hp);
    let eps = (!noise.is_zeroed()).then(|| noise.normal(NoiseKey::shared(step, NoiseRole::Inner), st.m.len()));
    let theta = draw(&st.m, &sigma, eps.as_ref());
    let (g_hat, h_hat) = estimates(loss, batch, &theta, &st.m, &sigma, hp.curvature, noise.is_zeroed());
    ivon_update(st, hp, &g_hat, &h_hat, None, eta_t)
}

/// Posterior-correction layer over IVON.
#[derive(Debug, Clone, PartialEq)]
pub struct IvonPocoMo {
    pub alpha: f64,
    pub extra_term_weight: f64,
    pub shared_outer_sample: bool,
    pub outer: Option<OuterState>,
}

impl IvonPocoMo {
    /// Lines 3–5: mega-batch estimates at `θ_in ~ q_in`, moving averages,
    /// snapshot of `m_out`, `σ_out`.
    #[allow(clippy::too_many_arguments)]
    pub fn refresh<L: ExampleLoss + ?Sized>(
        &mut self,
        st: &IvonState,
        hp: &IvonParams,
        loss: &L,
        mega: usize,
        rho: (f64, f64),
        sampler: &mut MegaBatchSampler,
        samples: usize,
        noise: &NoiseStream,
        step: u64,
    ) -> Result<()> {
        let q = st.posterior(hp);
        let spec = RefreshSpec { estimator: hp.curvature, samples };
        let key = NoiseKey::shared(step, NoiseRole::Refresh);
        self.outer = Some(refresh_mega(loss, &q, mega, self.outer.as_ref(), rho, sampler, spec, noise, key)?);
        Ok(())
    }

    /// Lines 7–17: corrected inner step. Needs a prior refresh.
    #[allow(clippy::too_many_arguments)]
    pub fn step<L: ExampleLoss + ?Sized>(
        &self,
        st: &mut IvonState,
        hp: &IvonParams,
        loss: &L,
        batch: &[usize],
        noise: &NoiseStream,
        step: u64,
        eta_t: f64,
    ) -> Result<IvonStepInfo> {
        let Some(out) = &self.outer else {
            return Err(Error::config("corrected IVON step before the first refresh"));
        };
        let (OuterCurvature::Diag(h_out), OuterScale::Sigma(sigma_out)) = (&out.curvature, &out.scale_out) else {
            return Err(Error::config("IVON correction needs a diagonal outer state"));
        };
        if batch.is_empty() {
            return Err(Error::config("empty mini-batch"));
        }
        let d = st.m.len();
        let zero = noise.is_zeroed();
        let sigma = st.sigma(hp);
        let eps_in = (!zero).then(|| noise.normal(NoiseKey::shared(step, NoiseRole::Inner), d));
        let eps_out = if self.shared_outer_sample || zero {
            eps_in.clone()
        } else {
            Some(noise.normal(NoiseKey::shared(step, NoiseRole::Outer), d))
        };
        let theta_in = draw(&st.m, &sigma, eps_in.as_ref());
        let theta_out = draw(&out.m_out, sigma_out, eps_out.as_ref());
        let (g_in, h_in) = estimates(loss, batch, &theta_in, &st.m, &sigma, hp.curvature, zero);
        let (g_o, h_o) = estimates(loss, batch, &theta_out, &out.m_out, sigma_out, hp.curvature, zero);
        let a = self.alpha;
        let g_hat = &g_in - (&g_o - &out.g_out) * a;
        let h_hat = &h_in - (&h_o - h_out) * a;
        let extra = (h_out - &h_o).component_mul(&(&st.m - &out.m_out)) * (self.extra_term_weight * a);
        ivon_update(st, hp, &g_hat, &h_hat, Some(&extra), eta_t)
    }
}

/// IVON, IVON-PoCo and IVON-PoCoMo run loop on the raw losses with explicit
/// weight decay `δ`.
pub struct IvonRunner<'a> {
    problem: &'a Problem,
    state: IvonState,
    hp: IvonParams,
    poco: Option<(IvonPocoMo, Cadence)>,
    sampler: IndexSampler,
    mega_sampler: MegaBatchSampler,
    noise: NoiseStream,
    eta: f64,
    schedule: Schedule,
    batch: usize,
    mega: usize,
    rho: (f64, f64),
    samples: usize,
    total: u64,
    last: Option<IvonStepInfo>,
}

impl<'a> IvonRunner<'a> {
    fn base(problem: &'a Problem, cfg: &OptimizerConfig, init: DVector<f64>, total: u64, seed: u64) -> Result<Self> {
        let r = cfg.resolve(problem.len(), problem.reg.s0)?;
        let hp = IvonParams::from_config(cfg, problem.len(), problem.reg.s0)?;
        Ok(Self {
            problem,
            state: IvonState::new(init, cfg.h0),
            hp,
            poco: None,
            sampler: IndexSampler::new(seed, problem.len(), cfg.sampling),
            mega_sampler: MegaBatchSampler::new(seed, problem.len()),
            noise: noise_for(cfg, seed),
            eta: cfg.eta,
            schedule: cfg.schedule,
            batch: cfg.batch_size,
            mega: r.mega,
            rho: (cfg.rho1, cfg.rho2),
            samples: cfg.mc_samples,
            total,
            last: None,
        })
    }

    pub fn plain(problem: &'a Problem, cfg: &OptimizerConfig, init: DVector<f64>, total: u64, seed: u64) -> Result<Self> {
        Self::base(problem, cfg, init, total, seed)
    }

    pub fn corrected(
        problem: &'a Problem,
        cfg: &OptimizerConfig,
        init: DVector<f64>,
        cadence: Cadence,
        total: u64,
        seed: u64,
    ) -> Result<Self> {
        let mut r = Self::base(problem, cfg, init, total, seed)?;
        let layer = IvonPocoMo {
            alpha: cfg.alpha,
            extra_term_weight: cfg.extra_term_weight,
            shared_outer_sample: cfg.shared_outer_sample,
            outer: None,
        };
        r.poco = Some((layer, cadence));
        Ok(r)
    }

    pub fn state(&self) -> &IvonState {
        &self.state
    }

    pub fn params(&self) -> &IvonParams {
        &self.hp
    }

    pub fn last_info(&self) -> Option<&IvonStepInfo> {
        self.last.as_ref()
    }

    /// Rate applied at step `t`.
    pub fn rate(&self, t: u64) -> f64 {
        self.schedule.rate(self.eta, t, self.total)
    }
}

impl Stepper for IvonRunner<'_> {
    fn mean(&self) -> &DVector<f64> {
        &self.state.m
    }

    fn step(&mut self, t: u64) -> Result<StepReport> {
        let loss = &self.problem.oracle;
        let eta = self.rate(t);
        let mut report = StepReport::default();
        let active = match &self.poco {
            Some((layer, cadence)) => layer.alpha > 0.0 && cadence.active(t),
            None => false,
        };
        let info = if active {
            let (layer, cadence) = self.poco.as_mut().expect("checked above");
            if cadence.refresh_due(t) {
                layer.refresh(
                    &self.state,
                    &self.hp,
                    loss,
                    self.mega,
                    self.rho,
                    &mut self.mega_sampler,
                    self.samples,
                    &self.noise,
                    t,
                )?;
                report.grad_evals += (self.mega * self.samples) as u64;
                report.events = cadence.refresh_events(t);
                if cadence.inner == 0 {
                    return Ok(report);
                }
            }
            let b = self.sampler.next_batch(self.batch);
            report.grad_evals += 2 * b.len() as u64;
            layer.step(&mut self.state, &self.hp, loss, &b, &self.noise, t, eta)?
        } else {
            let b = self.sampler.next_batch(self.batch);
            report.grad_evals += b.len() as u64;
            ivon_step(&mut self.state, &self.hp, loss, &b, &self.noise, t, eta)?
        };
        if info.clamped > 0 {
            log::warn!("step {t}: clamped h + delta on {} coordinates", info.clamped);
            report.events.push(Event::Clamp);
        }
        self.last = Some(info);
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp() -> IvonParams {
        IvonParams { beta1: 0.9, beta2: 0.99, delta: 0.1, kappa: 10.0, xi: 1e3, curvature: CurvatureEstimator::Reparam }
    }

    #[test]
    fn curvature_fixed_point() {
        let mut st = IvonState::new(DVector::from_vec(vec![1.0, 2.0]), 0.5);
        let h_hat = st.h.clone();
        ivon_update(&mut st, &hp(), &DVector::zeros(2), &h_hat, None, 0.1).unwrap();
        assert_eq!(st.h, h_hat);
    }

    #[test]
    fn first_step_debias_recovers_estimate() {
        let mut st = IvonState::new(DVector::zeros(3), 1.0);
        let g_hat = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        let info = ivon_update(&mut st, &hp(), &g_hat, &DVector::from_element(3, 1.0), None, 0.1).unwrap();
        assert!((info.debiased - g_hat).amax() < 1e-15);
    }

    #[test]
    fn clip_bounds_applied_step() {
        let mut p = hp();
        p.xi = 0.01;
        let mut st = IvonState::new(DVector::zeros(2), 0.01);
        let info = ivon_update(&mut st, &p, &DVector::from_vec(vec![100.0, -100.0]), &DVector::zeros(2), None, 0.5).unwrap();
        assert!(info.applied.iter().all(|a| a.abs() <= 0.5 * 0.01));
    }

    #[test]
    fn clamp_counts_coordinates() {
        let mut st = IvonState::new(DVector::zeros(2), 1.0);
        let mut p = hp();
        p.beta2 = 0.0;
        // β₂ = 0: h' = ĥ + ½ (h − ĥ)² / (h + δ); ĥ very negative stays negative.
        let info = ivon_update(&mut st, &p, &DVector::zeros(2), &DVector::from_vec(vec![-1e6, 1.0]), None, 0.1).unwrap();
        assert_eq!(info.clamped, 0, "the positivity term keeps h + δ > 0 here");
        assert!(st.h[0] + p.delta > 0.0);
    }
}
