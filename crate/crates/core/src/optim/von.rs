use nalgebra::{DMatrix, DVector};

use super::{check_finite, noise_for, Cadence, OptimizerConfig, Schedule, StepReport, Stepper};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, eigen_floor, symmetrize, MAX_FULL_DIM};
use crate::problems::{ExampleLoss, Problem};
use crate::rng::{IndexSampler, NoiseKey, NoiseRole, NoiseStream};

/// Eigenvalue floor applied by the optional PD guard.
pub const PD_FLOOR: f64 = 1e-8;

/// VON-PoCo state. `g_out` and `h_out` are sums over all examples at
/// `θ_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct VonPocoState {
    pub m_in: DVector<f64>,
    pub s_in: DMatrix<f64>,
    pub m_out: DVector<f64>,
    pub theta_out: DVector<f64>,
    pub g_out: DVector<f64>,
    pub h_out: DMatrix<f64>,
}

/// `m + L⁻ᵀ ε` with `S = L Lᵀ`.
fn sample_full(m: &DVector<f64>, s: &DMatrix<f64>, noise: &NoiseStream, key: NoiseKey) -> Result<DVector<f64>> {
    if noise.is_zeroed() {
        return Ok(m.clone());
    }
    let eps = noise.normal(key, m.len());
    let chol = cholesky(s)?;
    let z = chol.l().tr_solve_lower_triangular(&eps).ok_or(Error::NotPositiveDefinite { step: None })?;
    Ok(m + z)
}

fn batch_hess<L: ExampleLoss + ?Sized>(loss: &L, batch: &[usize], theta: &DVector<f64>) -> DMatrix<f64> {
    let d = theta.len();
    let mut h = DMatrix::zeros(d, d);
    for &i in batch {
        loss.add_hess(i, theta, 1.0, &mut h);
    }
    h / batch.len() as f64
}

/// Refresh: anchor sums at `θ_in ~ q_in`, snapshot `m_out`.
pub fn von_poco_refresh<L: ExampleLoss + ?Sized>(
    loss: &L,
    m_in: &DVector<f64>,
    s_in: &DMatrix<f64>,
    noise: &NoiseStream,
    step: u64,
) -> Result<VonPocoState> {
    let d = m_in.len();
    if d > MAX_FULL_DIM {
        return Err(Error::config(format!("full Gaussian limited to d <= {MAX_FULL_DIM}, got {d}")));
    }
    let theta = sample_full(m_in, s_in, noise, NoiseKey::shared(step, NoiseRole::Refresh))?;
    let all: Vec<usize> = (0..loss.len()).collect();
    let g_out = loss.batch_grad_sum(&all, &theta);
    let mut h_out = DMatrix::zeros(d, d);
    for &i in &all {
        loss.add_hess(i, &theta, 1.0, &mut h_out);
    }
    check_finite(&g_out, "full-batch gradient")?;
    Ok(VonPocoState {
        m_in: m_in.clone(),
        s_in: s_in.clone(),
        m_out: m_in.clone(),
        theta_out: theta,
        g_out,
        h_out,
    })
}

/// `(H_out\i, H_in)` for a batch at the given sample points:
/// `H_out\i = H_out/N − ∇²ℓ_B(θ_out)`, `H_in = ∇²ℓ_B(θ_in) + H_out\i`.
pub fn svrh_terms<L: ExampleLoss + ?Sized>(
    loss: &L,
    h_out: &DMatrix<f64>,
    batch: &[usize],
    theta_in: &DVector<f64>,
    theta_out: &DVector<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = loss.len() as f64;
    let h_out_minus = h_out / n - batch_hess(loss, batch, theta_out);
    let h_in = batch_hess(loss, batch, theta_in) + &h_out_minus;
    (h_out_minus, h_in)
}

/// Inner step, strictly in order: `g_in`, `H_out\i`, `H_in`,
/// `S_in ← (1 − β) S_in + β N H_in`, then
/// `m_in ← m_in − η N S_in⁻¹ [g_in + H_out\i (m_in − m_out)]` with the new
/// `S_in`.
#[allow(clippy::too_many_arguments)]
pub fn von_poco_inner_step<L: ExampleLoss + ?Sized>(
    state: &mut VonPocoState,
    loss: &L,
    batch: &[usize],
    eta: f64,
    beta: f64,
    noise: &NoiseStream,
    step: u64,
    pd_guard: bool,
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::config("empty mini-batch"));
    }
    let n = loss.len() as f64;
    let theta_in = sample_full(&state.m_in, &state.s_in, noise, NoiseKey::shared(step, NoiseRole::Inner))
        .map_err(|e| e.at_step(step))?;
    let g_in = loss.batch_grad_mean(batch, &theta_in) - loss.batch_grad_mean(batch, &state.theta_out)
        + &state.g_out / n;
    check_finite(&g_in, "corrected gradient")?;
    let (h_out_minus, h_in) = svrh_terms(loss, &state.h_out, batch, &theta_in, &state.theta_out);
    let mut s = &state.s_in * (1.0 - beta) + h_in * (beta * n);
    symmetrize(&mut s);
    if pd_guard {
        s = eigen_floor(&s, PD_FLOOR);
    }
    let chol = cholesky(&s).map_err(|e| e.at_step(step))?;
    state.s_in = s;
    let r = g_in + h_out_minus * (&state.m_in - &state.m_out);
    let delta = chol.solve(&r) * (eta * n);
    check_finite(&delta, "mean update")?;
    state.m_in -= delta;
    Ok(())
}

/// VON-PoCo run loop. Before the correction starts the inner steps
/// are plain VON steps (no anchor).
pub struct VonPocoRunner<'a> {
    problem: &'a Problem,
    state: VonPocoState,
    refreshed: bool,
    sampler: IndexSampler,
    noise: NoiseStream,
    cadence: Cadence,
    eta: f64,
    beta: f64,
    schedule: Schedule,
    batch: usize,
    pd_guard: bool,
    total: u64,
}

impl<'a> VonPocoRunner<'a> {
    pub fn new(
        problem: &'a Problem,
        cfg: &OptimizerConfig,
        init: DVector<f64>,
        cadence: Cadence,
        total: u64,
        seed: u64,
    ) -> Result<Self> {
        let r = cfg.resolve(problem.len(), problem.reg.s0)?;
        let d = init.len();
        if d > MAX_FULL_DIM {
            return Err(Error::config(format!("full Gaussian limited to d <= {MAX_FULL_DIM}, got {d}")));
        }
        let s_in = DMatrix::identity(d, d) * (r.n as f64 * cfg.h0 + problem.reg.s0);
        Ok(Self {
            problem,
            state: VonPocoState {
                m_in: init.clone(),
                s_in,
                m_out: init.clone(),
                theta_out: init,
                g_out: DVector::zeros(d),
                h_out: DMatrix::zeros(d, d),
            },
            refreshed: false,
            sampler: IndexSampler::new(seed, problem.len(), cfg.sampling),
            noise: noise_for(cfg, seed),
            cadence,
            eta: cfg.eta,
            beta: r.precision_eta,
            schedule: cfg.schedule,
            batch: cfg.batch_size,
            pd_guard: cfg.pd_guard,
            total,
        })
    }

    pub fn state(&self) -> &VonPocoState {
        &self.state
    }
}

impl Stepper for VonPocoRunner<'_> {
    fn mean(&self) -> &DVector<f64> {
        &self.state.m_in
    }

    fn step(&mut self, t: u64) -> Result<StepReport> {
        let loss = self.problem.absorbed();
        let eta = self.schedule.rate(self.eta, t, self.total);
        let mut report = StepReport::default();
        if self.cadence.refresh_due(t) {
            self.state = von_poco_refresh(&loss, &self.state.m_in, &self.state.s_in, &self.noise, t)?;
            self.refreshed = true;
            report.grad_evals += loss.len() as u64;
            report.events = self.cadence.refresh_events(t);
            if self.cadence.inner == 0 {
                return Ok(report);
            }
        }
        let b = self.sampler.next_batch(self.batch);
        if self.refreshed {
            von_poco_inner_step(&mut self.state, &loss, &b, eta, self.beta, &self.noise, t, self.pd_guard)?;
            report.grad_evals += 2 * b.len() as u64;
        } else {
            // Uncorrected VON: the same update with an empty anchor, i.e.
            // g = ∇ℓ_B(θ), H = ∇²ℓ_B(θ).
            let n = loss.len() as f64;
            let st = &mut self.state;
            let theta = sample_full(&st.m_in, &st.s_in, &self.noise, NoiseKey::shared(t, NoiseRole::Inner))?;
            let g = loss.batch_grad_mean(&b, &theta);
            check_finite(&g, "gradient")?;
            let mut s = &st.s_in * (1.0 - self.beta) + batch_hess(&loss, &b, &theta) * (self.beta * n);
            symmetrize(&mut s);
            if self.pd_guard {
                s = eigen_floor(&s, PD_FLOOR);
            }
            let chol = cholesky(&s)?;
            st.s_in = s;
            st.m_in -= chol.solve(&g) * (eta * n);
            report.grad_evals += b.len() as u64;
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quadratic, LossOracle, Regularizer};

    #[test]
    fn extra_term_vanishes_at_snapshot() {
        let q = make_quadratic(3, 4, 2).unwrap();
        let p = Problem::new(LossOracle::Quadratic(q), Regularizer::new(1.0).unwrap());
        let loss = p.absorbed();
        let m = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let st = von_poco_refresh(&loss, &m, &DMatrix::identity(3, 3), &NoiseStream::zeroed(), 0).unwrap();
        let (hm, _) = svrh_terms(&loss, &st.h_out, &[1], &st.m_in, &st.theta_out);
        assert_eq!(hm * (&st.m_in - &st.m_out), DVector::zeros(3));
    }

    #[test]
    fn losing_pd_reports_step() {
        let q = make_quadratic(2, 2, 0).unwrap();
        let p = Problem::new(LossOracle::Quadratic(q), Regularizer::new(0.0).unwrap());
        let loss = p.absorbed();
        let mut st = von_poco_refresh(&loss, &DVector::zeros(2), &DMatrix::identity(2, 2), &NoiseStream::zeroed(), 0).unwrap();
        // A negated anchor makes the corrected precision negative definite.
        st.h_out = -st.h_out.clone() * 10.0;
        let err = von_poco_inner_step(&mut st, &loss, &[0], 0.1, 1.0, &NoiseStream::zeroed(), 7, false).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { step: Some(7) }));
        let mut st2 = st.clone();
        st2.s_in = DMatrix::identity(2, 2);
        von_poco_inner_step(&mut st2, &loss, &[0], 0.1, 1.0, &NoiseStream::zeroed(), 7, true).unwrap();
    }
}
