//! Property suite run by `pocoopt verify` and the acceptance tests.
//!
//! Every check is a plain function returning a [`CheckOutcome`]; none of
//! them touches the filesystem.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ProblemSpec;
use super::suites::{run_configs, suite_configs};
use crate::error::Result;
use crate::expfam::{
    expected_derivs, natgrad_mc, natural_to_moment, Curvature, CurvatureEstimator, DiagonalGaussian, Family,
    FullGaussian, GaussianPosterior, McSpec,
};
use crate::optim::{
    blr_step, build, drive, ivon_step, poco_direction, poco_full_batch_step, svrg_refresh, svrh_terms,
    von_poco_inner_step, von_poco_refresh, Cadence, IvonParams, IvonPocoMo, IvonRunner, IvonState, OptimizerConfig,
    OptimizerKind, PocoState, Stepper, SvrgRunner, VonPocoRunner, VsgdPocoRunner,
};
use crate::oracle::{enumerate_expectation, fd_grad, fd_hess, newton_reference, rel_err, FD_GRAD_RTOL, FD_HESS_RTOL};
use crate::outer::{refresh_full, refresh_mega, RefreshSpec};
use crate::problems::{
    make_quadratic, make_synthetic_linreg, make_synthetic_logreg, Dataset, ExampleLoss, LabelKind, LossOracle,
    Problem, QuadraticLoss, Regularizer,
};
use crate::rng::{IndexSampler, MegaBatchSampler, NoiseKey, NoiseRole, NoiseStream, SamplingMode};
use crate::trace::{Event, RecordOptions, Trace};

/// Absolute tolerance of the exact identities.
pub const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name, passed, detail: detail.into() }
    }

    fn from_result(name: &'static str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((p, d)) => Self::new(name, p, d),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rvec(r: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| scale * (2.0 * r.random::<f64>() - 1.0))
}

fn rspd(r: &mut ChaCha8Rng, d: usize, shift: f64) -> DMatrix<f64> {
    let q = DMatrix::from_fn(d, d, |_, _| 2.0 * r.random::<f64>() - 1.0);
    &q * q.transpose() / d as f64 + DMatrix::identity(d, d) * shift
}

/// A random posterior of `family` in dimension `d`. Precisions are scaled
/// by `n` so samples stay near the mean.
pub fn random_posterior(r: &mut ChaCha8Rng, family: Family, d: usize, n: usize) -> GaussianPosterior {
    let mean = rvec(r, d, 1.0);
    match family {
        Family::Isotropic => GaussianPosterior::isotropic(mean),
        Family::Diagonal => {
            let hess = DVector::from_fn(d, |_, _| 0.1 + r.random::<f64>());
            GaussianPosterior::Diagonal(
                DiagonalGaussian::new(mean, hess, 0.01, n as f64).expect("positive by construction"),
            )
        }
        Family::Full => {
            let s = rspd(r, d, 0.5) * n as f64;
            GaussianPosterior::Full(FullGaussian::new(mean, s).expect("SPD by construction"))
        }
    }
}

const FAMILIES: [Family; 3] = [Family::Isotropic, Family::Diagonal, Family::Full];

fn small_logistic(n: usize, d: usize, seed: u64, s0: f64) -> Result<Problem> {
    let (ds, _) = make_synthetic_logreg(n, d, 2.0, seed, s0)?;
    Ok(Problem::new(LossOracle::Logistic(ds), Regularizer::new(s0)?))
}

/// Finite-difference check of per-example gradients and Hessians, `probes`
/// random points per oracle kind.
pub fn fd_suite(probes: usize) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut r = rng(11);
        let (logi, _) = make_synthetic_logreg(30, 6, 1.0, 1, 1.0)?;
        let oracles = [
            LossOracle::Logistic(logi),
            LossOracle::LeastSquares(make_synthetic_linreg(30, 6, 0.5, 2)?),
            LossOracle::Quadratic(make_quadratic(6, 30, 3)?),
        ];
        let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
        for o in &oracles {
            for _ in 0..probes {
                let i = r.random_range(0..o.len());
                let th = rvec(&mut r, o.dim(), 2.0);
                let g = o.grad(i, &th);
                let fg = fd_grad(|x| o.value(i, x), &th, 1e-5);
                worst_g = worst_g.max(rel_err(g.iter(), fg.iter()));
                let h = o.hess(i, &th);
                let fh = fd_hess(|x| o.grad(i, x), &th, 1e-5);
                worst_h = worst_h.max(rel_err(h.iter(), fh.iter()));
                let hd = o.hess_diag(i, &th);
                worst_h = worst_h.max(rel_err(hd.iter(), h.diagonal().iter()));
            }
        }
        Ok((
            worst_g <= FD_GRAD_RTOL && worst_h <= FD_HESS_RTOL,
            format!("worst rel err grad {worst_g:.2e} (tol {FD_GRAD_RTOL:.0e}), hess {worst_h:.2e} (tol {FD_HESS_RTOL:.0e})"),
        ))
    };
    CheckOutcome::from_result("fd-gradients-hessians", run())
}

/// Moment → natural → moment on 100 random instances per family.
pub fn round_trip() -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut r = rng(12);
        let mut worst = 0.0f64;
        for fam in FAMILIES {
            for _ in 0..100 {
                let d = r.random_range(1..8);
                let q = random_posterior(&mut r, fam, d, 1);
                let lam = q.to_natural();
                let back = q.with_natural(&lam)?;
                worst = worst.max((back.mean() - q.mean()).amax());
                worst = worst.max(back.to_natural().max_abs_diff(&lam));
                let fresh = natural_to_moment(&lam)?;
                worst = worst.max(fresh.to_natural().max_abs_diff(&lam));
            }
        }
        Ok((worst <= EXACT_TOL, format!("max abs diff {worst:.2e}")))
    };
    CheckOutcome::from_result("natural-moment-round-trip", run())
}

/// Reparametrization curvature on `½ θᵀ diag(a) θ` with `K = 10⁵` samples
/// lies within 5 standard errors of `a`.
pub fn diag_reparam_curvature() -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let a = DVector::from_vec(vec![0.5, 1.0, 2.0, 4.0]);
        let loss = LossOracle::Quadratic(QuadraticLoss::new(DMatrix::from_diagonal(&a), DVector::zeros(4), 1)?);
        let mean = DVector::from_vec(vec![0.3, -0.2, 0.1, 0.0]);
        let q = GaussianPosterior::Diagonal(DiagonalGaussian::new(mean.clone(), DVector::from_element(4, 1.0), 0.0, 1.0)?);
        let k = 100_000usize;
        let spec = McSpec { samples: k, per_example: false, curvature: CurvatureEstimator::Reparam };
        let d = expected_derivs(&q, &loss, &[0], spec, &NoiseStream::new(5), NoiseKey::shared(0, NoiseRole::Inner))?;
        let Curvature::Diag(h) = d.curv else { unreachable!("diagonal family") };
        // Per-sample estimate a_j (m_j/σ_j + ε_j) ε_j has variance a_j² (m_j²/σ_j² + 2).
        let sigma = match &q {
            GaussianPosterior::Diagonal(g) => g.sigma(),
            _ => unreachable!(),
        };
        let mut worst = 0.0f64;
        for j in 0..4 {
            let sd = a[j] * ((mean[j] / sigma[j]).powi(2) + 2.0).sqrt();
            worst = worst.max((h[j] - a[j]).abs() / (sd / (k as f64).sqrt()));
        }
        Ok((worst <= 5.0, format!("worst deviation {worst:.2} standard errors")))
    };
    CheckOutcome::from_result("diag-reparam-curvature", run())
}

/// Antithetic pairs make the isotropic expected gradient of a quadratic
/// exact.
pub fn antithetic_isotropic() -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let loss = LossOracle::Quadratic(make_quadratic(5, 3, 4)?);
        let m = DVector::from_vec(vec![0.2, -1.0, 0.5, 0.0, 1.5]);
        let q = GaussianPosterior::isotropic(m.clone());
        let noise = NoiseStream::new(8).with_antithetic(true);
        let mut worst = 0.0f64;
        for step in 0..20 {
            let spec = McSpec { samples: 2, per_example: false, curvature: CurvatureEstimator::Reparam };
            let d = expected_derivs(&q, &loss, &[0, 1, 2], spec, &noise, NoiseKey::shared(step, NoiseRole::Inner))?;
            let exact = loss.batch_grad_sum(&[0, 1, 2], &m);
            worst = worst.max((d.grad - exact).amax());
        }
        Ok((worst <= EXACT_TOL, format!("max abs diff {worst:.2e}")))
    };
    CheckOutcome::from_result("antithetic-isotropic", run())
}

/// With a constant gradient estimate the debiased momentum equals it at
/// every step `t ≤ 50`.
pub fn ivon_debias() -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let hp = IvonParams { beta1: 0.9, beta2: 0.99999, delta: 1e-3, kappa: 100.0, xi: 1e3, curvature: CurvatureEstimator::Reparam };
        let g = DVector::from_vec(vec![0.7, -0.3, 2.0]);
        let h = DVector::from_element(3, 0.5);
        let mut st = IvonState::new(DVector::zeros(3), 0.5);
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let info = crate::optim::ivon_update(&mut st, &hp, &g, &h, None, 0.01)?;
            worst = worst.max((info.debiased - &g).amax());
        }
        Ok((worst <= EXACT_TOL, format!("max abs diff {worst:.2e}")))
    };
    CheckOutcome::from_result("ivon-debias", run())
}

/// Chord inequality along 20 random segments per problem kind.
pub fn convexity() -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut r = rng(13);
        let problems = [
            small_logistic(40, 5, 1, 1.0)?,
            Problem::new(LossOracle::LeastSquares(make_synthetic_linreg(40, 5, 0.5, 2)?), Regularizer::new(1.0)?),
            Problem::new(LossOracle::Quadratic(make_quadratic(5, 40, 3)?), Regularizer::new(1.0)?),
        ];
        let mut worst = f64::NEG_INFINITY;
        for p in &problems {
            for _ in 0..20 {
                let a = rvec(&mut r, p.dim(), 3.0);
                let b = rvec(&mut r, p.dim(), 3.0);
                let (fa, fb) = (p.objective(&a), p.objective(&b));
                for k in 1..10 {
                    let s = k as f64 / 10.0;
                    let x = &a * (1.0 - s) + &b * s;
                    let excess = p.objective(&x) - ((1.0 - s) * fa + s * fb);
                    worst = worst.max(excess / (1.0 + fa.abs().max(fb.abs())));
                }
            }
        }
        Ok((worst <= EXACT_TOL, format!("max relative chord excess {worst:.2e}")))
    };
    CheckOutcome::from_result("convexity", run())
}

/// Full-batch PoCo from `λ_in` with any stale `λ_out` equals a BLR step from
/// `λ_in`, on `states` random states per family.
pub fn poco_identity(states: usize) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut r = rng(14);
        let p = small_logistic(20, 4, 5, 1.0)?;
        let loss = p.absorbed();
        let all: Vec<usize> = (0..loss.len()).collect();
        let noise = NoiseStream::new(3);
        let mut worst = 0.0f64;
        for fam in FAMILIES {
            for s in 0..states as u64 {
                let q_in = random_posterior(&mut r, fam, 4, loss.len());
                let q_out = random_posterior(&mut r, fam, 4, loss.len());
                let spec = McSpec::default();
                let out_key = NoiseKey::shared(0, NoiseRole::Refresh);
                let g_out = natgrad_mc(&q_out, &loss, &all, spec, &noise, out_key)?;
                let mut st = PocoState { q_in: q_in.clone(), q_out, g_out, out_key, spec };
                let eta = 0.05 + 0.1 * r.random::<f64>();
                let step = s + 1;
                poco_full_batch_step(&mut st, &loss, eta, &noise, step)?;
                let g = natgrad_mc(&q_in, &loss, &all, spec, &noise, NoiseKey::shared(step, NoiseRole::Inner))?;
                let blr = blr_step(&q_in, &g, eta)?;
                worst = worst.max(st.q_in.to_natural().max_abs_diff(&blr.to_natural()));
            }
        }
        Ok((worst <= EXACT_TOL, format!("max abs diff in natural parameters {worst:.2e}")))
    };
    CheckOutcome::from_result("poco-identity", run())
}

/// Exact mean over `i` of the single-example corrected direction equals the
/// full-batch direction, for `N ∈ {2, 5, 17}` and every family.
pub fn unbiasedness() -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut r = rng(15);
        let mut worst = 0.0f64;
        for n in [2usize, 5, 17] {
            let p = small_logistic(n, 3, n as u64, 1.0)?;
            let loss = p.absorbed();
            let all: Vec<usize> = (0..n).collect();
            let noise = NoiseStream::new(n as u64);
            for fam in FAMILIES {
                let q_in = random_posterior(&mut r, fam, 3, n);
                let q_out = random_posterior(&mut r, fam, 3, n);
                let spec = McSpec::default();
                let out_key = NoiseKey::shared(0, NoiseRole::Refresh);
                let g_out = natgrad_mc(&q_out, &loss, &all, spec, &noise, out_key)?;
                let st = PocoState { q_in, q_out, g_out, out_key, spec };
                let key = NoiseKey::shared(1, NoiseRole::Inner);
                let full = poco_direction(&st, &loss, &all, &noise, key)?;
                let mean = enumerate_expectation(n, |i| poco_direction(&st, &loss, &[i], &noise, key).expect("valid"));
                worst = worst.max(mean.max_abs_diff(&full));
            }
        }
        Ok((worst <= EXACT_TOL, format!("max abs diff {worst:.2e}")))
    };
    CheckOutcome::from_result("unbiasedness", run())
}

/// Enumerated mean of the corrected precision increment against direct
/// summation, and the vanishing extra term at `m_in = m_out`.
pub fn svrh_consistency() -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut r = rng(16);
        let mut worst = 0.0f64;
        let mut extra = 0.0f64;
        for n in [2usize, 5, 17] {
            let p = small_logistic(n, 4, 100 + n as u64, 1.0)?;
            let loss = p.absorbed();
            let s = DMatrix::identity(4, 4) * (n as f64);
            let m = rvec(&mut r, 4, 1.0);
            let st = von_poco_refresh(&loss, &m, &s, &NoiseStream::new(1), 0)?;
            let theta_in = rvec(&mut r, 4, 1.0);
            let beta = 0.3;
            let nf = n as f64;
            // Increment β N H_in for batch {i}, averaged over i.
            let mean = enumerate_expectation(n, |i| svrh_terms(&loss, &st.h_out, &[i], &theta_in, &st.theta_out).1 * (beta * nf));
            let direct = p.full_hess(&theta_in) * beta;
            worst = worst.max((mean - direct).amax());
            for i in 0..n {
                let (hm, _) = svrh_terms(&loss, &st.h_out, &[i], &theta_in, &st.theta_out);
                extra = extra.max((hm * (&st.m_in - &st.m_out)).amax());
            }
        }
        Ok((
            worst <= EXACT_TOL && extra == 0.0,
            format!("increment max abs diff {worst:.2e}, extra term at m_in = m_out {extra:.1e}"),
        ))
    };
    CheckOutcome::from_result("svrh-consistency", run())
}

/// One full-batch VON-PoCo step with `ε = 0`, `η = β = 1` after a refresh is
/// a Newton step on a regularized quadratic.
pub fn newton_one_step() -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut worst = 0.0f64;
        for (d, seed) in [(5usize, 1u64), (20, 2), (50, 3)] {
            let p = Problem::new(LossOracle::Quadratic(make_quadratic(d, 10, seed)?), Regularizer::new(0.5)?);
            let loss = p.absorbed();
            let m0 = DVector::from_element(d, 1.0);
            let s0 = DMatrix::identity(d, d);
            let z = NoiseStream::zeroed();
            let mut st = von_poco_refresh(&loss, &m0, &s0, &z, 1)?;
            let all: Vec<usize> = (0..loss.len()).collect();
            von_poco_inner_step(&mut st, &loss, &all, 1.0, 1.0, &z, 1, false)?;
            worst = worst.max(p.full_grad(&st.m_in).norm());
        }
        Ok((worst <= 1e-10, format!("max gradient norm after one step {worst:.2e}")))
    };
    CheckOutcome::from_result("newton-one-step", run())
}

/// VSGD-PoCo without noise and SVRG agree bitwise on `problems`
/// random logistic problems for `steps` steps.
pub fn svrg_equivalence(problems: usize, steps: u64) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut r = rng(17);
        let mut worst = 0.0f64;
        for k in 0..problems as u64 {
            let n = r.random_range(8..=64);
            let d = r.random_range(2..=8);
            let p = small_logistic(n, d, 1000 + k, 1.0)?;
            let cfg = OptimizerConfig {
                eta: 0.05,
                inner_steps: r.random_range(1..=2 * n),
                batch_size: r.random_range(1..=n.min(8)),
                zero_noise: true,
                ..Default::default()
            };
            let cadence = Cadence { start: r.random_range(0..50), inner: cfg.inner_steps };
            let init = rvec(&mut r, d, 0.5);
            let mut a = SvrgRunner::new(&p, &cfg, init.clone(), cadence, 1.0, steps, k)?;
            let mut b = VsgdPocoRunner::new(&p, &cfg, init, cadence, steps, k)?;
            for t in 1..=steps {
                a.step(t)?;
                b.step(t)?;
                worst = worst.max((a.mean() - b.mean()).amax());
            }
        }
        Ok((worst == 0.0, format!("max abs iterate difference {worst:.1e} over {problems} problems")))
    };
    CheckOutcome::from_result("svrg-equivalence", run())
}

/// IVON-PoCoMo with `α = 0` against plain IVON: identical traces from the
/// runners, and bitwise-identical states when the corrected code path is
/// forced.
pub fn ivon_reduction(steps: u64) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let (ds, _) = make_synthetic_logreg(1000, 20, 1.0, 21, 1.0)?;
        let p = Problem::new(LossOracle::Logistic(ds), Regularizer::new(1.0)?);
        let cfg = OptimizerConfig { alpha: 0.0, inner_steps: 100, mega_factor: Some(20), rho1: 0.9, rho2: 0.9, ..Default::default() };
        let opts = RecordOptions::default();
        let plain = drive(&p, build(OptimizerKind::Ivon, &p, &cfg, 0, steps, 4)?.as_mut(), steps, opts)?;
        let corr = drive(&p, build(OptimizerKind::IvonPocomo, &p, &cfg, 0, steps, 4)?.as_mut(), steps, opts)?;
        let same_trace = csv_bytes(&plain)? == csv_bytes(&corr)?
            && plain.rows.iter().zip(&corr.rows).all(|(a, b)| a.param_hash == b.param_hash);

        // Forced path: refresh and corrected step with α = 0 every time.
        let hp = IvonParams::from_config(&cfg, p.len(), p.reg.s0)?;
        let loss = &p.oracle;
        let noise = NoiseStream::new(9);
        let mut sa = IndexSampler::new(9, p.len(), SamplingMode::Reshuffle);
        let mut sb = sa.clone();
        let mut mega = MegaBatchSampler::new(9, p.len());
        let mut a = IvonState::new(DVector::zeros(p.dim()), cfg.h0);
        let mut b = a.clone();
        let mut layer = IvonPocoMo { alpha: 0.0, extra_term_weight: 0.01, shared_outer_sample: false, outer: None };
        let mut forced_equal = true;
        for t in 1..=steps {
            ivon_step(&mut a, &hp, loss, &sa.next_batch(5), &noise, t, cfg.eta)?;
            if (t - 1) % 100 == 0 {
                layer.refresh(&b, &hp, loss, 100, (0.9, 0.9), &mut mega, 1, &noise, t)?;
            }
            layer.step(&mut b, &hp, loss, &sb.next_batch(5), &noise, t, cfg.eta)?;
            forced_equal &= bits_eq(&a.m, &b.m) && bits_eq(&a.h, &b.h) && bits_eq(&a.g, &b.g);
        }
        Ok((
            same_trace && forced_equal,
            format!("{} steps: runner traces identical = {same_trace}, forced corrected path bitwise = {forced_equal}", steps),
        ))
    };
    CheckOutcome::from_result("ivon-reduction", run())
}

fn bits_eq(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn csv_bytes(t: &Trace) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    t.write_csv(&mut buf)?;
    Ok(buf)
}

/// Counts from [`positivity_clipping`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClipStats {
    pub steps: u64,
    pub min_h_plus_delta: f64,
    pub max_step_ratio: f64,
    pub plain_clamps: u64,
    pub corrected_steps: u64,
    pub corrected_clamps: u64,
}

/// `runs` plain IVON runs and as many corrected runs of `steps` steps each.
pub fn clip_stats(runs: usize, steps: u64) -> Result<ClipStats> {
    let mut s = ClipStats { min_h_plus_delta: f64::INFINITY, ..Default::default() };
    for k in 0..runs as u64 {
        let (ds, _) = make_synthetic_logreg(500, 10, 0.5 + (k % 4) as f64, 300 + k, 1.0)?;
        let p = Problem::new(LossOracle::Logistic(ds), Regularizer::new(1.0)?);
        let cfg = OptimizerConfig { eta: 0.2, alpha: 0.0, inner_steps: 100, ..Default::default() };
        let mut run = IvonRunner::plain(&p, &cfg, DVector::zeros(p.dim()), steps, k)?;
        for t in 1..=steps {
            let rep = run.step(t)?;
            let info = run.last_info().expect("a step was taken");
            let hp = run.params();
            let bound = run.rate(t) * hp.xi;
            s.max_step_ratio = s.max_step_ratio.max(info.applied.amax() / bound);
            s.min_h_plus_delta = s.min_h_plus_delta.min(run.state().h.min() + hp.delta);
            s.plain_clamps += rep.events.contains(&Event::Clamp) as u64;
        }
        s.steps += steps;

        let cfg = OptimizerConfig { alpha: 1.0, mega_factor: Some(20), rho1: 0.9, rho2: 0.9, ..cfg };
        let mut run = IvonRunner::corrected(&p, &cfg, DVector::zeros(p.dim()), Cadence { start: 0, inner: 100 }, steps, k)?;
        for t in 1..=steps {
            let rep = run.step(t)?;
            s.corrected_clamps += rep.events.contains(&Event::Clamp) as u64;
        }
        s.corrected_steps += steps;
    }
    Ok(s)
}

pub fn positivity_clipping(runs: usize, steps: u64) -> CheckOutcome {
    let r = clip_stats(runs, steps).map(|s| {
        let frac = s.corrected_clamps as f64 / s.corrected_steps.max(1) as f64;
        (
            s.min_h_plus_delta > 0.0 && s.max_step_ratio <= 1.0 && s.plain_clamps == 0 && frac < 0.01,
            format!(
                "min h+δ {:.3e}, max |step|/(η ξ) {:.3e}, clamps: plain {} / {}, corrected {} / {} ({:.3}%)",
                s.min_h_plus_delta,
                s.max_step_ratio,
                s.plain_clamps,
                s.steps,
                s.corrected_clamps,
                s.corrected_steps,
                100.0 * frac
            ),
        )
    });
    CheckOutcome::from_result("positivity-clipping", r)
}

/// Replay every refresh from the mean captured just before it: the stored
/// snapshot must match bitwise and stay untouched until the next refresh.
pub fn snapshot_replay() -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let p = small_logistic(30, 4, 41, 1.0)?;
        let loss = p.absorbed();
        let cfg = OptimizerConfig { eta: 0.05, inner_steps: 7, batch_size: 3, ..Default::default() };
        let cadence = Cadence { start: 5, inner: 7 };
        let mut ok = true;
        let mut refreshes = 0;

        let mut svrg = SvrgRunner::new(&p, &cfg, DVector::zeros(4), cadence, 1.0, 60, 2)?;
        let mut snap = svrg.state().clone();
        for t in 1..=60 {
            let before = svrg.mean().clone();
            let rep = svrg.step(t)?;
            let st = svrg.state();
            if rep.events.contains(&Event::Refresh) {
                refreshes += 1;
                let replay = svrg_refresh(&loss, &before)?;
                ok &= bits_eq(&replay.g_out, &st.g_out) && bits_eq(&replay.theta_out, &st.theta_out);
                snap = st.clone();
            } else if t > cadence.start {
                ok &= bits_eq(&snap.g_out, &st.g_out) && bits_eq(&snap.theta_out, &st.theta_out);
            }
        }

        let cfg_v = OptimizerConfig { eta: 0.01, ..cfg.clone() };
        let mut von = VonPocoRunner::new(&p, &cfg_v, DVector::zeros(4), cadence, 60, 2)?;
        let noise = NoiseStream::new(2);
        let mut snap = von.state().clone();
        for t in 1..=60 {
            let (m, s) = (von.state().m_in.clone(), von.state().s_in.clone());
            let rep = von.step(t)?;
            let st = von.state();
            if rep.events.contains(&Event::Refresh) {
                refreshes += 1;
                let replay = von_poco_refresh(&loss, &m, &s, &noise, t)?;
                ok &= bits_eq(&replay.g_out, &st.g_out) && replay.h_out == st.h_out && bits_eq(&replay.m_out, &st.m_out);
                snap = st.clone();
            } else if t > cadence.start {
                ok &= bits_eq(&snap.g_out, &st.g_out) && snap.h_out == st.h_out && bits_eq(&snap.m_out, &st.m_out);
            }
        }
        Ok((ok && refreshes > 0, format!("{refreshes} refreshes replayed, snapshots identical = {ok}")))
    };
    CheckOutcome::from_result("snapshot-replay", run())
}

/// Two examples `x₁ = (1, 0), y₁ = 1`, `x₂ = (1, 2), y₂ = −1` at
/// `m = (0.5, 0.5)`: the full-batch anchor is the sum `(2, 5)`, the
/// mega-batch anchor the mean `(1, 2.5)`.
pub fn mean_vs_sum() -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let ds = Dataset::new(2, 2, vec![1.0, 0.0, 1.0, 2.0], vec![1.0, -1.0], LabelKind::Regression)?;
        let loss = LossOracle::LeastSquares(ds);
        let q = GaussianPosterior::isotropic(DVector::from_vec(vec![0.5, 0.5]));
        let z = NoiseStream::zeroed();
        let key = NoiseKey::shared(0, NoiseRole::Refresh);
        let full = refresh_full(&loss, &q, RefreshSpec::default(), &z, key)?;
        let mut sampler = MegaBatchSampler::new(0, 2);
        let mega = refresh_mega(&loss, &q, 2, None, (0.0, 0.0), &mut sampler, RefreshSpec::default(), &z, key)?;
        let svrg = svrg_refresh(&loss, q.mean())?;
        let ok = full.g_out == DVector::from_vec(vec![2.0, 5.0])
            && mega.g_out == DVector::from_vec(vec![1.0, 2.5])
            && svrg.g_out == full.g_out;
        Ok((ok, format!("sum {:?}, mean {:?}", full.g_out.as_slice(), mega.g_out.as_slice())))
    };
    CheckOutcome::from_result("mean-vs-sum", run())
}

/// Expected evaluation increment of row `t` from its event flags.
fn expected_increment(kind: OptimizerKind, row_has_refresh: bool, t: u64, start: u64, b: u64, refresh: u64) -> u64 {
    let corrected = matches!(
        kind,
        OptimizerKind::Svrg | OptimizerKind::AlphaSvrg | OptimizerKind::VsgdPoco | OptimizerKind::VonPoco | OptimizerKind::IvonPoco | OptimizerKind::IvonPocomo
    );
    if !corrected {
        return b;
    }
    let inner = if t > start { 2 * b } else { b };
    if row_has_refresh {
        refresh + inner
    } else {
        inner
    }
}

/// Recompute the cumulative evaluation column from event flags.
pub fn accounting() -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let p = small_logistic(40, 3, 51, 1.0)?;
        let (n, b, start, steps) = (40u64, 4u64, 6u64, 50u64);
        let mut checked = 0;
        let mut ok = true;
        for kind in [
            OptimizerKind::Sgd,
            OptimizerKind::Svrg,
            OptimizerKind::AlphaSvrg,
            OptimizerKind::VsgdPoco,
            OptimizerKind::VonPoco,
            OptimizerKind::Ivon,
            OptimizerKind::IvonPoco,
            OptimizerKind::IvonPocomo,
        ] {
            let mega_factor = matches!(kind, OptimizerKind::IvonPoco | OptimizerKind::IvonPocomo).then_some(5);
            let cfg = OptimizerConfig { eta: 0.01, inner_steps: 9, batch_size: b as usize, mega_factor, alpha: 0.5, ..Default::default() };
            let refresh = mega_factor.map_or(n, |f| f as u64 * b);
            let tr = drive(&p, build(kind, &p, &cfg, start, steps, 1)?.as_mut(), steps, RecordOptions::default())?;
            let mut acc = 0;
            for row in tr.rows.iter().skip(1) {
                acc += expected_increment(kind, row.has(Event::Refresh), row.step, start, b, refresh);
                ok &= acc == row.grad_evals;
                checked += 1;
            }
        }
        Ok((ok, format!("{checked} rows recomputed")))
    };
    CheckOutcome::from_result("accounting", run())
}

/// Trace objectives against direct full-batch evaluation of the dumped
/// parameters, and the reference objective against its own optimum.
pub fn objective_spot_check() -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let spec = ProblemSpec::Logistic { n: 200, d: 5, seed: 61, s0: 1.0, separability: 1.0 };
        let built = spec.build()?;
        let p = &built.problem;
        let cfg = OptimizerConfig { eta: 0.1, inner_steps: 40, ..Default::default() };
        let opts = RecordOptions { eval_every: 10, wallclock: false, dump_params: true };
        let tr = drive(p, build(OptimizerKind::Svrg, p, &cfg, 20, 200, 3)?.as_mut(), 200, opts)?;
        let params = tr.params.as_ref().expect("dumped");
        let mut worst = 0.0f64;
        for (row, th) in tr.rows.iter().zip(params).step_by(3) {
            worst = worst.max((row.objective - p.mean_objective(th)).abs());
        }
        let reread = Trace::read_csv(std::str::from_utf8(&csv_bytes(&tr)?).expect("utf-8"))?;
        let same = reread.rows.iter().zip(&tr.rows).all(|(a, b)| a.objective.to_bits() == b.objective.to_bits());
        let r = newton_reference(p)?;
        worst = worst.max((p.mean_objective(&r.theta) - built.reference).abs());
        let below = tr.rows.iter().all(|row| row.objective >= built.reference - EXACT_TOL);
        Ok((worst <= EXACT_TOL && same && below, format!("max abs diff {worst:.2e}, csv round-trip exact = {same}")))
    };
    CheckOutcome::from_result("objective-spot-check", run())
}

/// Two in-memory executions of the small comparison suite give identical
/// trace bytes.
pub fn determinism() -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let a = run_configs(suite_configs("fig2-small")?)?;
        let b = run_configs(suite_configs("fig2-small")?)?;
        let mut count = 0;
        let mut ok = true;
        for (ra, rb) in a.runs.iter().flatten().zip(b.runs.iter().flatten()) {
            ok &= csv_bytes(&ra.trace)? == csv_bytes(&rb.trace)?;
            count += 1;
        }
        Ok((ok, format!("{count} traces compared")))
    };
    CheckOutcome::from_result("determinism", run())
}

/// The whole property suite.
pub fn verify_all() -> Vec<CheckOutcome> {
    vec![
        fd_suite(50),
        round_trip(),
        diag_reparam_curvature(),
        antithetic_isotropic(),
        ivon_debias(),
        convexity(),
        poco_identity(20),
        unbiasedness(),
        svrh_consistency(),
        newton_one_step(),
        svrg_equivalence(10, 500),
        ivon_reduction(2000),
        positivity_clipping(20, 10_000),
        snapshot_replay(),
        mean_vs_sum(),
        accounting(),
        objective_spot_check(),
        determinism(),
    ]
}
