//! Gaussian posteriors as exponential families.
//!
//! Three families are supported, each kept in moment form (mean plus a
//! precision-like quantity) with conversions to and from natural parameters:
//!
//! | family    | natural parameter `λ`      | sufficient statistics |
//! |-----------|----------------------------|-----------------------|
//! | isotropic | `m`                        | `θ`                   |
//! | diagonal  | `(s ⊙ m, −½ s)`            | `(θ, θ ⊙ θ)`          |
//! | full      | `(S m, −½ S)`              | `(θ, θ θᵀ)`           |
//!
//! Natural gradients of `L_i(λ) = E_q[ℓ_i]` are formed from expected
//! gradients and Hessians, `(E[∇ℓ − ∇²ℓ m], ½ E[∇²ℓ])`, so the Fisher matrix
//! is never built. For the isotropic family the base measure
//! `exp(−½θᵀθ)` cancels the entropy term and the natural gradient is simply
//! `E[∇ℓ]`.

use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, symmetrize, MAX_FULL_DIM};
use crate::problems::ExampleLoss;
use crate::rng::{NoiseKey, NoiseStream};

/// Tolerance on `|S − Sᵀ|` accepted when constructing a full Gaussian.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Isotropic,
    Diagonal,
    Full,
}

/// `N(m, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotropicGaussian {
    pub mean: DVector<f64>,
}

/// `N(m, diag(s)⁻¹)` with `s = κ (h + δ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    pub mean: DVector<f64>,
    /// Curvature estimate `h`.
    pub hess: DVector<f64>,
    pub delta: f64,
    /// Effective sample size.
    pub kappa: f64,
}

impl DiagonalGaussian {
    pub fn new(mean: DVector<f64>, hess: DVector<f64>, delta: f64, kappa: f64) -> Result<Self> {
        if mean.len() != hess.len() {
            return Err(Error::config("diagonal Gaussian: mean and curvature lengths differ"));
        }
        if !(delta >= 0.0) || !(kappa > 0.0) {
            return Err(Error::config(format!("diagonal Gaussian needs delta >= 0 and kappa > 0 (got {delta}, {kappa})")));
        }
        let q = Self { mean, hess, delta, kappa };
        if q.precision().iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::NotPositiveDefinite { step: None });
        }
        Ok(q)
    }

    /// `s = κ (h + δ)`.
    pub fn precision(&self) -> DVector<f64> {
        self.hess.map(|h| self.kappa * (h + self.delta))
    }

    /// `σ = 1 / sqrt(κ (h + δ))`.
    pub fn sigma(&self) -> DVector<f64> {
        self.hess.map(|h| 1.0 / (self.kappa * (h + self.delta)).sqrt())
    }
}

/// `N(m, S⁻¹)` with dense symmetric positive-definite precision `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullGaussian {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
}

impl FullGaussian {
    pub fn new(mean: DVector<f64>, mut precision: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d > MAX_FULL_DIM {
            return Err(Error::config(format!("full Gaussian limited to d <= {MAX_FULL_DIM}, got {d}")));
        }
        if precision.nrows() != d || precision.ncols() != d {
            return Err(Error::config("full Gaussian: precision shape does not match mean"));
        }
        let asym = (&precision - precision.transpose()).amax();
        if !(asym <= SYMMETRY_TOL * (1.0 + precision.amax())) {
            return Err(Error::config(format!("precision is not symmetric (max asymmetry {asym:e})")));
        }
        symmetrize(&mut precision);
        cholesky(&precision)?;
        Ok(Self { mean, precision })
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        Ok(cholesky(&self.precision)?.inverse())
    }
}

/// A posterior in one of the three supported families.
#[derive(Debug, Clone, PartialEq)]
pub enum GaussianPosterior {
    Isotropic(IsotropicGaussian),
    Diagonal(DiagonalGaussian),
    Full(FullGaussian),
}

/// An element of natural-parameter space: either a natural parameter or a
/// natural gradient. Arithmetic between different families panics.
#[derive(Debug, Clone, PartialEq)]
pub enum NatVec {
    Isotropic(DVector<f64>),
    Diagonal { first: DVector<f64>, second: DVector<f64> },
    Full { first: DVector<f64>, second: DMatrix<f64> },
}

/// Natural gradient `∇̃L_i = ∇_μ L_i`.
pub type NatGrad = NatVec;
/// Natural parameter `λ`.
pub type NaturalParams = NatVec;

impl NatVec {
    pub fn family(&self) -> Family {
        match self {
            NatVec::Isotropic(_) => Family::Isotropic,
            NatVec::Diagonal { .. } => Family::Diagonal,
            NatVec::Full { .. } => Family::Full,
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            NatVec::Isotropic(v) => NatVec::Isotropic(DVector::zeros(v.len())),
            NatVec::Diagonal { first, .. } => {
                NatVec::Diagonal { first: DVector::zeros(first.len()), second: DVector::zeros(first.len()) }
            }
            NatVec::Full { first, .. } => {
                let d = first.len();
                NatVec::Full { first: DVector::zeros(d), second: DMatrix::zeros(d, d) }
            }
        }
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: f64, other: &NatVec) {
        match (self, other) {
            (NatVec::Isotropic(x), NatVec::Isotropic(y)) => x.axpy(a, y, 1.0),
            (NatVec::Diagonal { first: x1, second: x2 }, NatVec::Diagonal { first: y1, second: y2 }) => {
                x1.axpy(a, y1, 1.0);
                x2.axpy(a, y2, 1.0);
            }
            (NatVec::Full { first: x1, second: x2 }, NatVec::Full { first: y1, second: y2 }) => {
                x1.axpy(a, y1, 1.0);
                x2.zip_apply(y2, |x, y| *x += a * y);
            }
            (s, o) => panic!("natural-parameter family mismatch: {:?} vs {:?}", s.family(), o.family()),
        }
    }

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(&self, other: &NatVec) -> f64 {
        let mut d = self.clone();
        d -= other;
        d.amax()
    }

    pub fn amax(&self) -> f64 {
        match self {
            NatVec::Isotropic(v) => v.amax(),
            NatVec::Diagonal { first, second } => first.amax().max(second.amax()),
            NatVec::Full { first, second } => first.amax().max(second.amax()),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            NatVec::Isotropic(v) => v.iter().all(|x| x.is_finite()),
            NatVec::Diagonal { first, second } => first.iter().chain(second.iter()).all(|x| x.is_finite()),
            NatVec::Full { first, second } => first.iter().chain(second.iter()).all(|x| x.is_finite()),
        }
    }
}

impl AddAssign<&NatVec> for NatVec {
    fn add_assign(&mut self, rhs: &NatVec) {
        self.axpy(1.0, rhs);
    }
}

impl SubAssign<&NatVec> for NatVec {
    fn sub_assign(&mut self, rhs: &NatVec) {
        self.axpy(-1.0, rhs);
    }
}

impl MulAssign<f64> for NatVec {
    fn mul_assign(&mut self, a: f64) {
        match self {
            NatVec::Isotropic(v) => *v *= a,
            NatVec::Diagonal { first, second } => {
                *first *= a;
                *second *= a;
            }
            NatVec::Full { first, second } => {
                *first *= a;
                *second *= a;
            }
        }
    }
}

impl DivAssign<f64> for NatVec {
    fn div_assign(&mut self, a: f64) {
        match self {
            NatVec::Isotropic(v) => *v /= a,
            NatVec::Diagonal { first, second } => {
                *first /= a;
                *second /= a;
            }
            NatVec::Full { first, second } => {
                *first /= a;
                *second /= a;
            }
        }
    }
}

/// Expected curvature in the shape the family needs.
#[derive(Debug, Clone, PartialEq)]
pub enum Curvature {
    None,
    Diag(DVector<f64>),
    Full(DMatrix<f64>),
}

/// Monte-Carlo estimates of `E_q[∇ℓ]` and `E_q[∇²ℓ]`, summed over an index set.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivs {
    pub grad: DVector<f64>,
    pub curv: Curvature,
}

/// How the diagonal family estimates `E_q[diag ∇²ℓ]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurvatureEstimator {
    /// `∇ℓ(θ) ⊙ (θ − m) / σ²` at the sampled `θ`.
    #[default]
    Reparam,
    /// The exact diagonal of `∇²ℓ(θ)`.
    ExactDiag,
}

/// Controls for [`natgrad_mc`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSpec {
    /// Number of posterior samples `K`.
    pub samples: usize,
    /// Give every example its own draw instead of one draw per sample.
    pub per_example: bool,
    pub curvature: CurvatureEstimator,
}

impl Default for McSpec {
    fn default() -> Self {
        Self { samples: 1, per_example: false, curvature: CurvatureEstimator::Reparam }
    }
}

impl GaussianPosterior {
    pub fn isotropic(mean: DVector<f64>) -> Self {
        GaussianPosterior::Isotropic(IsotropicGaussian { mean })
    }

    pub fn family(&self) -> Family {
        match self {
            GaussianPosterior::Isotropic(_) => Family::Isotropic,
            GaussianPosterior::Diagonal(_) => Family::Diagonal,
            GaussianPosterior::Full(_) => Family::Full,
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        match self {
            GaussianPosterior::Isotropic(q) => &q.mean,
            GaussianPosterior::Diagonal(q) => &q.mean,
            GaussianPosterior::Full(q) => &q.mean,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean().len()
    }

    /// `m + L ε`, where `L Lᵀ` is the covariance.
    pub fn sample_with(&self, eps: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            GaussianPosterior::Isotropic(q) => Ok(&q.mean + eps),
            GaussianPosterior::Diagonal(q) => Ok(&q.mean + q.sigma().component_mul(eps)),
            GaussianPosterior::Full(q) => {
                // S = L Lᵀ, so L⁻ᵀ ε has covariance S⁻¹.
                let chol = cholesky(&q.precision)?;
                let z = chol
                    .l()
                    .tr_solve_lower_triangular(eps)
                    .ok_or(Error::NotPositiveDefinite { step: None })?;
                Ok(&q.mean + z)
            }
        }
    }

    pub fn sample(&self, noise: &NoiseStream, key: NoiseKey) -> Result<DVector<f64>> {
        self.sample_with(&noise.normal(key, self.dim()))
    }

    /// Moment to natural parameters.
    pub fn to_natural(&self) -> NaturalParams {
        match self {
            GaussianPosterior::Isotropic(q) => NatVec::Isotropic(q.mean.clone()),
            GaussianPosterior::Diagonal(q) => {
                let s = q.precision();
                NatVec::Diagonal { first: s.component_mul(&q.mean), second: s * -0.5 }
            }
            GaussianPosterior::Full(q) => {
                NatVec::Full { first: &q.precision * &q.mean, second: &q.precision * -0.5 }
            }
        }
    }

    /// Replace this posterior's natural parameters, keeping family-level
    /// constants (`δ`, `κ` of the diagonal family).
    pub fn with_natural(&self, lambda: &NaturalParams) -> Result<Self> {
        match (self, lambda) {
            (GaussianPosterior::Isotropic(_), NatVec::Isotropic(m)) => Ok(GaussianPosterior::isotropic(m.clone())),
            (GaussianPosterior::Diagonal(q), NatVec::Diagonal { first, second }) => {
                let s = second * -2.0;
                if s.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return Err(Error::NotPositiveDefinite { step: None });
                }
                let mean = first.component_div(&s);
                let hess = s.map(|v| v / q.kappa - q.delta);
                Ok(GaussianPosterior::Diagonal(DiagonalGaussian { mean, hess, delta: q.delta, kappa: q.kappa }))
            }
            (GaussianPosterior::Full(_), NatVec::Full { first, second }) => {
                let mut s = second * -2.0;
                symmetrize(&mut s);
                let chol = cholesky(&s)?;
                let mean = chol.solve(first);
                Ok(GaussianPosterior::Full(FullGaussian { mean, precision: s }))
            }
            (q, l) => Err(Error::config(format!(
                "natural parameter family {:?} does not match posterior family {:?}",
                l.family(),
                q.family()
            ))),
        }
    }

    /// Curvature-free natural gradient from expected derivatives taken under
    /// this posterior.
    pub fn natgrad_from(&self, d: &Derivs) -> Result<NatGrad> {
        let m = self.mean();
        match (self.family(), &d.curv) {
            (Family::Isotropic, _) => Ok(NatVec::Isotropic(d.grad.clone())),
            (Family::Diagonal, Curvature::Diag(h)) => {
                Ok(NatVec::Diagonal { first: &d.grad - h.component_mul(m), second: h * 0.5 })
            }
            (Family::Full, Curvature::Full(h)) => Ok(NatVec::Full { first: &d.grad - h * m, second: h * 0.5 }),
            (fam, _) => Err(Error::config(format!("curvature shape does not fit the {fam:?} family"))),
        }
    }
}

/// Natural to moment parameters. The diagonal family is returned with
/// `δ = 0`, `κ = 1` (so `h = s`); use [`GaussianPosterior::with_natural`] to
/// keep other constants.
pub fn natural_to_moment(lambda: &NaturalParams) -> Result<GaussianPosterior> {
    let template = match lambda {
        NatVec::Isotropic(m) => GaussianPosterior::isotropic(DVector::zeros(m.len())),
        NatVec::Diagonal { first, .. } => GaussianPosterior::Diagonal(DiagonalGaussian {
            mean: DVector::zeros(first.len()),
            hess: DVector::from_element(first.len(), 1.0),
            delta: 0.0,
            kappa: 1.0,
        }),
        NatVec::Full { first, .. } => {
            let d = first.len();
            if d > MAX_FULL_DIM {
                return Err(Error::config(format!("full Gaussian limited to d <= {MAX_FULL_DIM}, got {d}")));
            }
            GaussianPosterior::Full(FullGaussian { mean: DVector::zeros(d), precision: DMatrix::identity(d, d) })
        }
    };
    template.with_natural(lambda)
}

/// Accumulate `E_q[∇ℓ_i]` (and curvature as the family needs it) summed over
/// `indices`, averaged over `spec.samples` posterior draws.
///
/// With a zeroed noise stream the reparametrization curvature estimator is
/// degenerate (`θ − m = 0`), so the exact diagonal is used instead; this is
/// the delta method `E_q[f] ≈ f(m)`.
pub fn expected_derivs<L: ExampleLoss + ?Sized>(
    q: &GaussianPosterior,
    loss: &L,
    indices: &[usize],
    spec: McSpec,
    noise: &NoiseStream,
    key: NoiseKey,
) -> Result<Derivs> {
    if indices.is_empty() {
        return Err(Error::config("natural gradient over an empty index set"));
    }
    if spec.samples == 0 {
        return Err(Error::config("need at least one Monte-Carlo sample"));
    }
    let d = q.dim();
    let family = q.family();
    let mut grad = DVector::zeros(d);
    let mut curv = match family {
        Family::Isotropic => Curvature::None,
        Family::Diagonal => Curvature::Diag(DVector::zeros(d)),
        Family::Full => Curvature::Full(DMatrix::zeros(d, d)),
    };
    let estimator = if noise.is_zeroed() { CurvatureEstimator::ExactDiag } else { spec.curvature };
    let inv_var = match q {
        GaussianPosterior::Diagonal(dq) => Some(dq.sigma().map(|s| 1.0 / (s * s))),
        _ => None,
    };
    for k in 0..spec.samples {
        let sample_key = key.with_sample(k as u32);
        let shared = if spec.per_example { None } else { Some(q.sample(noise, sample_key)?) };
        for &i in indices {
            let theta = match &shared {
                Some(t) => t.clone(),
                None => q.sample(noise, NoiseKey { index: i as u64, ..sample_key })?,
            };
            match &mut curv {
                Curvature::None => loss.add_grad(i, &theta, 1.0, &mut grad),
                Curvature::Full(h) => {
                    loss.add_grad(i, &theta, 1.0, &mut grad);
                    loss.add_hess(i, &theta, 1.0, h);
                }
                Curvature::Diag(h) => match estimator {
                    CurvatureEstimator::ExactDiag => {
                        loss.add_grad(i, &theta, 1.0, &mut grad);
                        loss.add_hess_diag(i, &theta, 1.0, h);
                    }
                    CurvatureEstimator::Reparam => {
                        let g = loss.grad(i, &theta);
                        let w = inv_var.as_ref().expect("diagonal family has a variance");
                        let dev = &theta - q.mean();
                        for j in 0..d {
                            h[j] += g[j] * dev[j] * w[j];
                        }
                        grad += g;
                    }
                },
            }
        }
    }
    if spec.samples > 1 {
        let k = spec.samples as f64;
        grad /= k;
        match &mut curv {
            Curvature::None => {}
            Curvature::Diag(h) => *h /= k,
            Curvature::Full(h) => *h /= k,
        }
    }
    Ok(Derivs { grad, curv })
}

/// Monte-Carlo natural gradient `Σ_{i ∈ indices} ∇̃L_i(λ)`.
pub fn natgrad_mc<L: ExampleLoss + ?Sized>(
    q: &GaussianPosterior,
    loss: &L,
    indices: &[usize],
    spec: McSpec,
    noise: &NoiseStream,
    key: NoiseKey,
) -> Result<NatGrad> {
    let d = expected_derivs(q, loss, indices, spec, noise, key)?;
    q.natgrad_from(&d)
}

/// `λ ← (1 − decay) λ − rate · direction`, or `λ − rate · direction` for the
/// isotropic family whose base measure absorbs the decay.
pub fn natural_step(
    q: &GaussianPosterior,
    direction: &NatGrad,
    decay: f64,
    rate: f64,
) -> Result<GaussianPosterior> {
    let mut lambda = q.to_natural();
    if q.family() != Family::Isotropic {
        lambda *= 1.0 - decay;
    }
    lambda.axpy(-rate, direction);
    if !lambda.is_finite() {
        return Err(Error::NonFinite { what: "natural parameter", step: None });
    }
    q.with_natural(&lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{LossOracle, QuadraticLoss};
    use crate::rng::NoiseRole;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn isotropic_zero_noise_sample_is_mean() {
        let q = GaussianPosterior::isotropic(v(&[1.0, 2.0]));
        assert_eq!(q.sample_with(&v(&[0.0, 0.0])).unwrap(), v(&[1.0, 2.0]));
        let z = q.sample(&NoiseStream::zeroed(), NoiseKey::shared(0, NoiseRole::Inner)).unwrap();
        assert_eq!(z, v(&[1.0, 2.0]));
    }

    #[test]
    fn diagonal_sample_scales_by_sigma() {
        // σ² = 1 / (0.01 · (99 + 1)) = 1.
        let q = DiagonalGaussian::new(v(&[0.0, 0.0]), v(&[99.0, 99.0]), 1.0, 0.01).unwrap();
        let th = GaussianPosterior::Diagonal(q).sample_with(&v(&[1.0, 1.0])).unwrap();
        assert!((th - v(&[1.0, 1.0])).amax() < 1e-15);
    }

    #[test]
    fn full_identity_precision_sample() {
        let q = FullGaussian::new(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
        let e1 = v(&[1.0, 0.0, 0.0]);
        assert_eq!(GaussianPosterior::Full(q).sample_with(&e1).unwrap(), e1);
    }

    #[test]
    fn full_sample_has_precision_inverse_covariance() {
        let s = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let q = GaussianPosterior::Full(FullGaussian::new(DVector::zeros(2), s.clone()).unwrap());
        // L⁻ᵀ applied to the identity columns gives C with C Cᵀ = S⁻¹.
        let c = DMatrix::from_columns(&[
            q.sample_with(&v(&[1.0, 0.0])).unwrap(),
            q.sample_with(&v(&[0.0, 1.0])).unwrap(),
        ]);
        let cov = &c * c.transpose();
        assert!((cov * s - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn natural_to_moment_examples() {
        let q = natural_to_moment(&NatVec::Isotropic(v(&[3.0, -1.0]))).unwrap();
        assert_eq!(q.mean(), &v(&[3.0, -1.0]));

        let s = DMatrix::identity(2, 2) * 2.0;
        let m = v(&[1.0, 0.0]);
        let lam = NatVec::Full { first: &s * &m, second: &s * -0.5 };
        let GaussianPosterior::Full(f) = natural_to_moment(&lam).unwrap() else { panic!() };
        assert_eq!(f.precision, s);
        assert!((&f.mean - &m).amax() < 1e-15);

        let bad = NatVec::Full { first: v(&[0.0, 0.0]), second: DMatrix::from_row_slice(2, 2, &[-0.5, 0.0, 0.0, 0.5]) };
        assert!(matches!(natural_to_moment(&bad), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn asymmetric_or_oversized_precision_rejected() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(FullGaussian::new(DVector::zeros(2), s).is_err());
        let d = MAX_FULL_DIM + 1;
        assert!(matches!(
            FullGaussian::new(DVector::zeros(d), DMatrix::identity(d, d)),
            Err(Error::Config(_))
        ));
    }

    fn unit_quadratic(c: &[f64]) -> LossOracle {
        let d = c.len();
        LossOracle::Quadratic(QuadraticLoss::new(DMatrix::identity(d, d), v(c), 1).unwrap())
    }

    #[test]
    fn zero_noise_natgrad_is_gradient_at_mean() {
        let loss = unit_quadratic(&[1.0, -2.0]);
        let q = GaussianPosterior::isotropic(v(&[0.5, 0.5]));
        let spec = McSpec { samples: 3, ..Default::default() };
        let g = natgrad_mc(&q, &loss, &[0], spec, &NoiseStream::zeroed(), NoiseKey::shared(0, NoiseRole::Inner))
            .unwrap();
        assert_eq!(g, NatVec::Isotropic(v(&[-0.5, 2.5])));
    }

    #[test]
    fn antithetic_isotropic_estimator_is_exact_on_quadratics() {
        let loss = unit_quadratic(&[1.0, -2.0, 0.25]);
        let q = GaussianPosterior::isotropic(v(&[0.5, 0.5, -1.0]));
        let noise = NoiseStream::new(11).with_antithetic(true);
        for k in [2usize, 8, 64] {
            let spec = McSpec { samples: k, ..Default::default() };
            let NatVec::Isotropic(g) =
                natgrad_mc(&q, &loss, &[0], spec, &noise, NoiseKey::shared(4, NoiseRole::Inner)).unwrap()
            else {
                panic!()
            };
            assert!((g - v(&[-0.5, 2.5, -1.25])).amax() <= 1e-12);
        }
    }

    #[test]
    fn empty_index_set_is_config_error() {
        let loss = unit_quadratic(&[0.0]);
        let q = GaussianPosterior::isotropic(v(&[0.0]));
        let r = natgrad_mc(&q, &loss, &[], McSpec::default(), &NoiseStream::zeroed(), NoiseKey::shared(0, NoiseRole::Inner));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn full_natgrad_components() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = v(&[1.0, -1.0]);
        let loss = LossOracle::Quadratic(QuadraticLoss::new(a.clone(), c.clone(), 1).unwrap());
        let m = v(&[0.3, 0.7]);
        let q = GaussianPosterior::Full(FullGaussian::new(m.clone(), DMatrix::identity(2, 2)).unwrap());
        let g = natgrad_mc(&q, &loss, &[0], McSpec::default(), &NoiseStream::zeroed(), NoiseKey::shared(0, NoiseRole::Inner))
            .unwrap();
        let NatVec::Full { first, second } = g else { panic!() };
        // (E[∇ℓ − ∇²ℓ m], ½E[∇²ℓ]) = (A(m − c) − A m, ½A) = (−A c, ½A).
        assert!((first + &a * &c).amax() < 1e-15);
        assert_eq!(second, a * 0.5);
    }

    #[test]
    fn natural_step_with_zero_rate_is_identity() {
        let q = GaussianPosterior::Diagonal(DiagonalGaussian::new(v(&[1.0, -1.0]), v(&[0.5, 2.0]), 0.1, 3.0).unwrap());
        let dir = q.to_natural();
        let out = natural_step(&q, &dir, 0.0, 0.0).unwrap();
        let GaussianPosterior::Diagonal(o) = out else { panic!() };
        assert!((o.mean - v(&[1.0, -1.0])).amax() < 1e-15);
        assert!((o.hess - v(&[0.5, 2.0])).amax() < 1e-15);
    }
}
