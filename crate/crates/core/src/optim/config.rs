use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{CurvatureEstimator, Family};
use crate::rng::SamplingMode;

/// Learning-rate schedule for the mean step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Schedule {
    #[default]
    Constant,
    /// Cosine decay from `η` to `floor · η` over the run.
    Cosine { floor: f64 },
}

impl Schedule {
    /// Rate at step `t` (1-based) of `total`.
    pub fn rate(&self, eta: f64, t: u64, total: u64) -> f64 {
        match *self {
            Schedule::Constant => eta,
            Schedule::Cosine { floor } => {
                let frac = if total <= 1 { 0.0 } else { (t.saturating_sub(1)) as f64 / (total - 1) as f64 };
                let c = 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
                eta * (floor + (1.0 - floor) * c)
            }
        }
    }
}

/// Hyperparameters shared by all optimizers. Each optimizer reads the
/// fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Mean learning rate `η`.
    pub eta: f64,
    /// Separate rate for the precision / decay part (`β` of VON-PoCo, the
    /// `(1 − η)` factor of PoCo). Defaults to `eta`.
    pub precision_eta: Option<f64>,
    pub schedule: Schedule,
    /// Inner steps `m` between refreshes.
    pub inner_steps: usize,
    /// Mini-batch size `B`.
    pub batch_size: usize,
    /// Mega-batch size as a multiple of `B`; absent means full batch.
    pub mega_factor: Option<usize>,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Weight decay `δ`; defaults to `s₀ / κ`.
    pub delta: Option<f64>,
    /// Effective sample size `κ`; defaults to `N`.
    pub kappa: Option<f64>,
    pub h0: f64,
    /// Clip radius `ξ`.
    pub xi: f64,
    pub rho1: f64,
    pub rho2: f64,
    /// Weight `w` on the extra curvature term of the corrected mean step.
    pub extra_term_weight: f64,
    /// Monte-Carlo samples `K` per natural-gradient or refresh estimate.
    pub mc_samples: usize,
    /// Reuse the inner `ε` for the outer sample inside one step.
    pub shared_outer_sample: bool,
    pub antithetic: bool,
    /// Zero all posterior noise (delta method).
    pub zero_noise: bool,
    pub sampling: SamplingMode,
    pub curvature: CurvatureEstimator,
    /// Posterior family for `blr`.
    pub family: Family,
    /// Floor eigenvalues of the full precision at 1e-8 instead of failing.
    pub pd_guard: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            precision_eta: None,
            schedule: Schedule::Constant,
            inner_steps: 1000,
            batch_size: 5,
            mega_factor: None,
            alpha: 1.0,
            beta1: 0.9,
            beta2: 0.99999,
            delta: None,
            kappa: None,
            h0: 0.1,
            xi: 1e3,
            rho1: 0.0,
            rho2: 0.0,
            extra_term_weight: 0.01,
            mc_samples: 1,
            shared_outer_sample: false,
            antithetic: false,
            zero_noise: false,
            sampling: SamplingMode::Reshuffle,
            curvature: CurvatureEstimator::Reparam,
            family: Family::Diagonal,
            pd_guard: false,
        }
    }
}

/// Problem-dependent values derived from a config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolved {
    pub n: usize,
    pub delta: f64,
    pub kappa: f64,
    /// Absolute mega-batch size `M`.
    pub mega: usize,
    pub precision_eta: f64,
}

fn in_unit(name: &str, v: f64, closed_top: bool) -> Result<()> {
    let ok = v >= 0.0 && if closed_top { v <= 1.0 } else { v < 1.0 };
    if ok {
        Ok(())
    } else {
        let top = if closed_top { "]" } else { ")" };
        Err(Error::config(format!("{name} must lie in [0, 1{top}, got {v}")))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be finite and > 0, got {v}")))
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        positive("eta", self.eta)?;
        if let Some(p) = self.precision_eta {
            positive("precision_eta", p)?;
        }
        in_unit("alpha", self.alpha, true)?;
        in_unit("beta1", self.beta1, false)?;
        in_unit("beta2", self.beta2, false)?;
        if let Some(d) = self.delta {
            positive("delta", d)?;
        }
        if let Some(k) = self.kappa {
            positive("kappa", k)?;
        }
        positive("h0", self.h0)?;
        positive("xi", self.xi)?;
        in_unit("rho1", self.rho1, true)?;
        in_unit("rho2", self.rho2, true)?;
        in_unit("extra_term_weight", self.extra_term_weight, true)?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.mega_factor == Some(0) {
            return Err(Error::config("mega_factor must be >= 1"));
        }
        if self.mc_samples == 0 {
            return Err(Error::config("mc_samples must be >= 1"));
        }
        if let Schedule::Cosine { floor } = self.schedule {
            in_unit("schedule floor", floor, true)?;
        }
        Ok(())
    }

    /// Fill in problem-dependent defaults: `κ = N`, `δ = s₀/κ`, `M`.
    pub fn resolve(&self, n: usize, s0: f64) -> Result<Resolved> {
        self.validate()?;
        if self.batch_size > n {
            return Err(Error::config(format!("batch_size {} exceeds N = {n}", self.batch_size)));
        }
        let kappa = self.kappa.unwrap_or(n as f64);
        let delta = match self.delta {
            Some(d) => d,
            None if s0 > 0.0 => s0 / kappa,
            None => return Err(Error::config("delta must be set when the regularizer strength is 0")),
        };
        let mega = match self.mega_factor {
            None => n,
            Some(f) => {
                let m = f * self.batch_size;
                if m > n {
                    return Err(Error::config(format!("mega-batch size {m} exceeds N = {n}")));
                }
                m
            }
        };
        Ok(Resolved { n, delta, kappa, mega, precision_eta: self.precision_eta.unwrap_or(self.eta) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        OptimizerConfig::default().validate().unwrap();
    }

    #[test]
    fn ranges_enforced() {
        for bad in [
            OptimizerConfig { alpha: 1.5, ..Default::default() },
            OptimizerConfig { beta2: 1.0, ..Default::default() },
            OptimizerConfig { xi: 0.0, ..Default::default() },
            OptimizerConfig { eta: f64::NAN, ..Default::default() },
            OptimizerConfig { mc_samples: 0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn resolve_defaults() {
        let r = OptimizerConfig { mega_factor: Some(10), ..Default::default() }.resolve(1000, 2.0).unwrap();
        assert_eq!(r.kappa, 1000.0);
        assert_eq!(r.delta, 0.002);
        assert_eq!(r.mega, 50);
        assert!(OptimizerConfig { mega_factor: Some(500), ..Default::default() }.resolve(1000, 1.0).is_err());
    }

    #[test]
    fn cosine_hits_floor_at_end() {
        let s = Schedule::Cosine { floor: 0.25 };
        assert_eq!(s.rate(1.0, 1, 100), 1.0);
        assert!((s.rate(1.0, 100, 100) - 0.25).abs() < 1e-15);
        assert_eq!(Schedule::Constant.rate(0.3, 7, 10), 0.3);
    }

    #[test]
    fn json_uses_defaults_for_missing_fields() {
        let c: OptimizerConfig = serde_json::from_str(r#"{"eta": 0.5, "schedule": {"kind": "cosine", "floor": 0.25}}"#).unwrap();
        assert_eq!(c.eta, 0.5);
        assert_eq!(c.batch_size, 5);
        assert!(serde_json::from_str::<OptimizerConfig>(r#"{"etaa": 1}"#).is_err());
    }
}
