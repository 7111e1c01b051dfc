//! Optimizer kernels and their run loops.
//!
//! Each algorithm exposes its single-step functions and a [`Stepper`] that
//! owns the run state. [`drive`] advances any stepper and records a
//! [`Trace`]. Step `t` is 1-based; outer refreshes happen at the start of the
//! step they precede.

mod config;
mod ivon;
mod poco;
mod sgd;
mod von;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use config::{OptimizerConfig, Resolved, Schedule};
pub use ivon::{
    ivon_step, ivon_update, IvonParams, IvonPocoMo, IvonRunner, IvonState, IvonStepInfo, CLAMP_FLOOR,
};
pub use poco::{
    blr_step, poco_direction, poco_full_batch_step, poco_inner_step, poco_refresh, vsgd_poco_inner_step,
    vsgd_poco_refresh, BlrRunner, PocoState, VsgdPocoRunner, VsgdPocoState,
};
pub use sgd::{
    alpha_weighted_correction, sgd_step, svrg_inner_step, svrg_refresh, SgdRunner, SvrgRunner, SvrgState,
};
pub use von::{von_poco_inner_step, von_poco_refresh, svrh_terms, VonPocoRunner, VonPocoState, PD_FLOOR};

use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::trace::{Event, RecordOptions, Recorder, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Svrg,
    AlphaSvrg,
    Blr,
    VsgdPoco,
    VonPoco,
    Ivon,
    IvonPoco,
    IvonPocomo,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 9] = [
        OptimizerKind::Sgd,
        OptimizerKind::Svrg,
        OptimizerKind::AlphaSvrg,
        OptimizerKind::Blr,
        OptimizerKind::VsgdPoco,
        OptimizerKind::VonPoco,
        OptimizerKind::Ivon,
        OptimizerKind::IvonPoco,
        OptimizerKind::IvonPocomo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Svrg => "svrg",
            OptimizerKind::AlphaSvrg => "alpha-svrg",
            OptimizerKind::Blr => "blr",
            OptimizerKind::VsgdPoco => "vsgd-poco",
            OptimizerKind::VonPoco => "von-poco",
            OptimizerKind::Ivon => "ivon",
            OptimizerKind::IvonPoco => "ivon-poco",
            OptimizerKind::IvonPocomo => "ivon-pocomo",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown optimizer `{s}`")))
    }
}

/// When the outer loop runs: no correction before `start`, then a refresh
/// every `inner` steps (every step when `inner` is 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cadence {
    pub start: u64,
    pub inner: usize,
}

impl Cadence {
    pub fn active(&self, t: u64) -> bool {
        t > self.start
    }

    pub fn refresh_due(&self, t: u64) -> bool {
        self.active(t) && (self.inner == 0 || (t - 1 - self.start).is_multiple_of(self.inner as u64))
    }

    pub fn first_refresh(&self, t: u64) -> bool {
        t == self.start + 1
    }

    /// Events for a refresh at `t`.
    pub fn refresh_events(&self, t: u64) -> Vec<Event> {
        let mut ev = vec![Event::Refresh];
        if self.start > 0 && self.first_refresh(t) {
            ev.push(Event::CorrectionStart);
        }
        ev
    }
}

/// Outcome of one step: per-example gradient evaluations spent and events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub grad_evals: u64,
    pub events: Vec<Event>,
}

/// A run in progress.
pub trait Stepper {
    /// Current mean (the point at which the objective is reported).
    fn mean(&self) -> &DVector<f64>;
    fn step(&mut self, t: u64) -> Result<StepReport>;
}

/// Run `steps` steps, recording the full objective.
///
/// A non-finite intermediate ends the run with a divergence row; other errors
/// are returned with the step attached.
pub fn drive(problem: &Problem, stepper: &mut dyn Stepper, steps: u64, opts: RecordOptions) -> Result<Trace> {
    let mut rec = Recorder::new(problem, opts);
    if !rec.observe(0, stepper.mean(), Vec::new(), true) {
        return Ok(rec.finish());
    }
    for t in 1..=steps {
        match stepper.step(t) {
            Ok(r) => {
                rec.add_evals(r.grad_evals);
                if !rec.observe(t, stepper.mean(), r.events, t == steps) {
                    break;
                }
            }
            Err(Error::NonFinite { .. }) => {
                rec.observe(t, stepper.mean(), vec![Event::Divergence], true);
                break;
            }
            Err(e) => return Err(e.at_step(t)),
        }
    }
    Ok(rec.finish())
}

/// Build the stepper for `kind`, seeded with `seed`.
pub fn build<'a>(
    kind: OptimizerKind,
    problem: &'a Problem,
    cfg: &OptimizerConfig,
    correction_start: u64,
    total_steps: u64,
    seed: u64,
) -> Result<Box<dyn Stepper + 'a>> {
    let init = DVector::zeros(problem.dim());
    let cadence = Cadence { start: correction_start, inner: cfg.inner_steps };
    Ok(match kind {
        OptimizerKind::Sgd => Box::new(SgdRunner::new(problem, cfg, init, total_steps, seed)?),
        OptimizerKind::Svrg => Box::new(SvrgRunner::new(problem, cfg, init, cadence, 1.0, total_steps, seed)?),
        OptimizerKind::AlphaSvrg => Box::new(SvrgRunner::new(problem, cfg, init, cadence, cfg.alpha, total_steps, seed)?),
        OptimizerKind::Blr => Box::new(BlrRunner::new(problem, cfg, init, total_steps, seed)?),
        OptimizerKind::VsgdPoco => Box::new(VsgdPocoRunner::new(problem, cfg, init, cadence, total_steps, seed)?),
        OptimizerKind::VonPoco => Box::new(VonPocoRunner::new(problem, cfg, init, cadence, total_steps, seed)?),
        OptimizerKind::Ivon => Box::new(IvonRunner::plain(problem, cfg, init, total_steps, seed)?),
        OptimizerKind::IvonPoco => {
            let c = OptimizerConfig { rho1: 0.0, rho2: 0.0, ..cfg.clone() };
            Box::new(IvonRunner::corrected(problem, &c, init, cadence, total_steps, seed)?)
        }
        OptimizerKind::IvonPocomo => Box::new(IvonRunner::corrected(problem, cfg, init, cadence, total_steps, seed)?),
    })
}

pub(crate) fn check_finite(v: &DVector<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what, step: None })
    }
}

pub(crate) fn noise_for(cfg: &OptimizerConfig, seed: u64) -> crate::rng::NoiseStream {
    if cfg.zero_noise {
        crate::rng::NoiseStream::zeroed()
    } else {
        crate::rng::NoiseStream::new(seed).with_antithetic(cfg.antithetic)
    }
}
