use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{OptimizerConfig, OptimizerKind};
use crate::oracle::newton_reference;
use crate::problems::{
    make_quadratic, make_synthetic_linreg, make_synthetic_logreg, DataFormat, Dataset, LabelKind, LossOracle, Problem,
    Regularizer,
};

fn one() -> f64 {
    1.0
}

/// Which problem to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    Logistic {
        n: usize,
        d: usize,
        seed: u64,
        s0: f64,
        #[serde(default = "one")]
        separability: f64,
    },
    LeastSquares {
        n: usize,
        d: usize,
        seed: u64,
        s0: f64,
        #[serde(default = "one")]
        noise: f64,
    },
    Quadratic {
        n: usize,
        d: usize,
        seed: u64,
        s0: f64,
    },
    File {
        path: PathBuf,
        format: DataFormat,
        labels: LabelKind,
        #[serde(default)]
        dim: Option<usize>,
        s0: f64,
    },
}

/// A built problem and the objective (mean scale) at its optimum.
#[derive(Debug, Clone)]
pub struct BuiltProblem {
    pub problem: Problem,
    pub reference: f64,
}

impl ProblemSpec {
    pub fn build(&self) -> Result<BuiltProblem> {
        let (problem, reference) = match self {
            ProblemSpec::Logistic { n, d, seed, s0, separability } => {
                let (ds, r) = make_synthetic_logreg(*n, *d, *separability, *seed, *s0)?;
                (Problem::new(LossOracle::Logistic(ds), Regularizer::new(*s0)?), Some(r.mean_objective))
            }
            ProblemSpec::LeastSquares { n, d, seed, s0, noise } => {
                let ds = make_synthetic_linreg(*n, *d, *noise, *seed)?;
                (Problem::new(LossOracle::LeastSquares(ds), Regularizer::new(*s0)?), None)
            }
            ProblemSpec::Quadratic { n, d, seed, s0 } => {
                let q = make_quadratic(*d, *n, *seed)?;
                (Problem::new(LossOracle::Quadratic(q), Regularizer::new(*s0)?), None)
            }
            ProblemSpec::File { path, format, labels, dim, s0 } => {
                let ds = Dataset::load(path, *format, *labels, *dim)?;
                let oracle = match labels {
                    LabelKind::Classification => LossOracle::Logistic(ds),
                    LabelKind::Regression => LossOracle::LeastSquares(ds),
                };
                (Problem::new(oracle, Regularizer::new(*s0)?), None)
            }
        };
        let reference = match reference {
            Some(r) => r,
            None => newton_reference(&problem)?.mean_objective,
        };
        Ok(BuiltProblem { problem, reference })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub name: OptimizerKind,
    #[serde(default)]
    pub params: OptimizerConfig,
}

fn default_eval_every() -> u64 {
    1
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub total_steps: u64,
    #[serde(default)]
    pub correction_start: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Record real wall-clock times (traces are then not reproducible).
    #[serde(default)]
    pub wallclock: bool,
    #[serde(default)]
    pub dump_params: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: ProblemSpec,
    pub optimizer: OptimizerSpec,
    pub run: RunSpec,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("bad experiment config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config("experiment name must be non-empty and contain no path separators"));
        }
        if self.run.total_steps == 0 {
            return Err(Error::config("total_steps must be positive"));
        }
        if self.run.correction_start > self.run.total_steps {
            return Err(Error::config(format!(
                "correction_start {} exceeds total_steps {}",
                self.run.correction_start, self.run.total_steps
            )));
        }
        if self.run.eval_every == 0 {
            return Err(Error::config("eval_every must be positive"));
        }
        if self.run.seeds.is_empty() {
            return Err(Error::config("seeds list is empty"));
        }
        self.optimizer.params.validate()
    }

    /// File stem for one seed's trace.
    pub fn stem(&self, seed: u64) -> String {
        format!("{}-{}-seed{}", self.name, self.optimizer.name, seed)
    }
}

/// Command-line overrides, named after the algorithm symbols.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub rho1: Option<f64>,
    #[arg(long)]
    pub rho2: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub h0: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub mega_factor: Option<usize>,
    #[arg(long)]
    pub inner_steps: Option<usize>,
    #[arg(long)]
    pub correction_start: Option<u64>,
    #[arg(long)]
    pub extra_term_weight: Option<f64>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Replaces the seeds list with this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write full parameter vectors at every eval row.
    #[arg(long)]
    pub dump_params: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        let p = &mut cfg.optimizer.params;
        macro_rules! set {
            ($($f:ident),*) => {$( if let Some(v) = self.$f { p.$f = v; } )*};
        }
        set!(eta, alpha, rho1, rho2, beta1, beta2, h0, xi, inner_steps, extra_term_weight, mc_samples);
        if self.delta.is_some() {
            p.delta = self.delta;
        }
        if self.kappa.is_some() {
            p.kappa = self.kappa;
        }
        if self.mega_factor.is_some() {
            p.mega_factor = self.mega_factor;
        }
        if let Some(c) = self.correction_start {
            cfg.run.correction_start = c;
        }
        if let Some(s) = self.seed {
            cfg.run.seeds = vec![s];
        }
        if self.dump_params {
            cfg.run.dump_params = true;
        }
    }
}
