//! Built-in experiment suites.
//!
//! The desk-scale comparison pins one learning rate per optimizer, picked
//! once from [`FIG2_ETA_GRID`] on seed 0: the largest rate whose final
//! objective ends below the initial one. IVON-PoCo shares IVON's rate so the
//! two coincide until the correction starts.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

use super::config::{BuiltProblem, ExperimentConfig, OptimizerSpec, ProblemSpec, RunSpec};
use super::run::{thread_pool, write_run, write_summary, RunResult, RunSummary};
use crate::error::{Error, Result};
use crate::optim::{OptimizerConfig, OptimizerKind};
use crate::trace::Trace;

pub const SUITES: [&str; 3] = ["fig2", "fig2-small", "equivalence"];

/// Coarse grid the pinned rates were chosen from.
pub const FIG2_ETA_GRID: [f64; 7] = [0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0];

/// Gap threshold used by the ordering checks.
pub const FIG2_GAP: f64 = 1e-3;

pub const FIG2_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Pinned rates: (sgd, svrg, ivon, ivon-poco).
pub const FIG2_ETA: [f64; 4] = [0.03, 0.1, 0.003, 0.003];

struct Fig2Shape {
    n: usize,
    d: usize,
    steps: u64,
    start: u64,
    inner: usize,
    eval_every: u64,
}

const FIG2: Fig2Shape = Fig2Shape { n: 5000, d: 100, steps: 20_000, start: 2_000, inner: 1_000, eval_every: 100 };
const FIG2_SMALL: Fig2Shape = Fig2Shape { n: 500, d: 10, steps: 2_000, start: 200, inner: 100, eval_every: 20 };

fn fig2_params(kind: OptimizerKind, eta: f64, inner: usize) -> OptimizerConfig {
    let base = OptimizerConfig { eta, inner_steps: inner, batch_size: 5, ..Default::default() };
    if kind == OptimizerKind::IvonPoco {
        // Antithetic pair at refresh cancels the first-order sample bias of
        // the anchor; θ_out reuses the inner draw (common random numbers).
        OptimizerConfig { mc_samples: 2, antithetic: true, shared_outer_sample: true, ..base }
    } else {
        base
    }
}

fn fig2_configs(name: &str, s: &Fig2Shape, seeds: &[u64]) -> Vec<ExperimentConfig> {
    let problem = ProblemSpec::Logistic { n: s.n, d: s.d, seed: 2024, s0: 1.0, separability: 1.0 };
    let kinds = [OptimizerKind::Sgd, OptimizerKind::Svrg, OptimizerKind::Ivon, OptimizerKind::IvonPoco];
    kinds
        .iter()
        .zip(FIG2_ETA)
        .map(|(&kind, eta)| ExperimentConfig {
            name: name.to_string(),
            problem: problem.clone(),
            optimizer: OptimizerSpec {
                name: kind,
                params: fig2_params(kind, eta, s.inner),
            },
            run: RunSpec {
                total_steps: s.steps,
                correction_start: s.start,
                eval_every: s.eval_every,
                seeds: seeds.to_vec(),
                wallclock: false,
                dump_params: false,
            },
            output_dir: "out".into(),
        })
        .collect()
}

fn equivalence_configs() -> Vec<ExperimentConfig> {
    let problem = ProblemSpec::Logistic { n: 64, d: 8, seed: 7, s0: 1.0, separability: 2.0 };
    [OptimizerKind::Svrg, OptimizerKind::VsgdPoco]
        .into_iter()
        .map(|kind| ExperimentConfig {
            name: "equivalence".into(),
            problem: problem.clone(),
            optimizer: OptimizerSpec {
                name: kind,
                params: OptimizerConfig { eta: 0.05, inner_steps: 50, batch_size: 4, zero_noise: true, ..Default::default() },
            },
            run: RunSpec {
                total_steps: 500,
                correction_start: 0,
                eval_every: 1,
                seeds: vec![0, 1, 2],
                wallclock: false,
                dump_params: false,
            },
            output_dir: "out".into(),
        })
        .collect()
}

/// Configurations of a built-in suite.
pub fn suite_configs(name: &str) -> Result<Vec<ExperimentConfig>> {
    Ok(match name {
        "fig2" => fig2_configs("fig2", &FIG2, &FIG2_SEEDS),
        "fig2-small" => fig2_configs("fig2-small", &FIG2_SMALL, &FIG2_SEEDS),
        "equivalence" => equivalence_configs(),
        _ => return Err(Error::config(format!("unknown suite `{name}` (known: {})", SUITES.join(", ")))),
    })
}

/// All runs of a suite, grouped by configuration (in config order, seeds in
/// list order).
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub configs: Vec<ExperimentConfig>,
    pub runs: Vec<Vec<RunResult>>,
}

impl SuiteResult {
    pub fn runs_of(&self, kind: OptimizerKind) -> Option<&[RunResult]> {
        self.configs.iter().position(|c| c.optimizer.name == kind).map(|i| self.runs[i].as_slice())
    }
}

/// Run a list of configurations, all (config, seed) pairs concurrently.
pub fn run_configs(configs: Vec<ExperimentConfig>) -> Result<SuiteResult> {
    for c in &configs {
        c.validate()?;
    }
    let mut problems: HashMap<String, BuiltProblem> = HashMap::new();
    for c in &configs {
        let key = serde_json::to_string(&c.problem)?;
        if let std::collections::hash_map::Entry::Vacant(e) = problems.entry(key) {
            e.insert(c.problem.build()?);
        }
    }
    let jobs: Vec<(usize, u64)> =
        configs.iter().enumerate().flat_map(|(i, c)| c.run.seeds.iter().map(move |&s| (i, s))).collect();
    let pool = thread_pool()?;
    let results: Vec<RunResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, seed)| {
                let c = &configs[i];
                let built = &problems[&serde_json::to_string(&c.problem)?];
                super::run::run_seed(c, built, seed)
            })
            .collect::<Result<_>>()
    })?;
    let mut runs: Vec<Vec<RunResult>> = configs.iter().map(|_| Vec::new()).collect();
    for ((i, _), r) in jobs.into_iter().zip(results) {
        runs[i].push(r);
    }
    Ok(SuiteResult { configs, runs })
}

/// Run a built-in suite and write its traces and one summary into `out`.
pub fn run_suite(name: &str, out: &Path) -> Result<SuiteResult> {
    let mut configs = suite_configs(name)?;
    for c in &mut configs {
        c.output_dir = out.to_path_buf();
    }
    let res = run_configs(configs)?;
    let mut summary = Vec::new();
    for (c, runs) in res.configs.iter().zip(&res.runs) {
        for r in runs {
            let stem = c.stem(r.meta.seed);
            write_run(out, &stem, r)?;
            summary.push(RunSummary::of(stem, &r.trace));
        }
    }
    write_summary(&out.join(format!("{name}.summary.csv")), &summary)?;
    Ok(res)
}

/// Per-seed outcome of the desk-scale ordering checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Fig2Seed {
    pub seed: u64,
    /// Evaluations to reach the gap after the first refresh (SGD, SVRG).
    pub evals_to_gap: (Option<u64>, Option<u64>),
    /// Steps to reach the gap (IVON, IVON-PoCo).
    pub steps_to_gap: (Option<u64>, Option<u64>),
    /// IVON-PoCo objective ≤ IVON objective at every eval after correction
    /// start.
    pub dominates: bool,
}

impl Fig2Seed {
    /// SVRG strictly ahead of SGD (SGD never reaching counts as infinite).
    pub fn svrg_wins(&self) -> bool {
        matches!(self.evals_to_gap, (a, Some(b)) if a.is_none_or(|a| b < a))
    }

    pub fn poco_wins(&self) -> bool {
        matches!(self.steps_to_gap, (a, Some(b)) if a.is_none_or(|a| b < a))
    }
}

fn row_at(t: &Trace, step: u64) -> Option<f64> {
    t.rows.iter().find(|r| r.step == step).map(|r| r.objective)
}

/// Analyse the SGD / SVRG / IVON / IVON-PoCo runs of a fig2-type suite.
pub fn fig2_report(res: &SuiteResult) -> Result<Vec<Fig2Seed>> {
    let get = |k: OptimizerKind| res.runs_of(k).ok_or_else(|| Error::config(format!("suite has no {k} runs")));
    let (sgd, svrg, ivon, poco) =
        (get(OptimizerKind::Sgd)?, get(OptimizerKind::Svrg)?, get(OptimizerKind::Ivon)?, get(OptimizerKind::IvonPoco)?);
    let mut out = Vec::new();
    for i in 0..sgd.len() {
        let reference = sgd[i].meta.reference;
        let start = svrg[i].meta.correction_start;
        let after = start + 1;
        let evals = |r: &RunResult| r.trace.first_below(reference, FIG2_GAP, after).map(|row| row.grad_evals);
        let steps = |r: &RunResult| r.trace.first_below(reference, FIG2_GAP, 0).map(|row| row.step);
        let dominates = poco[i]
            .trace
            .rows
            .iter()
            .filter(|r| r.step > start)
            .all(|r| row_at(&ivon[i].trace, r.step).is_none_or(|o| r.objective <= o));
        out.push(Fig2Seed {
            seed: sgd[i].meta.seed,
            evals_to_gap: (evals(&sgd[i]), evals(&svrg[i])),
            steps_to_gap: (steps(&ivon[i]), steps(&poco[i])),
            dominates,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_are_valid() {
        for s in SUITES {
            for c in suite_configs(s).unwrap() {
                c.validate().unwrap();
            }
        }
        assert!(suite_configs("nope").is_err());
    }
}
