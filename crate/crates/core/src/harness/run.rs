use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BuiltProblem, ExperimentConfig, ProblemSpec};
use crate::error::{Error, Result};
use crate::optim::{build, drive, OptimizerKind};
use crate::trace::{RecordOptions, Trace};

/// Environment variable capping the number of concurrent runs.
pub const THREADS_ENV: &str = "POCOOPT_THREADS";

/// Thread pool sized by [`THREADS_ENV`] (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::config(format!("cannot start thread pool: {e}")))
}

/// Per-trace metadata written next to each trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub experiment: String,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub problem: ProblemSpec,
    /// Objective (mean scale) at the optimum.
    pub reference: f64,
    pub correction_start: u64,
}

/// One seed of one experiment.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub meta: TraceMeta,
    pub trace: Trace,
}

/// Run one seed in memory.
pub fn run_seed(cfg: &ExperimentConfig, built: &BuiltProblem, seed: u64) -> Result<RunResult> {
    let opts = RecordOptions { eval_every: cfg.run.eval_every, wallclock: cfg.run.wallclock, dump_params: cfg.run.dump_params };
    let mut stepper = build(
        cfg.optimizer.name,
        &built.problem,
        &cfg.optimizer.params,
        cfg.run.correction_start,
        cfg.run.total_steps,
        seed,
    )?;
    let mut trace = drive(&built.problem, stepper.as_mut(), cfg.run.total_steps, opts)?;
    trace.reference = Some(built.reference);
    if trace.diverged() {
        log::warn!("{}: diverged at step {}", cfg.stem(seed), trace.last().map_or(0, |r| r.step));
    }
    Ok(RunResult {
        meta: TraceMeta {
            experiment: cfg.name.clone(),
            optimizer: cfg.optimizer.name,
            seed,
            problem: cfg.problem.clone(),
            reference: built.reference,
            correction_start: cfg.run.correction_start,
        },
        trace,
    })
}

/// Run every seed of `cfg` concurrently on `pool`, in memory. Results come
/// back in seed-list order.
pub fn execute(cfg: &ExperimentConfig, built: &BuiltProblem, pool: &rayon::ThreadPool) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    cfg.optimizer.params.resolve(built.problem.len(), built.problem.reg.s0)?;
    pool.install(|| cfg.run.seeds.par_iter().map(|&s| run_seed(cfg, built, s)).collect())
}

/// Terminal summary of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub stem: String,
    pub steps: u64,
    pub grad_evals: u64,
    pub final_objective: f64,
    pub final_gap: f64,
    pub diverged: bool,
}

impl RunSummary {
    pub fn of(stem: String, trace: &Trace) -> Self {
        let last = trace.last();
        Self {
            stem,
            steps: last.map_or(0, |r| r.step),
            grad_evals: last.map_or(0, |r| r.grad_evals),
            final_objective: trace.final_objective().unwrap_or(f64::NAN),
            final_gap: trace.final_gap().unwrap_or(f64::NAN),
            diverged: trace.diverged(),
        }
    }
}

/// Write a file via a temporary name and rename, so readers never see a
/// half-written trace.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Write `<stem>.csv`, `<stem>.hashes.csv`, `<stem>.meta.json` and, when
/// recorded, `<stem>.params.csv`. Returns the trace path.
pub fn write_run(dir: &Path, stem: &str, run: &RunResult) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    run.trace.write_csv(&mut buf)?;
    let path = dir.join(format!("{stem}.csv"));
    write_atomic(&path, &buf)?;
    buf.clear();
    run.trace.write_hashes(&mut buf)?;
    write_atomic(&dir.join(format!("{stem}.hashes.csv")), &buf)?;
    if run.trace.params.is_some() {
        buf.clear();
        run.trace.write_params(&mut buf)?;
        write_atomic(&dir.join(format!("{stem}.params.csv")), &buf)?;
    }
    let meta = serde_json::to_vec_pretty(&run.meta)?;
    write_atomic(&dir.join(format!("{stem}.meta.json")), &meta)?;
    Ok(path)
}

pub fn write_summary(path: &Path, rows: &[RunSummary]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "run,steps,grad_evals,final_objective,final_gap,diverged")?;
    for r in rows {
        writeln!(
            buf,
            "{},{},{},{:.17e},{:.17e},{}",
            r.stem, r.steps, r.grad_evals, r.final_objective, r.final_gap, r.diverged
        )?;
    }
    write_atomic(path, &buf)
}

/// Validate, build the problem, run all seeds and write traces plus
/// `<name>-<optimizer>.summary.csv` under the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    let built = cfg.problem.build()?;
    let pool = thread_pool()?;
    let runs = execute(cfg, &built, &pool)?;
    let mut summary = Vec::with_capacity(runs.len());
    for run in &runs {
        let stem = cfg.stem(run.meta.seed);
        write_run(&cfg.output_dir, &stem, run)?;
        summary.push(RunSummary::of(stem, &run.trace));
    }
    write_summary(
        &cfg.output_dir.join(format!("{}-{}.summary.csv", cfg.name, cfg.optimizer.name)),
        &summary,
    )?;
    Ok(summary)
}
