use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pocoopt::harness::{self, verify, ExperimentConfig, Overrides};
use pocoopt::Error;

/// Variance-reduced variational optimizers: runs, suites, plots, checks.
#[derive(Debug, Parser)]
#[command(name = "pocoopt", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Cmd {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a built-in suite (fig2, fig2-small, equivalence).
    Suite {
        name: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Plot traces sharing one problem: SVG plus merged CSV.
    Plot {
        traces: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value = "comparison")]
        name: String,
    },
    /// Run the property suite.
    Verify,
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { config, out, overrides } => {
            let mut cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            overrides.apply(&mut cfg);
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            match harness::run_experiment(&cfg) {
                Ok(rows) => {
                    for r in rows {
                        println!(
                            "{}: steps {} evals {} objective {:.6e} gap {:.3e}{}",
                            r.stem,
                            r.steps,
                            r.grad_evals,
                            r.final_objective,
                            r.final_gap,
                            if r.diverged { " (diverged)" } else { "" }
                        );
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Cmd::Suite { name, out } => match harness::run_suite(&name, &out) {
            Ok(res) => {
                let runs: usize = res.runs.iter().map(Vec::len).sum();
                println!("suite {name}: {runs} traces written to {}", out.display());
                if name.starts_with("fig2") {
                    if let Ok(report) = harness::fig2_report(&res) {
                        for s in report {
                            println!(
                                "seed {}: evals to gap sgd {:?} svrg {:?}; steps to gap ivon {:?} ivon-poco {:?}; dominates {}",
                                s.seed, s.evals_to_gap.0, s.evals_to_gap.1, s.steps_to_gap.0, s.steps_to_gap.1, s.dominates
                            );
                        }
                    }
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Cmd::Plot { traces, out, name } => {
            let loaded: Result<Vec<_>, _> = traces.iter().map(|p| harness::load_trace(p)).collect();
            match loaded.and_then(|l| harness::plot(&l, &out, &name)) {
                Ok(o) => {
                    println!("wrote {} and {}", o.svg.display(), o.csv.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Cmd::Verify => {
            let results = verify::verify_all();
            let mut all = true;
            for r in &results {
                println!("{r}");
                all &= r.passed;
            }
            if all {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
    }
}
