//! The ten acceptance criteria, one PASS/FAIL line each.
//!
//! Lines go straight to stderr so they show up without `--nocapture`.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use pocoopt::harness::suites::FIG2_SEEDS;
use pocoopt::harness::verify::{self, CheckOutcome};
use pocoopt::harness::{fig2_report, run_configs, run_suite, suite_configs};

fn report(id: usize, name: &str, passed: bool, detail: &str) -> bool {
    let tag = if passed { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance {id:>2} [{tag}] {name}: {detail}");
    passed
}

fn check(id: usize, c: CheckOutcome) -> bool {
    report(id, c.name, c.passed, &c.detail)
}

fn timed(id: usize, limit: Duration, f: impl FnOnce() -> CheckOutcome) -> bool {
    let t = Instant::now();
    let c = f();
    let el = t.elapsed();
    let ok = c.passed && el < limit;
    report(id, c.name, ok, &format!("{} ({:.2} s, limit {} s)", c.detail, el.as_secs_f64(), limit.as_secs()))
}

fn fig2() -> bool {
    let t = Instant::now();
    let res = run_configs(suite_configs("fig2").expect("suite exists"));
    let el = t.elapsed();
    let report_rows = match res.and_then(|r| fig2_report(&r)) {
        Ok(r) => r,
        Err(e) => return report(8, "fig2", false, &e.to_string()),
    };
    let n = report_rows.len();
    let a = report_rows.iter().filter(|s| s.svrg_wins()).count();
    let b = report_rows.iter().filter(|s| s.poco_wins()).count();
    let c = report_rows.iter().filter(|s| s.dominates).count();
    for s in &report_rows {
        let _ = writeln!(
            std::io::stderr(),
            "    seed {}: evals sgd {:?} svrg {:?}; steps ivon {:?} ivon-poco {:?}; dominates {}",
            s.seed, s.evals_to_gap.0, s.evals_to_gap.1, s.steps_to_gap.0, s.steps_to_gap.1, s.dominates
        );
    }
    let fast = el < Duration::from_secs(300);
    let ok = n == FIG2_SEEDS.len() && a == n && b == n && c >= 4 && fast;
    report(
        8,
        "fig2",
        ok,
        &format!("(a) svrg<sgd {a}/{n}, (b) ivon-poco<ivon {b}/{n}, (c) dominates {c}/{n} ({:.1} s, limit 300 s)", el.as_secs_f64()),
    )
}

fn files(dir: &Path) -> std::io::Result<Vec<(String, Vec<u8>)>> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir)? {
        let e = e?;
        v.push((e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path())?));
    }
    v.sort();
    Ok(v)
}

fn determinism() -> bool {
    let run = || -> Result<(bool, String), Box<dyn std::error::Error>> {
        let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
        run_suite("fig2-small", a.path())?;
        run_suite("fig2-small", b.path())?;
        let (x, y) = (files(a.path())?, files(b.path())?);
        Ok((!x.is_empty() && x == y, format!("{} files compared byte for byte", x.len())))
    };
    match run() {
        Ok((ok, d)) => report(10, "suite-determinism", ok, &d),
        Err(e) => report(10, "suite-determinism", false, &e.to_string()),
    }
}

#[test]
fn acceptance() {
    let results = [
        timed(1, Duration::from_secs(10), || verify::svrg_equivalence(10, 500)),
        check(2, verify::poco_identity(20)),
        check(3, verify::unbiasedness()),
        check(4, verify::svrh_consistency()),
        check(5, verify::newton_one_step()),
        check(6, verify::ivon_reduction(2000)),
        check(7, verify::fd_suite(50)),
        fig2(),
        check(9, verify::positivity_clipping(20, 10_000)),
        determinism(),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    let _ = writeln!(std::io::stderr(), "acceptance: {passed}/{} criteria passed", results.len());
    assert_eq!(passed, results.len());
}
