//! Per-run convergence traces and their CSV form.
//!
//! The objective column is the mean-scaled full objective
//! `(Σ ℓ_i(m) + ℓ₀(m)) / N` evaluated exactly at the current mean.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::problems::Problem;

pub const CSV_HEADER: &str = "step,grad_evals,objective,wall_ns,event";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Refresh,
    CorrectionStart,
    Clamp,
    Divergence,
}

impl Event {
    pub fn as_str(self) -> &'static str {
        match self {
            Event::Refresh => "refresh",
            Event::CorrectionStart => "correction_start",
            Event::Clamp => "clamp",
            Event::Divergence => "divergence",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "refresh" => Event::Refresh,
            "correction_start" => Event::CorrectionStart,
            "clamp" => Event::Clamp,
            "divergence" => Event::Divergence,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub grad_evals: u64,
    pub objective: f64,
    pub wall_ns: u64,
    pub events: Vec<Event>,
    pub param_hash: u64,
}

impl TraceRow {
    pub fn has(&self, e: Event) -> bool {
        self.events.contains(&e)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    /// Full parameter vectors per row, when requested.
    pub params: Option<Vec<DVector<f64>>>,
    /// Mean-scaled reference optimum, when known.
    pub reference: Option<f64>,
}

/// Stable 64-bit digest of a parameter vector (SHA-256 of the little-endian
/// bytes, first eight bytes).
pub fn param_hash(theta: &DVector<f64>) -> u64 {
    let mut h = Sha256::new();
    for v in theta.iter() {
        h.update(v.to_le_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
}

fn events_field(events: &[Event]) -> String {
    if events.is_empty() {
        "none".to_string()
    } else {
        events.iter().map(|e| e.as_str()).collect::<Vec<_>>().join(";")
    }
}

impl Trace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.rows.last().map(|r| r.objective)
    }

    /// Final objective minus the reference optimum.
    pub fn final_gap(&self) -> Option<f64> {
        Some(self.final_objective()? - self.reference?)
    }

    pub fn diverged(&self) -> bool {
        self.rows.last().is_some_and(|r| r.has(Event::Divergence))
    }

    /// First row whose objective is within `gap` of the reference, after
    /// `after_step`.
    pub fn first_below(&self, reference: f64, gap: f64, after_step: u64) -> Option<&TraceRow> {
        self.rows
            .iter()
            .find(|r| r.step >= after_step && r.objective.is_finite() && r.objective - reference <= gap)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{:.17e},{},{}",
                r.step,
                r.grad_evals,
                r.objective,
                r.wall_ns,
                events_field(&r.events)
            )?;
        }
        Ok(())
    }

    /// Sidecar with one parameter hash per row.
    pub fn write_hashes<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,param_hash")?;
        for r in &self.rows {
            writeln!(w, "{},{:016x}", r.step, r.param_hash)?;
        }
        Ok(())
    }

    /// Full parameter vectors, one row per trace row.
    pub fn write_params<W: Write>(&self, mut w: W) -> Result<()> {
        let Some(params) = &self.params else {
            return Err(Error::config("trace was recorded without parameter dumps"));
        };
        for (r, p) in self.rows.iter().zip(params) {
            write!(w, "{}", r.step)?;
            for v in p.iter() {
                write!(w, ",{v:.17e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Parse a trace CSV. Parameter hashes are not part of the file and come
    /// back as zero.
    pub fn read_csv(text: &str) -> Result<Trace> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            _ => return Err(Error::Parse { line: 1, msg: format!("expected header `{CSV_HEADER}`") }),
        }
        let mut rows = Vec::new();
        for (no, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse { line: no + 1, msg: msg.to_string() };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let events = if f[4] == "none" {
                Vec::new()
            } else {
                f[4].split(';').map(|e| Event::parse(e).ok_or_else(|| bad("unknown event"))).collect::<Result<_>>()?
            };
            rows.push(TraceRow {
                step: f[0].parse().map_err(|_| bad("bad step"))?,
                grad_evals: f[1].parse().map_err(|_| bad("bad grad_evals"))?,
                objective: f[2].parse().map_err(|_| bad("bad objective"))?,
                wall_ns: f[3].parse().map_err(|_| bad("bad wall_ns"))?,
                events,
                param_hash: 0,
            });
        }
        Ok(Trace { rows, params: None, reference: None })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Trace> {
        Trace::read_csv(&std::fs::read_to_string(path)?)
    }
}

/// Recording options.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordOptions {
    pub eval_every: u64,
    /// Write real wall-clock times; off keeps trace files deterministic.
    pub wallclock: bool,
    pub dump_params: bool,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self { eval_every: 1, wallclock: false, dump_params: false }
    }
}

/// Builds a [`Trace`], evaluating the full objective at step 0, every
/// `eval_every` steps, at event steps and at the final step.
pub struct Recorder<'a> {
    problem: &'a Problem,
    opts: RecordOptions,
    start: Instant,
    evals: u64,
    trace: Trace,
}

impl<'a> Recorder<'a> {
    pub fn new(problem: &'a Problem, opts: RecordOptions) -> Self {
        let params = opts.dump_params.then(Vec::new);
        Self { problem, opts, start: Instant::now(), evals: 0, trace: Trace { rows: Vec::new(), params, reference: None } }
    }

    pub fn add_evals(&mut self, n: u64) {
        self.evals += n;
    }

    pub fn evals(&self) -> u64 {
        self.evals
    }

    /// Record a row if due. Returns `false` once the objective is non-finite
    /// (a divergence row has then been written).
    pub fn observe(&mut self, step: u64, theta: &DVector<f64>, mut events: Vec<Event>, force: bool) -> bool {
        let due = force || !events.is_empty() || step.is_multiple_of(self.opts.eval_every.max(1));
        if !due {
            return true;
        }
        let objective = if theta.iter().all(|v| v.is_finite()) { self.problem.mean_objective(theta) } else { f64::NAN };
        let finite = objective.is_finite();
        if !finite && !events.contains(&Event::Divergence) {
            events.push(Event::Divergence);
        }
        let wall_ns = if self.opts.wallclock { self.start.elapsed().as_nanos() as u64 } else { 0 };
        self.trace.rows.push(TraceRow {
            step,
            grad_evals: self.evals,
            objective,
            wall_ns,
            events,
            param_hash: param_hash(theta),
        });
        if let Some(p) = &mut self.trace.params {
            p.push(theta.clone());
        }
        finite
    }

    /// Whether a row for `step` has already been written.
    pub fn recorded(&self, step: u64) -> bool {
        self.trace.rows.last().is_some_and(|r| r.step == step)
    }

    pub fn finish(self) -> Trace {
        self.trace
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let t = Trace {
            rows: vec![
                TraceRow { step: 0, grad_evals: 0, objective: 0.693, wall_ns: 0, events: vec![], param_hash: 1 },
                TraceRow {
                    step: 5,
                    grad_evals: 125,
                    objective: 0.25,
                    wall_ns: 0,
                    events: vec![Event::Refresh, Event::CorrectionStart],
                    param_hash: 2,
                },
            ],
            params: None,
            reference: None,
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,grad_evals,objective,wall_ns,event\n"));
        assert!(text.contains("refresh;correction_start"));
        let back = Trace::read_csv(&text).unwrap();
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.rows[1].events, vec![Event::Refresh, Event::CorrectionStart]);
        assert_eq!(back.rows[0].objective, 0.693);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(param_hash(&a), param_hash(&a.clone()));
        assert_ne!(param_hash(&a), param_hash(&DVector::from_vec(vec![1.0, 2.0000000001])));
    }

    #[test]
    fn bad_header_rejected() {
        assert!(Trace::read_csv("a,b\n1,2\n").is_err());
    }
}
