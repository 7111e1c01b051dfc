use std::io::Write;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::run::TraceMeta;
use crate::error::{Error, Result};
use crate::trace::{Event, Trace};

/// Smallest gap drawn on the log axis.
const GAP_FLOOR: f64 = 1e-16;

/// A trace file together with its metadata sidecar.
#[derive(Debug, Clone)]
pub struct LoadedTrace {
    pub label: String,
    pub meta: TraceMeta,
    pub trace: Trace,
}

/// Load `<stem>.csv` and `<stem>.meta.json`.
pub fn load_trace(path: &Path) -> Result<LoadedTrace> {
    let trace = Trace::load(path)?;
    let meta_path = path.with_extension("meta.json");
    let text = std::fs::read_to_string(&meta_path)
        .map_err(|e| Error::Plot(format!("missing metadata {}: {e}", meta_path.display())))?;
    let meta: TraceMeta = serde_json::from_str(&text)?;
    let label = path.file_stem().map_or_else(|| "trace".to_string(), |s| s.to_string_lossy().into_owned());
    Ok(LoadedTrace { label, meta, trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOutput {
    pub svg: PathBuf,
    pub csv: PathBuf,
}

fn check_shared_problem(traces: &[LoadedTrace]) -> Result<()> {
    let Some(first) = traces.first() else {
        return Err(Error::Plot("no traces to plot".into()));
    };
    for t in &traces[1..] {
        if t.meta.problem != first.meta.problem {
            return Err(Error::Plot(format!("{} and {} are on different problems", first.label, t.label)));
        }
    }
    Ok(())
}

/// Merged CSV: `run,step,grad_evals,objective,gap,event`.
pub fn write_merged_csv<W: Write>(traces: &[LoadedTrace], mut w: W) -> Result<()> {
    check_shared_problem(traces)?;
    writeln!(w, "run,step,grad_evals,objective,gap,event")?;
    for t in traces {
        for r in &t.trace.rows {
            let ev = if r.events.is_empty() {
                "none".to_string()
            } else {
                r.events.iter().map(|e| e.as_str()).collect::<Vec<_>>().join(";")
            };
            writeln!(
                w,
                "{},{},{},{:.17e},{:.17e},{}",
                t.label,
                r.step,
                r.grad_evals,
                r.objective,
                r.objective - t.meta.reference,
                ev
            )?;
        }
    }
    Ok(())
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

/// Gap (log scale) against gradient evaluations, one curve per trace, gray
/// vertical markers at refreshes. Writes `<out>/<name>.svg` and
/// `<out>/<name>.merged.csv`.
pub fn plot(traces: &[LoadedTrace], out: &Path, name: &str) -> Result<PlotOutput> {
    check_shared_problem(traces)?;
    std::fs::create_dir_all(out)?;
    let csv = out.join(format!("{name}.merged.csv"));
    let mut buf = Vec::new();
    write_merged_csv(traces, &mut buf)?;
    std::fs::write(&csv, buf)?;

    let curves: Vec<Vec<(f64, f64)>> = traces
        .iter()
        .map(|t| {
            t.trace
                .rows
                .iter()
                .filter(|r| r.objective.is_finite())
                .map(|r| (r.grad_evals as f64, (r.objective - t.meta.reference).max(GAP_FLOOR)))
                .collect()
        })
        .collect();
    let points = curves.iter().flatten();
    let x_max = points.clone().map(|p| p.0).fold(1.0, f64::max);
    let y_min = points.clone().map(|p| p.1).fold(f64::INFINITY, f64::min).min(1.0) * 0.5;
    let y_max = points.map(|p| p.1).fold(GAP_FLOOR, f64::max) * 2.0;

    let svg = out.join(format!("{name}.svg"));
    {
        let root = SVGBackend::new(&svg, (900, 600)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(name, ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(70)
            .build_cartesian_2d(0.0..x_max, (y_min..y_max).log_scale())
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("gradient evaluations")
            .y_desc("objective gap")
            .y_label_formatter(&|v| format!("{v:.0e}"))
            .draw()
            .map_err(plot_err)?;
        let gray = RGBColor(200, 200, 200);
        for t in traces {
            for r in t.trace.rows.iter().filter(|r| r.has(Event::Refresh)) {
                let x = r.grad_evals as f64;
                chart.draw_series(LineSeries::new([(x, y_min), (x, y_max)], gray)).map_err(plot_err)?;
            }
        }
        for (k, (t, c)) in traces.iter().zip(&curves).enumerate() {
            let color = Palette99::pick(k).to_rgba();
            chart
                .draw_series(LineSeries::new(c.iter().copied(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(t.label.clone())
                .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(PlotOutput { svg, csv })
}
