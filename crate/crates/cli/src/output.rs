//! CSV and JSONL artifacts of a simulation run.
//!
//! Deterministic columns go to `steps.csv` and `elements.csv`; wall-clock
//! measurements live only in `timing.csv` and `micro_trace.csv`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use cohesim_core::macro_driver::SimulationRun;
use cohesim_core::msnet::write_jsonl;

use crate::CliError;

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| io_err(path, e))
}

pub(crate) fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_run(run: &SimulationRun, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_rows(
        &dir.join("steps.csv"),
        &[
            "step",
            "delta_mm",
            "reaction",
            "tm_fraction",
            "crack_root",
            "out_of_range",
            "dt_s",
        ],
        run.records.iter().map(|r| {
            vec![
                r.step.to_string(),
                r.delta.to_string(),
                r.reaction.to_string(),
                r.tm_fraction.to_string(),
                r.crack_root.to_string(),
                r.out_of_range.to_string(),
                r.dt.to_string(),
            ]
        }),
    )?;
    write_rows(
        &dir.join("elements.csv"),
        &[
            "step",
            "element",
            "model",
            "jump_norm",
            "t1",
            "t2",
            "t3",
            "traction_norm",
            "mean_damage",
            "iterations",
        ],
        run.records.iter().flat_map(|r| {
            r.elements.iter().map(move |e| {
                vec![
                    r.step.to_string(),
                    e.element.to_string(),
                    e.model.to_string(),
                    e.jump_norm.to_string(),
                    e.traction[0].to_string(),
                    e.traction[1].to_string(),
                    e.traction[2].to_string(),
                    e.traction_norm.to_string(),
                    e.mean_damage.to_string(),
                    e.iterations.to_string(),
                ]
            })
        }),
    )?;
    write_rows(
        &dir.join("timing.csv"),
        &["step", "wall_time_s", "predicted_makespan_s", "migrations"],
        run.records.iter().map(|r| {
            let sched = run.schedules.iter().find(|s| s.step == r.step);
            vec![
                r.step.to_string(),
                r.wall_time_s.to_string(),
                sched.map_or(String::new(), |s| s.predicted_makespan.to_string()),
                sched.map_or(0, |s| s.migrations.len()).to_string(),
            ]
        }),
    )?;
    write_rows(
        &dir.join("micro_trace.csv"),
        &["step", "element", "model", "wall_time_s"],
        run.records.iter().flat_map(|r| {
            r.elements.iter().map(move |e| {
                vec![
                    r.step.to_string(),
                    e.element.to_string(),
                    e.model.to_string(),
                    e.wall_time_s.to_string(),
                ]
            })
        }),
    )?;
    let trace_path = dir.join("trace.jsonl");
    let f = File::create(&trace_path).map_err(|e| io_err(&trace_path, e))?;
    write_jsonl(&run.trace, BufWriter::new(f)).map_err(|e| io_err(&trace_path, e))
}
