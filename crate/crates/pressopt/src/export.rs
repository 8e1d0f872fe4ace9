//! CSV plot data from a finished (or running) run directory.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use pressopt_core::TARGET_NAMES;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::runner::{RunFile, HISTORY_FILE, STATE_FILE};
use crate::store::{read_records, SimulationRecord};

pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ExportKind {
    /// iteration, cycle, source, progress, terminated_early, failed, L1..L7
    TargetsVsIterations,
    /// cycle, ei_sum, best_value
    EiSumVsIterations,
    /// iteration, parameters..., L1..L7, objective
    InputsVsTarget,
    /// iteration, cycle, walltime_s, energy_j, cumulative_walltime_s, cumulative_energy_j
    EnergyVsIterations,
}

pub const KINDS: [ExportKind; 4] = [
    ExportKind::TargetsVsIterations,
    ExportKind::EiSumVsIterations,
    ExportKind::InputsVsTarget,
    ExportKind::EnergyVsIterations,
];

impl ExportKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExportKind::TargetsVsIterations => "targets_vs_iterations",
            ExportKind::EiSumVsIterations => "ei_sum_vs_iterations",
            ExportKind::InputsVsTarget => "inputs_vs_target",
            ExportKind::EnergyVsIterations => "energy_vs_iterations",
        }
    }
}

impl fmt::Display for ExportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KINDS.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = KINDS.iter().map(|k| k.as_str()).collect();
            Error::Config(format!("unknown export kind {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

/// The pieces of a run directory the exports read.
#[derive(Debug, Clone)]
pub struct RunData {
    pub run: RunFile,
    pub config: RunConfig,
    pub history: Vec<SimulationRecord>,
}

pub fn load_run(dir: &Path) -> Result<RunData> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
    };
    let run: RunFile = serde_json::from_str(&read(STATE_FILE)?).map_err(|e| Error::Config(format!("{STATE_FILE}: {e}")))?;
    let config: RunConfig = serde_json::from_str(&read(CONFIG_FILE)?).map_err(|e| Error::Config(format!("{CONFIG_FILE}: {e}")))?;
    let history = read_records(&dir.join(HISTORY_FILE))?;
    Ok(RunData { run, config, history })
}

/// Shortest round-trip text, in exponent form for very small or large values.
fn float(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

fn num(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

pub fn export_csv(kind: ExportKind, data: &RunData) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    let targets = |r: &SimulationRecord| TARGET_NAMES.iter().map(|t| num(r.targets.get(t))).collect::<Vec<_>>();
    match kind {
        ExportKind::TargetsVsIterations => {
            let mut header = vec!["iteration", "cycle", "source", "progress", "terminated_early", "failed"];
            header.extend(TARGET_NAMES);
            w.write_record(&header).map_err(csv_err)?;
            for r in &data.history {
                let source = serde_json::to_value(r.meta.source).expect("source serializes");
                let mut row = vec![
                    r.meta.iteration.to_string(),
                    r.meta.cycle.to_string(),
                    source.as_str().unwrap_or_default().to_string(),
                    float(r.meta.progress),
                    r.meta.terminated_early.to_string(),
                    r.meta.failed.to_string(),
                ];
                row.extend(targets(r));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
        ExportKind::EiSumVsIterations => {
            w.write_record(["cycle", "ei_sum", "best_value"]).map_err(csv_err)?;
            let s = &data.run.state;
            for (c, ei) in s.ei_sum_history.iter().enumerate() {
                let best = s.best_history.get(c).copied().flatten();
                w.write_record([c.to_string(), num(*ei), num(best)]).map_err(csv_err)?;
            }
        }
        ExportKind::InputsVsTarget => {
            let names = data.config.parameter_names();
            let mut header: Vec<&str> = vec!["iteration"];
            header.extend(names.iter().map(String::as_str));
            header.extend(TARGET_NAMES);
            header.push("objective");
            w.write_record(&header).map_err(csv_err)?;
            for r in &data.history {
                let mut row = vec![r.meta.iteration.to_string()];
                row.extend(names.iter().map(|n| num(r.inputs.get(n))));
                row.extend(targets(r));
                let objective = r
                    .target_vector()
                    .filter(|_| r.is_complete())
                    .map(|y| data.config.targets.scalarize(&y));
                row.push(num(objective));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
        ExportKind::EnergyVsIterations => {
            w.write_record(["iteration", "cycle", "walltime_s", "energy_j", "cumulative_walltime_s", "cumulative_energy_j"])
                .map_err(csv_err)?;
            let (mut wall, mut energy) = (0.0, 0.0);
            for r in &data.history {
                wall += r.meta.walltime_s;
                energy += r.meta.energy_j;
                w.write_record([
                    r.meta.iteration.to_string(),
                    r.meta.cycle.to_string(),
                    float(r.meta.walltime_s),
                    float(r.meta.energy_j),
                    float(wall),
                    float(energy),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn export_to_file(kind: ExportKind, run_dir: &Path, out: &Path) -> Result<usize> {
    let data = load_run(run_dir)?;
    let text = export_csv(kind, &data)?;
    fs::write(out, &text).map_err(|e| Error::io(out, e))?;
    Ok(text.lines().count().saturating_sub(1))
}
