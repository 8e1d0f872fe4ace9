//! Append-only JSON Lines result store and the part registry next to it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use pressopt_core::space::{sorted_unique, ParamKind, ParameterSpec, Range};
use pressopt_core::{DesignPoint, NamedValues, TARGET_NAMES};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const PARTS_FILE: &str = "parts.json";
const SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobSource {
    Automated,
    Human,
    InitialPredictor,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobMeta {
    pub iteration: usize,
    pub cycle: usize,
    pub walltime_s: f64,
    pub energy_j: f64,
    pub progress: f64,
    pub terminated_early: bool,
    pub source: JobSource,
    /// The backend failed; `targets` is empty and `error` says why.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub part_id: String,
    pub inputs: DesignPoint,
    pub targets: NamedValues,
    pub meta: JobMeta,
}

impl SimulationRecord {
    /// Completed, non-failed records are the only ones used for training.
    pub fn is_complete(&self) -> bool {
        !self.meta.failed && !self.meta.terminated_early
    }

    /// L1..L7 in order, if all present.
    pub fn target_vector(&self) -> Option<[f64; 7]> {
        let mut out = [0.0; 7];
        for (j, name) in TARGET_NAMES.iter().enumerate() {
            out[j] = self.targets.get(name)?;
        }
        Some(out)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::InvalidRecord(format!("{field}: {msg}")));
        let m = &self.meta;
        if !(0.0..=1.0).contains(&m.progress) {
            return bad("meta.progress", format!("{} is outside [0, 1]", m.progress));
        }
        if m.terminated_early && m.progress >= 1.0 {
            return bad("meta.terminated_early", "set on a job that reached progress 1".into());
        }
        if !(m.walltime_s >= 0.0) {
            return bad("meta.walltime_s", format!("{} is negative", m.walltime_s));
        }
        if !(m.energy_j >= 0.0) {
            return bad("meta.energy_j", format!("{} is negative", m.energy_j));
        }
        for (name, v) in self.inputs.iter() {
            if !v.is_finite() {
                return bad(&format!("inputs.{name}"), format!("{v} is not finite"));
            }
        }
        if m.failed {
            return Ok(());
        }
        let mut sum = 0.0;
        for name in TARGET_NAMES {
            let Some(v) = self.targets.get(name) else {
                return bad(&format!("targets.{name}"), "missing".into());
            };
            if !(0.0..=100.0).contains(&v) {
                return bad(&format!("targets.{name}"), format!("{v} is outside [0, 100]"));
            }
            sum += v;
        }
        let partial = m.terminated_early && m.progress < 1.0;
        if !partial && (sum - 100.0).abs() > SUM_TOL {
            return bad("targets", format!("L1..L7 sum to {sum}, expected 100"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    #[default]
    All,
    Complexity,
    Part,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataFilter {
    pub mode: FilterMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complexity_band: Option<(f64, f64)>,
}

impl DataFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn part(id: &str) -> Self {
        Self {
            mode: FilterMode::Part,
            part_id: Some(id.to_string()),
            complexity_band: None,
        }
    }

    pub fn complexity(low: f64, high: f64) -> Self {
        Self {
            mode: FilterMode::Complexity,
            part_id: None,
            complexity_band: Some((low, high)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            FilterMode::Part if self.part_id.is_none() => Err(Error::Config("part filter needs a part_id".into())),
            FilterMode::Complexity => match self.complexity_band {
                Some((lo, hi)) if lo <= hi => Ok(()),
                _ => Err(Error::Config("complexity filter needs a band with low <= high".into())),
            },
            _ => Ok(()),
        }
    }

    pub fn apply(&self, records: Vec<SimulationRecord>, parts: &PartRegistry) -> Result<Vec<SimulationRecord>> {
        self.validate()?;
        Ok(match self.mode {
            FilterMode::All => records,
            FilterMode::Part => {
                let id = self.part_id.as_deref().expect("validated");
                records.into_iter().filter(|r| r.part_id == id).collect()
            }
            FilterMode::Complexity => {
                let (lo, hi) = self.complexity_band.expect("validated");
                records
                    .into_iter()
                    .filter(|r| parts.complexity(&r.part_id).is_some_and(|c| lo <= c && c <= hi))
                    .collect()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartInfo {
    pub complexity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud_path: Option<PathBuf>,
}

/// `parts.json`: part id → complexity and point-cloud path.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartRegistry {
    pub parts: BTreeMap<String, PartInfo>,
}

impl PartRegistry {
    /// Reads the registry; a missing file is an empty registry. Relative
    /// cloud paths are resolved against the registry's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::default()),
            Err(e) => return Err(Error::io(path, e)),
        };
        let mut reg: PartRegistry =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for info in reg.parts.values_mut() {
            if let Some(p) = &info.cloud_path {
                if p.is_relative() {
                    info.cloud_path = Some(base.join(p));
                }
            }
        }
        Ok(reg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("registry serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn complexity(&self, part: &str) -> Option<f64> {
        self.parts.get(part).map(|p| p.complexity)
    }
}

/// The result file. Appends go through one lock and land as whole lines.
#[derive(Debug)]
pub struct ResultStore {
    path: PathBuf,
    writer: Mutex<Writer>,
}

#[derive(Debug)]
struct Writer {
    file: File,
    count: usize,
    schema: Option<BTreeSet<String>>,
}

impl ResultStore {
    /// Opens (creating if needed) a store at `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let existing = read_records(&path)?;
        let schema = existing.first().map(|r| r.inputs.names().map(String::from).collect());
        Ok(Self {
            writer: Mutex::new(Writer {
                file,
                count: existing.len(),
                schema,
            }),
            path,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.writer.lock().expect("store lock").count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Validates and appends one record, returning its index.
    pub fn append(&self, record: &SimulationRecord) -> Result<usize> {
        record.validate()?;
        let mut w = self.writer.lock().expect("store lock");
        let names: BTreeSet<String> = record.inputs.names().map(String::from).collect();
        if let Some(schema) = &w.schema {
            if let Some(extra) = names.difference(schema).next() {
                return Err(Error::InvalidRecord(format!("inputs.{extra}: not in the store's parameter schema")));
            }
            if let Some(missing) = schema.difference(&names).next() {
                return Err(Error::InvalidRecord(format!("inputs.{missing}: missing")));
            }
        }
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        let before = w.file.metadata().map_err(|e| Error::io(&self.path, e))?.len();
        if let Err(e) = w.file.write_all(line.as_bytes()).and_then(|_| w.file.sync_data()) {
            let _ = w.file.set_len(before);
            return Err(Error::io(&self.path, e));
        }
        if w.schema.is_none() {
            w.schema = Some(names);
        }
        w.count += 1;
        Ok(w.count - 1)
    }

    /// All records in file order.
    pub fn records(&self) -> Result<Vec<SimulationRecord>> {
        let _guard = self.writer.lock().expect("store lock");
        read_records(&self.path)
    }

    pub fn query(&self, filter: &DataFilter, parts: &PartRegistry) -> Result<Vec<SimulationRecord>> {
        filter.apply(self.records()?, parts)
    }

    pub fn observed_ranges(&self, filter: &DataFilter, parts: &PartRegistry, specs: &[ParameterSpec]) -> Result<Vec<Range>> {
        observed_ranges(&self.query(filter, parts)?, specs)
    }
}

/// Parses a JSON Lines file; blank lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<SimulationRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Min/max per continuous parameter and the sorted value set per discrete
/// one, over the given records.
pub fn observed_ranges(records: &[SimulationRecord], specs: &[ParameterSpec]) -> Result<Vec<Range>> {
    if records.is_empty() {
        return Err(pressopt_core::Error::NoObservations.into());
    }
    specs
        .iter()
        .map(|spec| {
            let values = records
                .iter()
                .map(|r| {
                    r.inputs
                        .get(&spec.name)
                        .ok_or_else(|| Error::InvalidRecord(format!("inputs.{}: missing", spec.name)))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(match spec.kind {
                ParamKind::Continuous => Range::Interval {
                    lo: values.iter().copied().fold(f64::INFINITY, f64::min),
                    hi: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                },
                ParamKind::Discrete => Range::Values(sorted_unique(values)),
            })
        })
        .collect()
}
