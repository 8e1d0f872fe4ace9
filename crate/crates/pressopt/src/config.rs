//! Run configuration file (JSON).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use pressopt_core::acquisition::{EiMethod, Strategy, TargetSpec, DEFAULT_N_MC};
use pressopt_core::gp::SurrogateConfig;
use pressopt_core::initial::InitialPredictorConfig;
use pressopt_core::moe::{EncoderConfig, GatingMode, DEFAULT_CUTOFF};
use pressopt_core::policy::{EarlyTermination, EndConditions};
use pressopt_core::press::PressModel;
use pressopt_core::space::{Generation, Range, LinearLayout, ParameterSpec, DEFAULT_EXPANSION, DEFAULT_GRID_BOUND, DEFAULT_LINEAR_STEPS};
use pressopt_core::{NamedValues, TARGET_NAMES};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::ExternalConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub part_id: String,
    pub parameters: Vec<ParameterSpec>,
    #[serde(default)]
    pub targets: TargetSpec,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    #[serde(default)]
    pub candidates: CandidateConfig,
    #[serde(default, rename = "loop")]
    pub run: LoopConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub moe: MoeConfig,
    #[serde(default)]
    pub initial_predictor: InitialConfig,
}

/// Where candidate ranges come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeSource {
    /// Ranges of the training rows, widened by the expansion factor and
    /// clipped to the constraints. Falls back to the constraints while
    /// there are no training rows.
    #[default]
    Observed,
    /// Constraint bounds and value sets only.
    Constraints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateConfig {
    pub method: Generation,
    pub n_star: usize,
    pub layout: LinearLayout,
    /// Grid steps per continuous parameter for the combination method.
    pub steps: usize,
    pub cap: Option<usize>,
    pub grid_bound: u128,
    pub expansion: f64,
    pub range_source: RangeSource,
    pub batch_size: usize,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        Self {
            method: Generation::Linear,
            n_star: DEFAULT_LINEAR_STEPS,
            layout: LinearLayout::Permuted,
            steps: 10,
            cap: None,
            grid_bound: DEFAULT_GRID_BOUND,
            expansion: DEFAULT_EXPANSION,
            range_source: RangeSource::Observed,
            batch_size: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Automated,
    HumanGuided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub p: usize,
    pub strategy: Strategy,
    pub i_moe: usize,
    pub max_iterations: usize,
    pub end_conditions: EndConditions,
    pub early_termination: EarlyTermination,
    /// Also train on rows of early-terminated jobs, using their partial targets.
    pub train_on_partial: bool,
    pub mode: Mode,
    pub seed: u64,
    pub ei: EiMethod,
    pub n_mc: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            p: 1,
            strategy: Strategy::default(),
            i_moe: 0,
            max_iterations: 25,
            end_conditions: EndConditions::default(),
            early_termination: EarlyTermination::default(),
            train_on_partial: false,
            mode: Mode::Automated,
            seed: 0,
            ei: EiMethod::Marginal,
            n_mc: DEFAULT_N_MC,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    VirtualPress {
        #[serde(default)]
        model: PressModel,
        /// Sleep through each step's synthetic walltime.
        #[serde(default)]
        realtime: bool,
    },
    External(ExternalConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::VirtualPress {
            model: PressModel::default(),
            realtime: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Shared result file.
    pub results: PathBuf,
    /// Part registry.
    pub parts: PathBuf,
    /// Per-run state and history live in `<runs>/<run_id>/`.
    pub runs: PathBuf,
    /// Half-width of the complexity band around the part's complexity.
    pub complexity_tolerance: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            results: "results.jsonl".into(),
            parts: "parts.json".into(),
            runs: "runs".into(),
            complexity_tolerance: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoeConfig {
    pub gating: GatingMode,
    pub cutoff: f64,
    pub encoder: EncoderConfig,
    /// Parts allowed to act as experts; all registered parts by default.
    pub experts: Option<Vec<String>>,
}

impl Default for MoeConfig {
    fn default() -> Self {
        Self {
            gating: GatingMode::Soft,
            cutoff: DEFAULT_CUTOFF,
            encoder: EncoderConfig::default(),
            experts: None,
        }
    }
}

/// Start the run from the initial predictor instead of a random candidate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub enabled: bool,
    /// Fixed design values fed to the predictor (not optimized).
    pub fixed: NamedValues,
    pub training: InitialPredictorConfig,
}

impl RunConfig {
    /// Reads and validates a config file. Relative data paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.results);
        fix(&mut self.data.parts);
        fix(&mut self.data.runs);
        if let BackendConfig::External(ext) = &mut self.backend {
            fix(&mut ext.template);
            if let Some(d) = ext.config_dir.as_mut() {
                fix(d);
            }
            if let Some(d) = ext.work_dir.as_mut() {
                fix(d);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.part_id.is_empty() {
            return bad("part_id must not be empty".into());
        }
        if self.parameters.is_empty() {
            return bad("at least one parameter is required".into());
        }
        let mut seen = BTreeSet::new();
        for spec in &self.parameters {
            if !seen.insert(spec.name.as_str()) {
                return bad(format!("parameter {} is listed twice", spec.name));
            }
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        let core = |r: pressopt_core::Result<()>| r.map_err(|e| Error::Config(e.to_string()));
        core(self.targets.validate())?;
        if self.targets.len() != TARGET_NAMES.len() {
            return bad(format!("targets need {} entries, got {}", TARGET_NAMES.len(), self.targets.len()));
        }
        core(self.surrogate.validate())?;
        let l = &self.run;
        if l.p == 0 {
            return bad("loop.p must be at least 1".into());
        }
        if l.max_iterations == 0 {
            return bad("loop.max_iterations must be at least 1".into());
        }
        if l.n_mc == 0 {
            return bad("loop.n_mc must be at least 1".into());
        }
        core(l.end_conditions.validate())?;
        core(l.early_termination.validate())?;
        let c = &self.candidates;
        if c.n_star < 2 || c.steps == 0 || c.batch_size == 0 {
            return bad("candidates need n_star >= 2, steps >= 1 and batch_size >= 1".into());
        }
        if !(c.expansion >= 0.0) {
            return bad(format!("candidates.expansion must be >= 0, got {}", c.expansion));
        }
        if !(0.0..=1.0).contains(&self.moe.cutoff) {
            return bad(format!("moe.cutoff must be in [0, 1], got {}", self.moe.cutoff));
        }
        if let BackendConfig::VirtualPress { model, .. } = &self.backend {
            core(model.validate())?;
            let schema = model.schema();
            for spec in &self.parameters {
                let Some(own) = schema.iter().find(|s| s.name == spec.name) else {
                    let known: Vec<&str> = schema.iter().map(|s| s.name.as_str()).collect();
                    return bad(format!("parameter {} is not an input of the virtual press ({})", spec.name, known.join(", ")));
                };
                if own.kind != spec.kind {
                    return bad(format!("parameter {} must be {:?} for the virtual press", spec.name, own.kind));
                }
                let (Ok(domain), Ok(asked)) = (own.constraint_range(), spec.constraint_range()) else {
                    continue;
                };
                let inside = match (&domain, &asked) {
                    (Range::Interval { lo, hi }, Range::Interval { lo: a, hi: b }) => lo <= a && b <= hi,
                    (Range::Values(allowed), Range::Values(vs)) => vs.iter().all(|v| allowed.contains(v)),
                    _ => false,
                };
                if !inside {
                    let (lo, hi) = domain.bounds();
                    return bad(format!("parameter {} constraint lies outside the virtual press domain [{lo}, {hi}]", spec.name));
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.parameters.iter().map(|s| s.name.clone()).collect()
    }
}
