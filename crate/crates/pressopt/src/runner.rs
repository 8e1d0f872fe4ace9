//! The optimization loop: pick training data, fit, score candidates, run
//! jobs, record results, check end conditions.

use std::collections::VecDeque;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use pressopt_core::acquisition::{ei_marginal, ei_monte_carlo, select_best, select_parallel, AcquisitionScores, EiMethod};
use pressopt_core::gp::{fit, FittedSurrogate, SurrogateConfig, TrainingData};
use pressopt_core::initial::{train_initial_predictor, Example};
use pressopt_core::moe::{gate, mixture_predict, train_encoder, GatingDecision, PointCloud};
use pressopt_core::policy::{evaluate_end_conditions, LoopState, LoopStatus, StopReason};
use pressopt_core::press::Decision;
use pressopt_core::space::{expand_ranges, generate_combination, generate_linear, CandidateSet, Generation, ParamKind, ParameterSpec, Range};
use pressopt_core::{DesignPoint, NamedValues, PosteriorPrediction, TARGET_NAMES};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{ExternalBackend, JobOutcome, SimulationBackend, VirtualPressBackend};
use crate::cloud_io::read_cloud;
use crate::config::{BackendConfig, Mode, RangeSource, RunConfig};
use crate::error::{Error, Result};
use crate::export::CONFIG_FILE;
use crate::profile::{build_profile, AcquisitionProfile};
use crate::store::{observed_ranges, DataFilter, JobMeta, JobSource, PartRegistry, ResultStore, SimulationRecord};

pub const STATE_FILE: &str = "state.json";
pub const HISTORY_FILE: &str = "history.jsonl";
const RAPL_COUNTER: &str = "/sys/class/powercap/intel-rapl:0/energy_uj";

/// Where a cycle's training rows came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    MixtureOfExperts,
    Part,
    Complexity,
    Random,
}

impl DataSource {
    pub fn as_str(self) -> &'static str {
        match self {
            DataSource::MixtureOfExperts => "mixture_of_experts",
            DataSource::Part => "part",
            DataSource::Complexity => "complexity",
            DataSource::Random => "random",
        }
    }
}

/// One field of a rejected design point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectError {
    NotAwaiting,
    Invalid(Vec<FieldError>),
}

/// What readers see: replaced wholesale after every state change.
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub run_id: String,
    pub state: LoopState,
    pub queued: usize,
    pub profile: Option<AcquisitionProfile>,
    pub history: Vec<SimulationRecord>,
    #[serde(skip)]
    pub parameters: Vec<ParameterSpec>,
    /// Ranges human selections are checked against.
    #[serde(skip)]
    pub ranges: Vec<Range>,
}

/// State shared between the loop owner and readers such as the service.
#[derive(Debug)]
pub struct Shared {
    snapshot: RwLock<Arc<Snapshot>>,
    queue: Mutex<VecDeque<DesignPoint>>,
    wake: Condvar,
    stop: AtomicBool,
}

impl Shared {
    fn new(snapshot: Snapshot) -> Self {
        Self {
            snapshot: RwLock::new(Arc::new(snapshot)),
            queue: Mutex::new(VecDeque::new()),
            wake: Condvar::new(),
            stop: AtomicBool::new(false),
        }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn publish(&self, snapshot: Snapshot) {
        *self.snapshot.write().expect("snapshot lock") = Arc::new(snapshot);
    }

    /// Asks the loop to stop; running jobs are stopped at their next step.
    pub fn request_stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
        let _q = self.queue.lock().expect("queue lock");
        self.wake.notify_all();
    }

    pub fn stop_requested(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    /// Queues a human selection for the next cycle.
    pub fn select(&self, point: &NamedValues) -> std::result::Result<(), SelectError> {
        let snap = self.snapshot();
        if snap.state.status != LoopStatus::AwaitingHuman {
            return Err(SelectError::NotAwaiting);
        }
        let point = validate_point(&snap.parameters, &snap.ranges, point).map_err(SelectError::Invalid)?;
        let mut q = self.queue.lock().expect("queue lock");
        q.push_back(point);
        self.wake.notify_all();
        Ok(())
    }

    fn pop(&self) -> Option<DesignPoint> {
        self.queue.lock().expect("queue lock").pop_front()
    }

    fn queued(&self) -> usize {
        self.queue.lock().expect("queue lock").len()
    }

    /// Blocks until a selection is queued or a stop is requested.
    pub fn wait_for_selection(&self) {
        let mut q = self.queue.lock().expect("queue lock");
        while q.is_empty() && !self.stop_requested() {
            q = self.wake.wait(q).expect("queue lock");
        }
    }
}

/// Checks that `point` names exactly the run's parameters and lies in the
/// given ranges. Returns the point reordered to the parameter order.
pub fn validate_point(specs: &[ParameterSpec], ranges: &[Range], point: &NamedValues) -> std::result::Result<DesignPoint, Vec<FieldError>> {
    let mut errors = Vec::new();
    let mut out = NamedValues::new();
    for (spec, range) in specs.iter().zip(ranges) {
        match point.get(&spec.name) {
            None => errors.push(FieldError {
                field: spec.name.clone(),
                message: "missing".into(),
            }),
            Some(v) if !spec.admits(range, v) => errors.push(FieldError {
                field: spec.name.clone(),
                message: match range {
                    Range::Interval { lo, hi } => format!("{v} is outside [{lo}, {hi}]"),
                    Range::Values(vs) => format!("{v} is not one of {vs:?}"),
                },
            }),
            Some(v) => out.set(&spec.name, v),
        }
    }
    for name in point.names() {
        if !specs.iter().any(|s| s.name == name) {
            errors.push(FieldError {
                field: name.to_string(),
                message: "not a parameter of this run".into(),
            });
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}

enum Model {
    Single(Box<FittedSurrogate>),
    Mixture {
        decision: GatingDecision,
        experts: Vec<(String, FittedSurrogate)>,
    },
}

impl Model {
    fn predict(&self, candidates: &CandidateSet, full: bool, batch: usize) -> pressopt_core::Result<PosteriorPrediction> {
        match self {
            Model::Single(m) => m.predict(candidates, full, batch),
            Model::Mixture { decision, experts } => {
                let refs: Vec<(String, &FittedSurrogate)> = experts.iter().map(|(id, m)| (id.clone(), m)).collect();
                mixture_predict(decision, &refs, candidates, batch)
            }
        }
    }
}

/// Everything decided at a cycle boundary, kept while waiting for a human.
struct Prepared {
    source: DataSource,
    training_rows: usize,
    ranges: Vec<Range>,
    candidates: CandidateSet,
    scores: Option<AcquisitionScores>,
    profile: Option<AcquisitionProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleReport {
    pub cycle: usize,
    pub source: DataSource,
    pub training_rows: usize,
    /// Candidate indices dispatched (empty for human selections).
    pub selected: Vec<usize>,
    #[serde(skip)]
    pub candidates: Option<CandidateSet>,
    #[serde(skip)]
    pub scores: Option<AcquisitionScores>,
    pub records: Vec<SimulationRecord>,
    pub status: LoopStatus,
    /// Simulations dispatched so far, this cycle included.
    pub iteration: usize,
    pub ei_sum: Option<f64>,
    pub best: Option<f64>,
}

/// Persistent per-run header plus state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub run_id: String,
    pub config_digest: String,
    pub created_at: u64,
    pub state: LoopState,
}

pub struct Run {
    pub id: String,
    pub config: RunConfig,
    store: Arc<ResultStore>,
    parts: PartRegistry,
    backend: Arc<dyn SimulationBackend>,
    shared: Arc<Shared>,
    run_dir: Option<PathBuf>,
    created_at: u64,
    state: LoopState,
    history: Vec<SimulationRecord>,
    pending: Option<Prepared>,
    gating: Option<Option<GatingDecision>>,
    last_selected: Vec<DesignPoint>,
}

/// First 12 hex digits of the config digest.
pub fn run_id_for(config: &RunConfig) -> String {
    config.digest()[..12].to_string()
}

pub fn build_backend(config: &RunConfig) -> Result<Arc<dyn SimulationBackend>> {
    Ok(match &config.backend {
        BackendConfig::VirtualPress { model, realtime } => {
            let mut b = VirtualPressBackend::new(model.clone())?;
            b.realtime = *realtime;
            Arc::new(b)
        }
        BackendConfig::External(ext) => Arc::new(ExternalBackend::new(ext.clone(), &config.parameters)?),
    })
}

fn derive_seed(seed: u64, stream: u64, cycle: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ (cycle as u64).wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

fn read_energy_counter() -> Option<u64> {
    fs::read_to_string(RAPL_COUNTER).ok()?.trim().parse().ok()
}

impl Run {
    /// Opens the store and registry named in the config, builds the backend
    /// and creates `<runs>/<run_id>/`.
    pub fn create(config: RunConfig) -> Result<Self> {
        let backend = build_backend(&config)?;
        let base = run_id_for(&config);
        let mut id = base.clone();
        let mut k = 1;
        while config.data.runs.join(&id).exists() {
            k += 1;
            id = format!("{base}-{k}");
        }
        let dir = config.data.runs.join(&id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let config_path = dir.join(CONFIG_FILE);
        let text = serde_json::to_string_pretty(&config).expect("config serializes");
        fs::write(&config_path, text + "\n").map_err(|e| Error::io(&config_path, e))?;
        Self::with_backend(config, backend, id, Some(dir))
    }

    pub fn with_backend(config: RunConfig, backend: Arc<dyn SimulationBackend>, id: String, run_dir: Option<PathBuf>) -> Result<Self> {
        config.validate()?;
        let store = Arc::new(ResultStore::open(&config.data.results)?);
        let parts = PartRegistry::load(&config.data.parts)?;
        let run = Self {
            shared: Arc::new(Shared::new(Snapshot {
                run_id: id.clone(),
                state: LoopState::default(),
                queued: 0,
                profile: None,
                history: Vec::new(),
                parameters: config.parameters.clone(),
                ranges: Vec::new(),
            })),
            id,
            store,
            parts,
            backend,
            run_dir,
            created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            state: LoopState::default(),
            history: Vec::new(),
            pending: None,
            gating: None,
            last_selected: Vec::new(),
            config,
        };
        let ranges = run.fallback_ranges()?;
        run.publish(ranges);
        run.persist_state()?;
        Ok(run)
    }

    pub fn shared(&self) -> Arc<Shared> {
        self.shared.clone()
    }

    pub fn state(&self) -> &LoopState {
        &self.state
    }

    pub fn history(&self) -> &[SimulationRecord] {
        &self.history
    }

    pub fn store(&self) -> &ResultStore {
        &self.store
    }

    pub fn run_dir(&self) -> Option<&Path> {
        self.run_dir.as_deref()
    }

    fn publish(&self, ranges: Vec<Range>) {
        self.shared.publish(Snapshot {
            run_id: self.id.clone(),
            state: self.state.clone(),
            queued: self.shared.queued(),
            profile: self.pending.as_ref().and_then(|p| p.profile.clone()).map(|mut p| {
                p.last_selected = self.last_selected.clone();
                p
            }),
            history: self.history.clone(),
            parameters: self.config.parameters.clone(),
            ranges,
        });
    }

    fn current_ranges(&self) -> Vec<Range> {
        match &self.pending {
            Some(p) => p.ranges.clone(),
            None => self.shared.snapshot().ranges.clone(),
        }
    }

    fn persist_state(&self) -> Result<()> {
        let Some(dir) = &self.run_dir else { return Ok(()) };
        let file = RunFile {
            run_id: self.id.clone(),
            config_digest: self.config.digest(),
            created_at: self.created_at,
            state: self.state.clone(),
        };
        let tmp = dir.join(format!("{STATE_FILE}.tmp"));
        let dest = dir.join(STATE_FILE);
        let text = serde_json::to_string_pretty(&file).expect("state serializes");
        fs::write(&tmp, text + "\n").map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))
    }

    fn persist_history(&self, records: &[SimulationRecord]) -> Result<()> {
        let Some(dir) = &self.run_dir else { return Ok(()) };
        let path = dir.join(HISTORY_FILE);
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r).expect("record serializes"));
            text.push('\n');
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))
    }

    fn stop(&mut self, reason: StopReason) -> Result<()> {
        self.state.status = LoopStatus::Stopped(reason);
        info!("run {} stopped: {}", self.id, reason.as_str());
        self.persist_state()?;
        let ranges = self.current_ranges();
        self.publish(ranges);
        Ok(())
    }

    /// Runs cycles until an end condition, a failure or a stop request.
    /// While awaiting a human selection the call blocks.
    pub fn run_to_end(&mut self, mut on_cycle: impl FnMut(&CycleReport)) -> Result<StopReason> {
        loop {
            if let LoopStatus::Stopped(reason) = self.state.status {
                return Ok(reason);
            }
            match self.run_cycle()? {
                Some(report) => on_cycle(&report),
                None => {
                    if self.state.status == LoopStatus::AwaitingHuman {
                        self.shared.wait_for_selection();
                    }
                }
            }
        }
    }

    /// Runs one cycle. Returns `None` when nothing was dispatched (stopped,
    /// or waiting for a human selection).
    pub fn run_cycle(&mut self) -> Result<Option<CycleReport>> {
        if matches!(self.state.status, LoopStatus::Stopped(_)) {
            return Ok(None);
        }
        if self.shared.stop_requested() {
            self.stop(StopReason::Requested)?;
            return Ok(None);
        }
        if self.pending.is_none() {
            self.pending = Some(self.prepare()?);
        }
        let prepared = self.pending.as_ref().expect("prepared above");
        let remaining = self.config.run.max_iterations.saturating_sub(self.state.iteration);
        let mut points: Vec<(DesignPoint, JobSource)> = Vec::new();
        let mut selected = Vec::new();
        match self.config.run.mode {
            Mode::HumanGuided => match self.shared.pop() {
                Some(x) => points.push((x, JobSource::Human)),
                None => {
                    self.state.status = LoopStatus::AwaitingHuman;
                    self.persist_state()?;
                    let ranges = prepared.ranges.clone();
                    self.publish(ranges);
                    return Ok(None);
                }
            },
            Mode::Automated => {
                let k = self.config.run.p.min(remaining).min(prepared.candidates.len()).max(1);
                match &prepared.scores {
                    Some(scores) => {
                        for (i, x) in select_parallel(scores, &prepared.candidates, k, self.config.run.strategy)? {
                            selected.push(i);
                            points.push((x, JobSource::Automated));
                        }
                    }
                    None => {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.run.seed, 2, self.state.cycle));
                        let mut start = 0;
                        if self.state.iteration == 0 && self.config.initial_predictor.enabled {
                            if let Some(x) = self.initial_design(&prepared.ranges) {
                                points.push((x, JobSource::InitialPredictor));
                                start = 1;
                            }
                        }
                        if k > start {
                            for i in sample(&mut rng, prepared.candidates.len(), k - start).into_iter() {
                                selected.push(i);
                                points.push((prepared.candidates.design_point(i), JobSource::Random));
                            }
                        }
                    }
                }
            }
        }
        self.state.status = LoopStatus::Running;
        let prepared = self.pending.take().expect("prepared above");
        let outcomes = self.dispatch(&points);

        let mut records = Vec::with_capacity(points.len());
        let mut failures = 0;
        for (k, ((x, source), outcome)) in points.iter().zip(outcomes).enumerate() {
            let meta = |walltime_s, energy_j, progress, terminated_early| JobMeta {
                iteration: self.state.iteration + k,
                cycle: self.state.cycle,
                walltime_s,
                energy_j,
                progress,
                terminated_early,
                source: *source,
                failed: false,
                error: None,
            };
            let record = match outcome {
                Ok(o) => SimulationRecord {
                    part_id: self.config.part_id.clone(),
                    inputs: x.clone(),
                    targets: o.targets.clone(),
                    meta: meta(o.walltime_s, o.energy_j, o.progress, o.terminated_early),
                },
                Err(e) => {
                    failures += 1;
                    warn!("job {} failed: {e}", self.state.iteration + k);
                    let mut m = meta(0.0, 0.0, 0.0, false);
                    m.failed = true;
                    m.error = Some(e.to_string());
                    SimulationRecord {
                        part_id: self.config.part_id.clone(),
                        inputs: x.clone(),
                        targets: NamedValues::new(),
                        meta: m,
                    }
                }
            };
            let record = match record.validate() {
                Ok(()) => record,
                Err(e) => {
                    failures += 1;
                    warn!("job {} returned an invalid record: {e}", self.state.iteration + k);
                    let mut r = record;
                    r.targets = NamedValues::new();
                    r.meta.failed = true;
                    r.meta.error = Some(e.to_string());
                    r
                }
            };
            self.store.append(&record)?;
            records.push(record);
        }
        self.persist_history(&records)?;

        for r in &records {
            self.state.add_energy(r.meta.energy_j);
            if r.is_complete() {
                if let Some(y) = r.target_vector() {
                    let value = self.config.targets.scalarize(&y);
                    self.state.offer(&r.inputs, &r.targets, value, r.meta.iteration);
                }
            }
        }
        self.state.iteration += points.len();
        self.state.end_cycle(prepared.scores.as_ref().map(|s| s.total()));
        self.history.extend(records.iter().cloned());
        self.last_selected = points.iter().map(|(x, _)| x.clone()).collect();

        let reason = if failures == points.len() {
            Some(StopReason::BackendFailure)
        } else if self.shared.stop_requested() {
            Some(StopReason::Requested)
        } else {
            evaluate_end_conditions(&self.state, &self.config.run.end_conditions, self.config.run.max_iterations)
        };
        if let Some(r) = reason {
            self.state.status = LoopStatus::Stopped(r);
        }
        self.persist_state()?;
        self.publish(prepared.ranges.clone());
        Ok(Some(CycleReport {
            cycle: self.state.cycle - 1,
            source: prepared.source,
            training_rows: prepared.training_rows,
            selected,
            candidates: Some(prepared.candidates),
            scores: prepared.scores,
            records,
            status: self.state.status,
            iteration: self.state.iteration,
            ei_sum: self.state.ei_sum_history.last().copied().flatten(),
            best: self.state.best_so_far.as_ref().map(|b| b.value),
        }))
    }

    fn dispatch(&self, points: &[(DesignPoint, JobSource)]) -> Vec<Result<JobOutcome>> {
        let et = &self.config.run.early_termination;
        let shared = &self.shared;
        let backend = &self.backend;
        let job = |x: &DesignPoint| {
            let mut watcher = |s: &pressopt_core::press::ProgressSnapshot| {
                if shared.stop_requested() {
                    Decision::Stop
                } else {
                    et.check(s)
                }
            };
            backend.run(x, Some(&mut watcher))
        };
        if points.len() == 1 {
            return vec![job(&points[0].0)];
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = points.iter().map(|(x, _)| s.spawn(move || job(x))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Backend("job thread panicked".into()))))
                .collect()
        })
    }

    /// Rows the surrogate may learn from: finished ones, plus early-terminated
    /// ones when `loop.train_on_partial` is set.
    fn trainable(&self, r: &SimulationRecord) -> bool {
        if r.meta.terminated_early {
            self.config.run.train_on_partial && !r.meta.failed && r.target_vector().is_some()
        } else {
            r.is_complete()
        }
    }

    fn complete_rows(&self, pred: impl Fn(&SimulationRecord) -> bool) -> Result<Vec<SimulationRecord>> {
        Ok(self.store.records()?.into_iter().filter(|r| self.trainable(r) && pred(r)).collect())
    }

    /// Constraint ranges, or observed ones for parameters without a
    /// constraint when this part has history.
    fn fallback_ranges(&self) -> Result<Vec<Range>> {
        let specs = &self.config.parameters;
        let own = self.complete_rows(|r| r.part_id == self.config.part_id)?;
        let observed = if own.is_empty() { None } else { Some(observed_ranges(&own, specs)?) };
        specs
            .iter()
            .enumerate()
            .map(|(j, s)| match (s.constraint_range(), &observed) {
                (Ok(r), _) => Ok(r),
                (Err(_), Some(obs)) => Ok(obs[j].clone()),
                (Err(_), None) => Err(Error::Config(format!(
                    "parameter {} has no range: give it a constraint or add history for part {}",
                    s.name, self.config.part_id
                ))),
            })
            .collect()
    }

    fn training_data(&self, rows: &[SimulationRecord]) -> Result<TrainingData> {
        let names = self.config.parameter_names();
        let x: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.inputs.select(&names).ok_or_else(|| Error::InvalidRecord("record lacks a run parameter".into())))
            .collect::<Result<_>>()?;
        let y: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.target_vector().map(|v| v.to_vec()).ok_or_else(|| Error::InvalidRecord("record lacks L1..L7".into())))
            .collect::<Result<_>>()?;
        Ok(TrainingData::from_rows(&x, &y)?)
    }

    fn surrogate_config(&self) -> SurrogateConfig {
        let mut c = self.config.surrogate.clone();
        c.training.seed ^= self.config.run.seed;
        c
    }

    fn fit_rows(&mut self, rows: &[SimulationRecord]) -> Result<FittedSurrogate> {
        let data = self.training_data(rows)?;
        let before = read_energy_counter();
        let model = fit(&data, &self.surrogate_config())?;
        if let (Some(a), Some(b)) = (before, read_energy_counter()) {
            self.state.training_energy_measured = true;
            if b >= a {
                self.state.add_energy((b - a) as f64 * 1e-6);
            }
        }
        Ok(model)
    }

    /// Gating over the registered parts, computed once per run. `None`
    /// when no expert is usable.
    fn gating(&mut self) -> Result<Option<GatingDecision>> {
        if let Some(g) = &self.gating {
            return Ok(g.clone());
        }
        let decision = self.compute_gating()?;
        self.gating = Some(decision.clone());
        Ok(decision)
    }

    fn compute_gating(&self) -> Result<Option<GatingDecision>> {
        let Some(own) = self.parts.parts.get(&self.config.part_id).and_then(|p| p.cloud_path.clone()) else {
            return Ok(None);
        };
        let all = self.complete_rows(|_| true)?;
        let mut clouds: Vec<PointCloud> = Vec::new();
        for (id, info) in &self.parts.parts {
            if *id == self.config.part_id || self.config.moe.experts.as_ref().is_some_and(|e| !e.contains(id)) {
                continue;
            }
            let Some(path) = &info.cloud_path else { continue };
            if all.iter().filter(|r| r.part_id == *id).count() < 2 {
                continue;
            }
            clouds.push(read_cloud(id, path)?);
        }
        match clouds.len() {
            0 => Ok(None),
            1 => Ok(Some(GatingDecision {
                mode: self.config.moe.gating,
                selected: vec![(clouds[0].part_id.clone(), 1.0)],
                distances: Vec::new(),
            })),
            _ => {
                let mut enc_config = self.config.moe.encoder.clone();
                enc_config.seed ^= self.config.run.seed;
                let trained = train_encoder(&clouds, &enc_config)?;
                if let Some(w) = &trained.warning {
                    warn!("{w}");
                }
                let target = read_cloud(&self.config.part_id, &own)?;
                Ok(Some(gate(&target, &trained.encoder, &trained.embeddings, self.config.moe.gating, self.config.moe.cutoff)?))
            }
        }
    }

    fn prepare(&mut self) -> Result<Prepared> {
        let specs = self.config.parameters.clone();
        let part = self.config.part_id.clone();
        let own_run: Vec<SimulationRecord> = self.history.iter().filter(|r| self.trainable(r)).cloned().collect();
        let mut source = DataSource::Random;
        let mut rows: Vec<SimulationRecord> = Vec::new();
        let mut model = None;

        if self.state.iteration < self.config.run.i_moe {
            if let Some(decision) = self.gating()? {
                let mut experts = Vec::new();
                for (id, _) in &decision.selected {
                    let mut expert_rows = self.complete_rows(|r| r.part_id == *id)?;
                    expert_rows.extend(own_run.iter().cloned());
                    experts.push((id.clone(), self.fit_rows(&expert_rows)?));
                    rows.extend(expert_rows);
                }
                source = DataSource::MixtureOfExperts;
                model = Some(Model::Mixture { decision, experts });
            }
        }
        if model.is_none() {
            let own = self.complete_rows(|r| r.part_id == part)?;
            if own.len() >= 2 {
                source = DataSource::Part;
                rows = own;
            } else if let Some(c) = self.parts.complexity(&part) {
                let tol = self.config.data.complexity_tolerance;
                let filter = DataFilter::complexity(c - tol, c + tol);
                let band: Vec<SimulationRecord> = filter.apply(self.store.records()?, &self.parts)?.into_iter().filter(|r| self.trainable(r)).collect();
                if band.len() >= 2 {
                    source = DataSource::Complexity;
                    rows = band;
                }
            }
            if source != DataSource::Random {
                model = Some(Model::Single(Box::new(self.fit_rows(&rows)?)));
            }
        }

        let ranges = if model.is_some() && self.config.candidates.range_source == RangeSource::Observed {
            let obs = observed_ranges(&rows, &specs)?;
            expand_ranges(&obs, &specs, self.config.candidates.expansion)?
        } else {
            self.fallback_ranges()?
        };
        let c = &self.config.candidates;
        let seed = derive_seed(self.config.run.seed, 1, self.state.cycle);
        let candidates = match c.method {
            Generation::Linear => generate_linear(&specs, &ranges, c.n_star, seed, c.layout)?,
            Generation::Combination => {
                let steps: Vec<usize> = specs
                    .iter()
                    .map(|s| if s.kind == ParamKind::Continuous { c.steps } else { 1 })
                    .collect();
                generate_combination(&specs, &ranges, &steps, c.cap, seed, c.grid_bound)?
            }
        };

        let (scores, profile) = match &model {
            None => (None, None),
            Some(m) => {
                let batch = c.batch_size;
                let mc = self.config.run.ei == EiMethod::MonteCarlo && matches!(m, Model::Single(_));
                let pred = m.predict(&candidates, mc, batch)?;
                let scores = if mc {
                    ei_monte_carlo(&pred, &self.config.targets, self.config.run.n_mc, derive_seed(self.config.run.seed, 3, self.state.cycle))?
                } else {
                    ei_marginal(&pred, &self.config.targets)?
                };
                let anchor: Vec<f64> = match &self.state.best_so_far {
                    Some(b) => b.inputs.select(&self.config.parameter_names()).unwrap_or_default(),
                    None => Vec::new(),
                };
                let anchor = if anchor.len() == specs.len() {
                    anchor
                } else {
                    candidates.row(select_best(&scores, &candidates)?.0).to_vec()
                };
                let predict = |set: &CandidateSet| m.predict(set, false, batch);
                let profile = build_profile(self.state.cycle, &specs, &ranges, &anchor, &candidates, &scores, &pred, &self.config.targets, &predict)?;
                (Some(scores), Some(profile))
            }
        };
        Ok(Prepared {
            source,
            training_rows: rows.len(),
            ranges,
            candidates,
            scores,
            profile,
        })
    }

    fn initial_design(&self, ranges: &[Range]) -> Option<DesignPoint> {
        match self.predict_initial_in(ranges) {
            Ok(x) => Some(x),
            Err(e) => {
                warn!("initial predictor unavailable, starting from a random design: {e}");
                None
            }
        }
    }

    /// Trains the initial predictor on the store and proposes a design for
    /// the configured fixed values and target shares.
    pub fn predict_initial(&self) -> Result<DesignPoint> {
        self.predict_initial_in(&self.fallback_ranges()?)
    }

    fn predict_initial_in(&self, ranges: &[Range]) -> Result<DesignPoint> {
        let ip = &self.config.initial_predictor;
        let examples: Vec<Example> = self
            .complete_rows(|_| true)?
            .into_iter()
            .map(|r| Example {
                inputs: r.inputs,
                targets: r.targets,
            })
            .collect();
        let fixed: Vec<String> = ip.fixed.names().map(String::from).collect();
        let targets: Vec<String> = TARGET_NAMES.iter().map(|s| s.to_string()).collect();
        let variable: Vec<(ParameterSpec, Range)> = self.config.parameters.iter().cloned().zip(ranges.iter().cloned()).collect();
        let x = train_initial_predictor(&examples, &fixed, &targets, &variable, &ip.training)?.predict(&ip.fixed, &self.config.targets.f_star)?;
        let names = self.config.parameter_names();
        let values = x
            .select(&names)
            .ok_or_else(|| Error::Config("initial predictor did not produce every parameter".into()))?;
        Ok(NamedValues::from_pairs(&names, &values))
    }
}
