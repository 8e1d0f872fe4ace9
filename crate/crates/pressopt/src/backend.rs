//! Simulation backends: the virtual press and an adapter that runs an
//! external command on a patched template file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use pressopt_core::press::{Decision, PressModel, ProgressSnapshot};
use pressopt_core::space::{ParamKind, ParameterSpec};
use pressopt_core::{DesignPoint, NamedValues, TARGET_NAMES};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Capabilities {
    pub supports_progress: bool,
    pub reports_energy: bool,
    pub deterministic: bool,
}

/// What a job produced. `targets` holds the partial shares when the watcher
/// stopped the job.
#[derive(Debug, Clone, PartialEq)]
pub struct JobOutcome {
    pub targets: NamedValues,
    pub progress: f64,
    pub terminated_early: bool,
    pub walltime_s: f64,
    pub energy_j: f64,
}

pub type Watcher<'a> = &'a mut dyn FnMut(&ProgressSnapshot) -> Decision;

pub trait SimulationBackend: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    /// Runs one job. Backends with progress support call the watcher after
    /// every step and stop when it says so.
    fn run(&self, x: &DesignPoint, watcher: Option<Watcher<'_>>) -> Result<JobOutcome>;
}

#[derive(Debug)]
pub struct VirtualPressBackend {
    pub model: PressModel,
    /// Sleep for the synthetic walltime of each step.
    pub realtime: bool,
}

impl VirtualPressBackend {
    pub fn new(model: PressModel) -> Result<Self> {
        model.validate()?;
        Ok(Self { model, realtime: false })
    }
}

impl SimulationBackend for VirtualPressBackend {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_progress: true,
            reports_energy: true,
            deterministic: true,
        }
    }

    fn run(&self, x: &DesignPoint, mut watcher: Option<Watcher<'_>>) -> Result<JobOutcome> {
        let step = Duration::from_secs_f64(self.model.step_walltime_s);
        let realtime = self.realtime;
        let mut paced = |s: &ProgressSnapshot| {
            if realtime && s.progress > 0.0 {
                std::thread::sleep(step);
            }
            match watcher.as_mut() {
                Some(w) => w(s),
                None => Decision::Continue,
            }
        };
        let out = self.model.simulate(x, Some(&mut paced))?;
        Ok(JobOutcome {
            targets: NamedValues::from_pairs(&TARGET_NAMES, &out.targets),
            progress: out.progress,
            terminated_early: out.terminated_early,
            walltime_s: out.walltime_s,
            energy_j: out.energy_j,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    /// Input file with `${name}` placeholders.
    pub template: PathBuf,
    /// Program and arguments. Arguments may use the placeholders too, plus
    /// `${input}` (the patched file) and `${workdir}`.
    pub command: Vec<String>,
    /// Where `<name>_<value>.cfg` files for discrete parameters live.
    /// Defaults to the template's directory.
    #[serde(default)]
    pub config_dir: Option<PathBuf>,
    /// Parent of the per-job working directories. Defaults to the system
    /// temporary directory.
    #[serde(default)]
    pub work_dir: Option<PathBuf>,
    #[serde(default)]
    pub keep_work_dirs: bool,
}

#[derive(Debug)]
pub struct ExternalBackend {
    config: ExternalConfig,
    template: String,
    specs: Vec<ParameterSpec>,
    jobs: AtomicUsize,
}

/// A job's working directory, ready to run.
#[derive(Debug)]
pub struct PreparedJob {
    pub dir: PathBuf,
    pub input: PathBuf,
    pub discrete_configs: Vec<PathBuf>,
}

/// Replaces `${name}` with the value's decimal text. `$${` is a literal
/// `${`.
pub fn substitute(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(at) = rest.find('$') {
        out.push_str(&rest[..at]);
        let tail = &rest[at..];
        if let Some(after) = tail.strip_prefix("$${") {
            out.push_str("${");
            rest = after;
        } else if let Some(after) = tail.strip_prefix("${") {
            let end = after
                .find('}')
                .ok_or_else(|| Error::Backend(format!("unterminated placeholder near {:?}", &tail[..tail.len().min(20)])))?;
            let name = &after[..end];
            let value = lookup(name).ok_or_else(|| Error::Backend(format!("unresolved placeholder ${{{name}}}")))?;
            out.push_str(&value);
            rest = &after[end + 1..];
        } else {
            out.push('$');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn placeholders(text: &str) -> Vec<String> {
    let names = std::cell::RefCell::new(Vec::new());
    let _ = substitute(text, &|name| {
        names.borrow_mut().push(name.to_string());
        Some(String::new())
    });
    names.into_inner()
}

fn text_of(v: f64) -> String {
    format!("{v}")
}

impl ExternalBackend {
    pub fn new(config: ExternalConfig, specs: &[ParameterSpec]) -> Result<Self> {
        if config.command.is_empty() {
            return Err(Error::Config("external backend needs a command".into()));
        }
        let template = fs::read_to_string(&config.template).map_err(|e| Error::io(&config.template, e))?;
        let found = placeholders(&template);
        for spec in specs.iter().filter(|s| s.kind == ParamKind::Continuous) {
            if !found.iter().any(|n| *n == spec.name) {
                return Err(Error::Config(format!(
                    "template {} has no ${{{}}} placeholder",
                    config.template.display(),
                    spec.name
                )));
            }
        }
        Ok(Self {
            config,
            template,
            specs: specs.to_vec(),
            jobs: AtomicUsize::new(0),
        })
    }

    fn config_dir(&self) -> PathBuf {
        self.config
            .config_dir
            .clone()
            .unwrap_or_else(|| self.config.template.parent().unwrap_or(Path::new(".")).to_path_buf())
    }

    /// Resolves discrete configs, patches the template and writes both into
    /// a fresh working directory. Nothing is written when a lookup fails.
    pub fn prepare(&self, x: &DesignPoint) -> Result<PreparedJob> {
        let mut configs = Vec::new();
        for spec in self.specs.iter().filter(|s| s.kind == ParamKind::Discrete) {
            let v = x
                .get(&spec.name)
                .ok_or_else(|| Error::Backend(format!("design point lacks parameter {}", spec.name)))?;
            let path = self.config_dir().join(format!("{}_{}.cfg", spec.name, text_of(v)));
            if !path.is_file() {
                return Err(Error::Backend(format!(
                    "missing discrete config for {} = {}: {} does not exist",
                    spec.name,
                    text_of(v),
                    path.display()
                )));
            }
            configs.push(path);
        }
        let patched = substitute(&self.template, &|name| x.get(name).map(text_of))?;
        let root = self.config.work_dir.clone().unwrap_or_else(std::env::temp_dir);
        let n = self.jobs.fetch_add(1, Ordering::Relaxed);
        let dir = root.join(format!("pressopt-job-{}-{n}", std::process::id()));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let name = self.config.template.file_name().unwrap_or("input".as_ref());
        let input = dir.join(name);
        fs::write(&input, patched).map_err(|e| Error::io(&input, e))?;
        let mut copied = Vec::new();
        for c in configs {
            let dest = dir.join(c.file_name().expect("config files have names"));
            fs::copy(&c, &dest).map_err(|e| Error::io(&c, e))?;
            copied.push(dest);
        }
        Ok(PreparedJob {
            dir,
            input,
            discrete_configs: copied,
        })
    }

    fn execute(&self, x: &DesignPoint, job: &PreparedJob) -> Result<JobOutcome> {
        let input = job.input.display().to_string();
        let workdir = job.dir.display().to_string();
        let args = self
            .config
            .command
            .iter()
            .map(|a| {
                substitute(a, &|name| match name {
                    "input" => Some(input.clone()),
                    "workdir" => Some(workdir.clone()),
                    _ => x.get(name).map(text_of),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let started = Instant::now();
        let output = Command::new(&args[0])
            .args(&args[1..])
            .current_dir(&job.dir)
            .env("PRESSOPT_INPUT", &job.input)
            .output()
            .map_err(|e| Error::Backend(format!("could not start {}: {e}", args[0])))?;
        let elapsed = started.elapsed().as_secs_f64();
        let stdout = String::from_utf8_lossy(&output.stdout);
        let stderr = String::from_utf8_lossy(&output.stderr);
        if !output.status.success() {
            return Err(Error::Backend(format!(
                "command failed with {}\nstdout:\n{stdout}\nstderr:\n{stderr}",
                output.status
            )));
        }
        let last = stdout.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("");
        let unparsable = |why: String| Error::Backend(format!("unparsable output ({why}): {last:?}\nstderr:\n{stderr}"));
        let obj: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(last).map_err(|e| unparsable(e.to_string()))?;
        let number = |key: &str| obj.get(key).and_then(|v| v.as_f64());
        let mut targets = NamedValues::new();
        for name in TARGET_NAMES {
            targets.set(name, number(name).ok_or_else(|| unparsable(format!("no numeric {name}")))?);
        }
        for (key, v) in &obj {
            if let (false, Some(v)) = (TARGET_NAMES.contains(&key.as_str()) || key == "walltime_s" || key == "energy_j", v.as_f64()) {
                targets.set(key, v);
            }
        }
        Ok(JobOutcome {
            targets,
            progress: 1.0,
            terminated_early: false,
            walltime_s: number("walltime_s").unwrap_or(elapsed),
            energy_j: number("energy_j").unwrap_or(0.0),
        })
    }
}

impl SimulationBackend for ExternalBackend {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_progress: false,
            reports_energy: false,
            deterministic: false,
        }
    }

    fn run(&self, x: &DesignPoint, _watcher: Option<Watcher<'_>>) -> Result<JobOutcome> {
        let job = self.prepare(x)?;
        let result = self.execute(x, &job);
        if !self.config.keep_work_dirs {
            let _ = fs::remove_dir_all(&job.dir);
        }
        result
    }
}
