//! Synthetic deep-drawing press.
//!
//! A cheap deterministic stand-in for a forming solver. Inputs are normalized
//! to `[0, 1]` and folded into two scalars:
//!
//! * restraint `r = 0.5 z_p + 0.3 z_db + 0.2 z_Fr` (how hard the flange is held),
//! * capacity `c = 0.6 z_D + 0.4 (1 - z_Rp)` (how much stretch the blank takes).
//!
//! Each feasibility class gets a piecewise-linear score in `(r, c)`:
//!
//! | class | score |
//! |-------|-------|
//! | L1 inadequate stretch | `5 max(0, 0.30 - r)` |
//! | L2 wrinkling | `6 max(0, 0.25 - r)` |
//! | L3 wrinkling tendency | `4 max(0, 0.35 - r)` |
//! | L4 safe | `2.5 + c - 6 abs(r - (0.35 + 0.3 c))` |
//! | L5 risk of cracks | `5 max(0, r - c)` |
//! | L6 severe thinning | `5 max(0, r - c - 0.10)` |
//! | L7 cracks | `6 max(0, r - c - 0.25)` |
//!
//! and the class shares are `L = 100 softmax(s)`, so they always sum to 100.
//! The drawbead count is part of the schema but does not affect the response.
//!
//! A run advances in `steps` equal increments. At fraction `q` the reported
//! shares interpolate linearly from the blank state (all safe) to the final
//! shares, so cracks can only grow while a run progresses.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::space::ParameterSpec;
use crate::{DesignPoint, Error, NamedValues, Result};

pub const P: &str = "p";
pub const DB: &str = "db";
pub const DB_COUNT: &str = "db_count";
pub const FR: &str = "Fr";
pub const D: &str = "D";
pub const RP: &str = "Rp";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn normalize(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }
}

/// A class whose score grows as `gain * max(0, edge - x)` (wrinkle family,
/// `x = r`) or `gain * max(0, x - edge)` (crack family, `x = r - c`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub gain: f64,
    pub edge: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafePeak {
    pub base: f64,
    /// Extra safe score per unit capacity.
    pub capacity_gain: f64,
    /// Score lost per unit distance from the ideal restraint.
    pub width: f64,
    /// Ideal restraint at zero capacity.
    pub center: f64,
    /// Shift of the ideal restraint per unit capacity.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PressModel {
    pub pressure: Interval,
    pub drawbead_force: Interval,
    pub drawbead_count: Interval,
    pub friction: Interval,
    pub thickness: Interval,
    pub yield_strengths: Vec<f64>,
    /// Weights of `z_p`, `z_db`, `z_Fr` in the restraint.
    pub restraint_weights: [f64; 3],
    /// Weights of `z_D` and `1 - z_Rp` in the capacity.
    pub capacity_weights: [f64; 2],
    /// L1, L2, L3.
    pub wrinkle: [Ramp; 3],
    pub safe: SafePeak,
    /// L5, L6, L7.
    pub crack: [Ramp; 3],
    /// Values used for schema parameters missing from a design point.
    pub defaults: NamedValues,
    pub steps: usize,
    pub step_walltime_s: f64,
    pub power_w: f64,
}

impl Default for PressModel {
    fn default() -> Self {
        Self {
            pressure: Interval::new(50.0, 300.0),
            drawbead_force: Interval::new(50.0, 250.0),
            drawbead_count: Interval::new(0.0, 100.0),
            friction: Interval::new(0.05, 0.20),
            thickness: Interval::new(0.6, 2.0),
            yield_strengths: vec![160.0, 220.0, 280.0, 340.0],
            restraint_weights: [0.5, 0.3, 0.2],
            capacity_weights: [0.6, 0.4],
            wrinkle: [
                Ramp { gain: 5.0, edge: 0.30 },
                Ramp { gain: 6.0, edge: 0.25 },
                Ramp { gain: 4.0, edge: 0.35 },
            ],
            safe: SafePeak {
                base: 2.5,
                capacity_gain: 1.0,
                width: 6.0,
                center: 0.35,
                slope: 0.3,
            },
            crack: [
                Ramp { gain: 5.0, edge: 0.0 },
                Ramp { gain: 5.0, edge: 0.10 },
                Ramp { gain: 6.0, edge: 0.25 },
            ],
            defaults: NamedValues::new()
                .with(DB, 150.0)
                .with(DB_COUNT, 50.0)
                .with(RP, 220.0),
            steps: 100,
            step_walltime_s: 0.05,
            power_w: 200.0,
        }
    }
}

/// Shares of L1..L7 in a blank that has not been drawn yet.
pub const INITIAL_TARGETS: [f64; 7] = [0.0, 0.0, 0.0, 100.0, 0.0, 0.0, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressSnapshot {
    pub progress: f64,
    pub targets: [f64; 7],
    pub walltime_s: f64,
    pub energy_j: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutcome {
    pub targets: [f64; 7],
    pub progress: f64,
    pub terminated_early: bool,
    pub steps_completed: usize,
    pub walltime_s: f64,
    pub energy_j: f64,
}

impl PressModel {
    pub fn validate(&self) -> Result<()> {
        for (name, i) in self.intervals() {
            if !(i.hi > i.lo) || !i.lo.is_finite() || !i.hi.is_finite() {
                return Err(Error::InvalidArgument(format!("press range for {name} is degenerate")));
            }
        }
        let rp = &self.yield_strengths;
        if rp.len() < 2 || rp.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "press yield strengths must be at least two increasing values".into(),
            ));
        }
        let gains = self
            .wrinkle
            .iter()
            .chain(&self.crack)
            .flat_map(|r| [r.gain, r.edge])
            .chain([self.safe.base, self.safe.capacity_gain, self.safe.width, self.safe.center, self.safe.slope]);
        if gains.chain(self.restraint_weights).chain(self.capacity_weights).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("press coefficients must be finite".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("press needs at least one step".into()));
        }
        if !(self.step_walltime_s >= 0.0) || !(self.power_w >= 0.0) {
            return Err(Error::InvalidArgument("press walltime and power must be non-negative".into()));
        }
        for (name, v) in self.defaults.iter() {
            self.check_value(name, v)?;
        }
        Ok(())
    }

    fn intervals(&self) -> [(&'static str, Interval); 5] {
        [
            (P, self.pressure),
            (DB, self.drawbead_force),
            (DB_COUNT, self.drawbead_count),
            (FR, self.friction),
            (D, self.thickness),
        ]
    }

    /// All six press parameters, bounded by the model ranges.
    pub fn schema(&self) -> Vec<ParameterSpec> {
        let mut specs: Vec<ParameterSpec> = self
            .intervals()
            .iter()
            .map(|(name, i)| ParameterSpec::continuous(name).bounded(i.lo, i.hi))
            .collect();
        specs.push(ParameterSpec::discrete(RP).adding(&self.yield_strengths));
        specs
    }

    /// Pressure, friction and thickness; the rest stay at their defaults.
    pub fn three_input_schema(&self) -> Vec<ParameterSpec> {
        self.schema()
            .into_iter()
            .filter(|s| [P, FR, D].contains(&s.name.as_str()))
            .collect()
    }

    fn check_value(&self, name: &str, v: f64) -> Result<()> {
        let out = |detail: String| Error::OutOfRange {
            name: name.to_string(),
            detail,
        };
        if !v.is_finite() {
            return Err(out("value is not finite".into()));
        }
        if name == RP {
            if !self.yield_strengths.contains(&v) {
                return Err(out(format!("{v} is not one of {:?}", self.yield_strengths)));
            }
            return Ok(());
        }
        let (_, i) = self
            .intervals()
            .into_iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("unknown press parameter {name}")))?;
        if v < i.lo || v > i.hi {
            return Err(out(format!("{v} outside [{}, {}]", i.lo, i.hi)));
        }
        Ok(())
    }

    /// Resolves a design point (plus defaults) into the six inputs in the
    /// order p, db, db_count, Fr, D, Rp.
    pub fn resolve(&self, x: &DesignPoint) -> Result<[f64; 6]> {
        for (name, v) in x.iter() {
            self.check_value(name, v)?;
        }
        let mut out = [0.0; 6];
        for (slot, name) in [P, DB, DB_COUNT, FR, D, RP].into_iter().enumerate() {
            out[slot] = x
                .get(name)
                .or_else(|| self.defaults.get(name))
                .ok_or_else(|| Error::SchemaMismatch(format!("design point lacks parameter {name}")))?;
        }
        Ok(out)
    }

    /// Restraint and capacity of resolved inputs.
    pub fn restraint_capacity(&self, v: &[f64; 6]) -> (f64, f64) {
        let [wp, wdb, wfr] = self.restraint_weights;
        let [wd, wrp] = self.capacity_weights;
        let rp = &self.yield_strengths;
        let z_rp = (v[5] - rp[0]) / (rp[rp.len() - 1] - rp[0]);
        let r = wp * self.pressure.normalize(v[0]) + wdb * self.drawbead_force.normalize(v[1]) + wfr * self.friction.normalize(v[3]);
        let c = wd * self.thickness.normalize(v[4]) + wrp * (1.0 - z_rp);
        (r, c)
    }

    /// Class scores before the softmax.
    pub fn scores(&self, r: f64, c: f64) -> [f64; 7] {
        let up = |ramp: &Ramp, x: f64| ramp.gain * (x - ramp.edge).max(0.0);
        let down = |ramp: &Ramp, x: f64| ramp.gain * (ramp.edge - x).max(0.0);
        let s = &self.safe;
        let ideal = s.center + s.slope * c;
        [
            down(&self.wrinkle[0], r),
            down(&self.wrinkle[1], r),
            down(&self.wrinkle[2], r),
            s.base + s.capacity_gain * c - s.width * (r - ideal).abs(),
            up(&self.crack[0], r - c),
            up(&self.crack[1], r - c),
            up(&self.crack[2], r - c),
        ]
    }

    /// Final L1..L7 shares (percent) of a design point.
    pub fn evaluate_final(&self, x: &DesignPoint) -> Result<[f64; 7]> {
        let v = self.resolve(x)?;
        let (r, c) = self.restraint_capacity(&v);
        Ok(softmax_percent(&self.scores(r, c)))
    }

    /// Energy of one step.
    pub fn step_energy_j(&self) -> f64 {
        self.step_walltime_s * self.power_w
    }

    /// Runs the progress model. The watcher sees the snapshot after every
    /// step, starting with the blank state at progress 0, and may stop the
    /// run before it completes.
    pub fn simulate(
        &self,
        x: &DesignPoint,
        mut watcher: Option<&mut dyn FnMut(&ProgressSnapshot) -> Decision>,
    ) -> Result<SimulationOutcome> {
        let last = self.evaluate_final(x)?;
        let total = self.steps;
        for t in 0..=total {
            let snap = self.snapshot(&last, t);
            let stop = match watcher.as_mut() {
                Some(w) => w(&snap) == Decision::Stop,
                None => false,
            };
            if stop && t < total {
                return Ok(SimulationOutcome {
                    targets: snap.targets,
                    progress: snap.progress,
                    terminated_early: true,
                    steps_completed: t,
                    walltime_s: snap.walltime_s,
                    energy_j: snap.energy_j,
                });
            }
        }
        let snap = self.snapshot(&last, total);
        Ok(SimulationOutcome {
            targets: last,
            progress: 1.0,
            terminated_early: false,
            steps_completed: total,
            walltime_s: snap.walltime_s,
            energy_j: snap.energy_j,
        })
    }

    /// State after `t` of `steps` steps towards `last`.
    pub fn snapshot(&self, last: &[f64; 7], t: usize) -> ProgressSnapshot {
        let q = t as f64 / self.steps as f64;
        let mut targets = [0.0; 7];
        for j in 0..7 {
            targets[j] = if t == self.steps { last[j] } else { (1.0 - q) * INITIAL_TARGETS[j] + q * last[j] };
        }
        ProgressSnapshot {
            progress: q,
            targets,
            walltime_s: t as f64 * self.step_walltime_s,
            energy_j: t as f64 * self.step_energy_j(),
        }
    }

    /// Exhaustive search of `steps` evenly spaced values per free parameter.
    /// Returns the lowest objective and the design point that attains it
    /// (the first one in grid order on ties).
    pub fn grid_optimum(
        &self,
        free: &[ParameterSpec],
        steps: usize,
        objective: impl Fn(&[f64; 7]) -> f64,
    ) -> Result<(f64, DesignPoint)> {
        let axes: Vec<Vec<f64>> = free
            .iter()
            .map(|s| -> Result<Vec<f64>> {
                match s.constraint_range()? {
                    crate::space::Range::Interval { lo, hi } => Ok(crate::math::linspace(lo, hi, steps)),
                    crate::space::Range::Values(vs) => Ok(vs),
                }
            })
            .collect::<Result<_>>()?;
        let total: usize = axes.iter().map(Vec::len).product();
        let mut best: Option<(f64, DesignPoint)> = None;
        let mut idx = vec![0usize; axes.len()];
        for _ in 0..total {
            let mut x = NamedValues::new();
            for (k, s) in free.iter().enumerate() {
                x.set(&s.name, axes[k][idx[k]]);
            }
            let value = objective(&self.evaluate_final(&x)?);
            if best.as_ref().is_none_or(|b| value < b.0) {
                best = Some((value, x));
            }
            for k in (0..axes.len()).rev() {
                idx[k] += 1;
                if idx[k] < axes[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
        best.ok_or(Error::EmptyCandidates)
    }
}

/// `100 exp(s) / sum exp(s)`, shifted for stability.
pub fn softmax_percent(s: &[f64; 7]) -> [f64; 7] {
    let top = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e = [0.0; 7];
    for j in 0..7 {
        e[j] = libm::exp(s[j] - top);
    }
    let total: f64 = e.iter().sum();
    let mut out = [0.0; 7];
    for j in 0..7 {
        out[j] = 100.0 * e[j] / total;
    }
    out
}
