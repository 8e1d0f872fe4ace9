//! Loop bookkeeping: early termination of running jobs, end conditions and
//! the running state of an optimization.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::press::{Decision, ProgressSnapshot};
use crate::{DesignPoint, Error, NamedValues, Result, TARGET_NAMES};

/// Tolerance used when comparing history entries for equality.
pub const EQUALITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyTermination {
    pub enabled: bool,
    /// Limits are only checked once progress reaches this fraction.
    pub threshold: f64,
    /// Largest tolerated share (percent) per critical target.
    pub limits: NamedValues,
}

impl Default for EarlyTermination {
    fn default() -> Self {
        Self {
            enabled: true,
            threshold: 0.9,
            limits: NamedValues::new().with("L7", 5.0).with("L1", 10.0).with("L6", 10.0),
        }
    }
}

impl EarlyTermination {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidArgument(alloc::format!(
                "early termination threshold {} is outside [0, 1]",
                self.threshold
            )));
        }
        for (name, limit) in self.limits.iter() {
            if !TARGET_NAMES.contains(&name) {
                return Err(Error::InvalidArgument(alloc::format!("unknown target {name} in early termination limits")));
            }
            if !limit.is_finite() {
                return Err(Error::InvalidArgument(alloc::format!("limit for {name} must be finite")));
            }
        }
        Ok(())
    }

    /// Stop once progress has reached the threshold and any critical target
    /// exceeds its limit.
    pub fn check(&self, snapshot: &ProgressSnapshot) -> Decision {
        if !self.enabled || snapshot.progress < self.threshold {
            return Decision::Continue;
        }
        let exceeded = self.limits.iter().any(|(name, limit)| {
            TARGET_NAMES
                .iter()
                .position(|t| *t == name)
                .is_some_and(|j| snapshot.targets[j] > limit)
        });
        if exceeded {
            Decision::Stop
        } else {
            Decision::Continue
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndConditions {
    /// Stop when this many consecutive cycles report the same EI sum.
    pub no_improvement_window: usize,
    /// Stop when the best value has not changed for this many cycles.
    pub constant_minimum_window: usize,
    pub energy_budget_j: Option<f64>,
}

impl Default for EndConditions {
    fn default() -> Self {
        Self {
            no_improvement_window: 5,
            constant_minimum_window: 5,
            energy_budget_j: None,
        }
    }
}

impl EndConditions {
    pub fn validate(&self) -> Result<()> {
        if self.no_improvement_window == 0 || self.constant_minimum_window == 0 {
            return Err(Error::InvalidArgument("end condition windows must be at least 1".into()));
        }
        if let Some(b) = self.energy_budget_j {
            if !(b >= 0.0) {
                return Err(Error::InvalidArgument("energy budget must be non-negative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NoImprovement,
    ConstantMinimum,
    EnergyBudget,
    MaxIterations,
    BackendFailure,
    /// Stopped on request (HTTP stop or an interrupt).
    Requested,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::NoImprovement => "no_improvement",
            StopReason::ConstantMinimum => "constant_minimum",
            StopReason::EnergyBudget => "energy_budget",
            StopReason::MaxIterations => "max_iterations",
            StopReason::BackendFailure => "backend failure",
            StopReason::Requested => "requested",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum LoopStatus {
    Running,
    AwaitingHuman,
    Stopped(StopReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSoFar {
    pub inputs: DesignPoint,
    pub targets: NamedValues,
    /// Scalarized objective, lower is better.
    pub value: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    /// Simulations dispatched so far.
    pub iteration: usize,
    /// Completed model-update rounds.
    pub cycle: usize,
    /// Total EI over the candidates, one entry per cycle; `None` for cycles
    /// whose sample was not chosen by a model.
    pub ei_sum_history: Vec<Option<f64>>,
    /// Best objective after each cycle.
    pub best_history: Vec<Option<f64>>,
    pub best_so_far: Option<BestSoFar>,
    pub consumed_energy_j: f64,
    /// Whether model-training energy could be measured on this host.
    pub training_energy_measured: bool,
    pub status: LoopStatus,
}

impl Default for LoopState {
    fn default() -> Self {
        Self {
            iteration: 0,
            cycle: 0,
            ei_sum_history: Vec::new(),
            best_history: Vec::new(),
            best_so_far: None,
            consumed_energy_j: 0.0,
            training_energy_measured: false,
            status: LoopStatus::Running,
        }
    }
}

impl LoopState {
    /// Offers a completed result; keeps it if it beats the incumbent.
    /// Returns whether it became the new best.
    pub fn offer(&mut self, inputs: &DesignPoint, targets: &NamedValues, value: f64, iteration: usize) -> bool {
        if !value.is_finite() || self.best_so_far.as_ref().is_some_and(|b| b.value <= value) {
            return false;
        }
        self.best_so_far = Some(BestSoFar {
            inputs: inputs.clone(),
            targets: targets.clone(),
            value,
            iteration,
        });
        true
    }

    pub fn add_energy(&mut self, joules: f64) {
        if joules > 0.0 {
            self.consumed_energy_j += joules;
        }
    }

    /// Closes a cycle.
    pub fn end_cycle(&mut self, ei_sum: Option<f64>) {
        self.cycle += 1;
        self.ei_sum_history.push(ei_sum);
        self.best_history.push(self.best_so_far.as_ref().map(|b| b.value));
    }

    pub fn best_value(&self) -> Option<f64> {
        self.best_so_far.as_ref().map(|b| b.value)
    }
}

fn flat_tail(history: &[Option<f64>], len: usize) -> bool {
    if len == 0 || history.len() < len {
        return false;
    }
    let tail = &history[history.len() - len..];
    let Some(first) = tail[0] else { return false };
    tail.iter().all(|v| v.is_some_and(|v| (v - first).abs() <= EQUALITY_TOL))
}

/// The first end condition that holds, in the order no improvement,
/// constant minimum, energy budget, iteration limit.
pub fn evaluate_end_conditions(state: &LoopState, conditions: &EndConditions, max_iterations: usize) -> Option<StopReason> {
    if state.cycle == 0 {
        return None;
    }
    if flat_tail(&state.ei_sum_history, conditions.no_improvement_window) {
        return Some(StopReason::NoImprovement);
    }
    // Unchanged for `window` cycles: `window + 1` equal entries.
    if flat_tail(&state.best_history, conditions.constant_minimum_window + 1) {
        return Some(StopReason::ConstantMinimum);
    }
    if conditions.energy_budget_j.is_some_and(|b| state.consumed_energy_j >= b) {
        return Some(StopReason::EnergyBudget);
    }
    if state.iteration >= max_iterations {
        return Some(StopReason::MaxIterations);
    }
    None
}

/// Target names as owned strings, in order.
pub fn target_names() -> Vec<String> {
    TARGET_NAMES.iter().map(|s| String::from(*s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn snap(progress: f64, l7: f64) -> ProgressSnapshot {
        let mut targets = [0.0; 7];
        targets[6] = l7;
        targets[3] = 100.0 - l7;
        ProgressSnapshot {
            progress,
            targets,
            walltime_s: 0.0,
            energy_j: 0.0,
        }
    }

    #[test]
    fn early_termination_examples() {
        let et = EarlyTermination::default();
        assert_eq!(et.check(&snap(0.5, 50.0)), Decision::Continue);
        assert_eq!(et.check(&snap(0.9, 50.0)), Decision::Stop);
        assert_eq!(et.check(&snap(0.95, 0.5)), Decision::Continue);
        let off = EarlyTermination {
            enabled: false,
            ..EarlyTermination::default()
        };
        assert_eq!(off.check(&snap(0.95, 50.0)), Decision::Continue);
    }

    #[test]
    fn early_termination_validation() {
        let mut et = EarlyTermination::default();
        et.threshold = 1.5;
        assert!(et.validate().is_err());
        let mut et = EarlyTermination::default();
        et.limits.set("L9", 1.0);
        assert!(et.validate().is_err());
    }

    fn state_with(ei: &[Option<f64>], best: &[f64]) -> LoopState {
        let mut s = LoopState::default();
        s.ei_sum_history = ei.to_vec();
        s.best_history = best.iter().map(|v| Some(*v)).collect();
        s.cycle = ei.len();
        s.iteration = ei.len();
        s
    }

    #[test]
    fn constant_ei_tail_stops() {
        let s = state_with(&[Some(9.0), Some(5.0), Some(5.0), Some(5.0), Some(5.0), Some(5.0)], &[6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        assert_eq!(evaluate_end_conditions(&s, &EndConditions::default(), 100), Some(StopReason::NoImprovement));
        let short = state_with(&[Some(5.0); 4], &[4.0, 3.0, 2.0, 1.0]);
        assert_eq!(evaluate_end_conditions(&short, &EndConditions::default(), 100), None);
    }

    #[test]
    fn missing_ei_never_counts_as_flat() {
        let s = state_with(&[None; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(evaluate_end_conditions(&s, &EndConditions::default(), 100), None);
    }

    #[test]
    fn energy_budget_stops() {
        let mut s = state_with(&[Some(1.0), Some(2.0)], &[2.0, 1.0]);
        s.consumed_energy_j = 100_001.0;
        let c = EndConditions {
            energy_budget_j: Some(100_000.0),
            ..EndConditions::default()
        };
        assert_eq!(evaluate_end_conditions(&s, &c, 100), Some(StopReason::EnergyBudget));
    }

    #[test]
    fn constant_minimum_and_order() {
        let s = state_with(&[Some(1.0), Some(2.0), Some(3.0), Some(4.0), Some(5.0), Some(6.0)], &[3.0; 6]);
        assert_eq!(evaluate_end_conditions(&s, &EndConditions::default(), 100), Some(StopReason::ConstantMinimum));
        let flat = state_with(&[Some(2.0); 6], &[3.0; 6]);
        assert_eq!(evaluate_end_conditions(&flat, &EndConditions::default(), 100), Some(StopReason::NoImprovement));
    }

    #[test]
    fn improving_runs_continue_until_the_limit() {
        let s = state_with(&[Some(5.0), Some(4.0), Some(3.0)], &[3.0, 2.0, 1.0]);
        assert_eq!(evaluate_end_conditions(&s, &EndConditions::default(), 10), None);
        assert_eq!(evaluate_end_conditions(&s, &EndConditions::default(), 3), Some(StopReason::MaxIterations));
        assert_eq!(evaluate_end_conditions(&LoopState::default(), &EndConditions::default(), 0), None);
    }

    #[test]
    fn best_only_improves() {
        let mut s = LoopState::default();
        let x = NamedValues::new().with("p", 1.0);
        let y = NamedValues::new();
        assert!(s.offer(&x, &y, 5.0, 0));
        assert!(!s.offer(&x, &y, 6.0, 1));
        assert!(!s.offer(&x, &y, 5.0, 2));
        assert!(s.offer(&x, &y, 4.0, 3));
        assert!(!s.offer(&x, &y, f64::NAN, 4));
        assert_eq!(s.best_value(), Some(4.0));
        s.end_cycle(Some(1.0));
        assert_eq!(s.best_history, vec![Some(4.0)]);
    }

    #[test]
    fn status_serializes_with_reason() {
        let text = serde_json::to_string(&LoopStatus::Stopped(StopReason::EnergyBudget)).unwrap();
        assert_eq!(text, r#"{"status":"stopped","reason":"energy_budget"}"#);
        let text = serde_json::to_string(&LoopStatus::AwaitingHuman).unwrap();
        assert_eq!(text, r#"{"status":"awaiting_human"}"#);
    }
}
