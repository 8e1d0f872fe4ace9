//! Acquisition profiles for the human operator: one-dimensional EI sweeps
//! through an anchor point and the loop's own top proposals.

use pressopt_core::acquisition::{ei_marginal, select_parallel, AcquisitionScores, Strategy, TargetSpec};
use pressopt_core::math::linspace;
use pressopt_core::space::{CandidateSet, ParameterSpec, Range};
use pressopt_core::{DesignPoint, NamedValues, PosteriorPrediction, Result, TARGET_NAMES};
use serde::{Deserialize, Serialize};

pub const SWEEP_POINTS: usize = 51;
pub const PROPOSALS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub parameter: String,
    pub values: Vec<f64>,
    pub ei_sum: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub index: usize,
    pub inputs: DesignPoint,
    pub ei_sum: f64,
    pub mean: NamedValues,
    pub std: NamedValues,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AcquisitionProfile {
    pub cycle: usize,
    /// Point the sweeps pass through.
    pub anchor: DesignPoint,
    pub sweeps: Vec<Sweep>,
    pub proposals: Vec<Proposal>,
    /// Inputs simulated in the previous cycle.
    pub last_selected: Vec<DesignPoint>,
}

fn named(row: &[f64]) -> NamedValues {
    NamedValues::from_pairs(&TARGET_NAMES[..row.len()], row)
}

/// Builds the profile. `predict` maps candidate rows to a marginal
/// prediction; `anchor` is projected onto `ranges`.
#[allow(clippy::too_many_arguments)]
pub fn build_profile(
    cycle: usize,
    specs: &[ParameterSpec],
    ranges: &[Range],
    anchor: &[f64],
    candidates: &CandidateSet,
    scores: &AcquisitionScores,
    prediction: &PosteriorPrediction,
    target: &TargetSpec,
    predict: &dyn Fn(&CandidateSet) -> Result<PosteriorPrediction>,
) -> Result<AcquisitionProfile> {
    let names: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
    let anchor: Vec<f64> = anchor.iter().zip(ranges).map(|(v, r)| r.project(*v)).collect();
    let mut sweeps = Vec::with_capacity(specs.len());
    for (j, range) in ranges.iter().enumerate() {
        let values = match range {
            Range::Interval { lo, hi } => linspace(*lo, *hi, SWEEP_POINTS),
            Range::Values(vs) => vs.clone(),
        };
        let rows: Vec<Vec<f64>> = values
            .iter()
            .map(|v| {
                let mut r = anchor.clone();
                r[j] = *v;
                r
            })
            .collect();
        let set = CandidateSet::from_rows(names.clone(), &rows)?;
        let ei = ei_marginal(&predict(&set)?, target)?;
        sweeps.push(Sweep {
            parameter: names[j].clone(),
            values,
            ei_sum: ei.sum,
        });
    }
    let k = PROPOSALS.min(candidates.len());
    let proposals = select_parallel(scores, candidates, k, Strategy::HighestSum)?
        .into_iter()
        .map(|(i, inputs)| {
            let std: Vec<f64> = (0..prediction.m).map(|a| prediction.variance(i, a).max(0.0).sqrt()).collect();
            Proposal {
                index: i,
                inputs,
                ei_sum: scores.sum[i],
                mean: named(prediction.mean_row(i)),
                std: named(&std),
            }
        })
        .collect();
    Ok(AcquisitionProfile {
        cycle,
        anchor: NamedValues::from_pairs(&names, &anchor),
        sweeps,
        proposals,
        last_selected: Vec::new(),
    })
}
