use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::cloud::PointCloud;
use super::encoder::GeometricEncoder;
use crate::gp::FittedSurrogate;
use crate::space::CandidateSet;
use crate::{Error, PosteriorPrediction, Result};

/// Experts whose normalized weight does not exceed this are dropped.
pub const DEFAULT_CUTOFF: f64 = 0.1;
const NEGATIVE_VARIANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatingMode {
    Hard,
    #[default]
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingDecision {
    pub mode: GatingMode,
    /// `(part_id, weight)`, weights positive and summing to 1.
    pub selected: Vec<(String, f64)>,
    /// Embedding distance to every expert.
    pub distances: Vec<(String, f64)>,
}

/// Weights from distances. Hard gating takes the nearest expert; soft gating
/// weighs experts by inverse distance, drops those at or below `cutoff` (the
/// heaviest always stays) and renormalizes. A distance of zero is an exact
/// match and selects that expert alone. Ties go to the lexically smallest
/// part id.
pub fn gate_by_distance(distances: &[(String, f64)], mode: GatingMode, cutoff: f64) -> Result<GatingDecision> {
    if distances.is_empty() {
        return Err(Error::InvalidArgument("gating needs at least one expert".into()));
    }
    if let Some((id, d)) = distances.iter().find(|(_, d)| !(*d >= 0.0)) {
        return Err(Error::InvalidArgument(format!("invalid distance {d} to expert {id}")));
    }
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].0.cmp(&distances[b].0));
    let nearest = *order
        .iter()
        .min_by(|&&a, &&b| distances[a].1.partial_cmp(&distances[b].1).unwrap_or(Ordering::Equal))
        .expect("nonempty");
    let alone = |i: usize| vec![(distances[i].0.clone(), 1.0)];
    let selected = if mode == GatingMode::Hard || distances[nearest].1 == 0.0 || distances[nearest].1.is_infinite() {
        alone(nearest)
    } else {
        let inv: Vec<f64> = order.iter().map(|&i| 1.0 / distances[i].1).collect();
        let total: f64 = inv.iter().sum();
        let w: Vec<f64> = inv.iter().map(|v| v / total).collect();
        let heaviest = order.iter().position(|&i| i == nearest).expect("nearest is listed");
        let kept: Vec<usize> = (0..order.len()).filter(|&k| k == heaviest || w[k] > cutoff).collect();
        let kept_total: f64 = kept.iter().map(|&k| w[k]).sum();
        kept.iter()
            .map(|&k| (distances[order[k]].0.clone(), w[k] / kept_total))
            .collect()
    };
    Ok(GatingDecision {
        mode,
        selected,
        distances: distances.to_vec(),
    })
}

/// Embeds `cloud` and gates it against the expert embeddings by Euclidean
/// distance.
pub fn gate(
    cloud: &PointCloud,
    encoder: &GeometricEncoder,
    experts: &[(String, Vec<f64>)],
    mode: GatingMode,
    cutoff: f64,
) -> Result<GatingDecision> {
    let e = encoder.embed(cloud)?;
    let distances = experts
        .iter()
        .map(|(id, v)| {
            if v.len() != e.len() {
                return Err(Error::DimensionMismatch {
                    expected: e.len(),
                    got: v.len(),
                });
            }
            let d2: f64 = v.iter().zip(&e).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok((id.clone(), libm::sqrt(d2)))
        })
        .collect::<Result<Vec<_>>>()?;
    gate_by_distance(&distances, mode, cutoff)
}

/// Weighted mixture of marginal predictions: the mean is the weighted mean,
/// the variance the weighted second moment minus the squared mean (computed
/// in the equivalent centered form).
pub fn mix_moments(weights: &[f64], preds: &[PosteriorPrediction]) -> Result<PosteriorPrediction> {
    let first = preds.first().ok_or_else(|| Error::InvalidArgument("no experts to mix".into()))?;
    if weights.len() != preds.len() {
        return Err(Error::DimensionMismatch {
            expected: preds.len(),
            got: weights.len(),
        });
    }
    let (n, m) = (first.n, first.m);
    if preds.iter().any(|p| p.n != n || p.m != m) {
        return Err(Error::SchemaMismatch("expert predictions differ in shape".into()));
    }
    let len = n * m;
    let mut mean = vec![0.0; len];
    for (w, p) in weights.iter().zip(preds) {
        for k in 0..len {
            mean[k] += w * p.mean[k];
        }
    }
    let mut var = vec![0.0; len];
    for (w, p) in weights.iter().zip(preds) {
        for k in 0..len {
            let (i, j) = (k / m, k % m);
            let dev = p.mean[k] - mean[k];
            var[k] += w * (p.variance(i, j) + dev * dev);
        }
    }
    for v in &mut var {
        if *v < -NEGATIVE_VARIANCE_TOL || v.is_nan() {
            return Err(Error::NegativeVariance(*v));
        }
        *v = v.max(0.0);
    }
    Ok(PosteriorPrediction::marginal(n, m, mean, var))
}

/// Mixture prediction of the gated experts over `candidates`.
pub fn mixture_predict(
    decision: &GatingDecision,
    experts: &[(String, &FittedSurrogate)],
    candidates: &CandidateSet,
    batch_size: usize,
) -> Result<PosteriorPrediction> {
    let mut weights = Vec::new();
    let mut preds = Vec::new();
    for (id, w) in &decision.selected {
        let model = experts
            .iter()
            .find(|(e, _)| e == id)
            .map(|(_, m)| *m)
            .ok_or_else(|| Error::SchemaMismatch(format!("no fitted expert for part {id}")))?;
        weights.push(*w);
        preds.push(model.predict(candidates, false, batch_size)?);
    }
    mix_moments(&weights, &preds)
}
