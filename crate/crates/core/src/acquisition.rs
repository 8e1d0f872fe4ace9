//! Expected improvement, attention scaling and sample selection.
//!
//! Everything follows the minimization convention: a candidate improves when
//! its (attention-transformed) outputs fall below the transformed target
//! `a * f_star`. Attention is applied to the posterior before scoring:
//! `mu' = a * mu`, `sigma' = |a| * sigma`, `f' = a * f_star`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::math::{argmax, normal_cdf, normal_pdf};
use crate::space::CandidateSet;
use crate::{DesignPoint, Error, PosteriorPrediction, Result};

/// Default number of Monte-Carlo draws per candidate.
pub const DEFAULT_N_MC: usize = 10_000;
/// Largest negative eigenvalue tolerated in a covariance block.
const PSD_TOL: f64 = 1e-9;

/// Attention for L1..L7: double weight on stretch, thinning and cracks, and a
/// negative sign on the safe class so that it is maximized.
pub const DEFAULT_ATTENTION: [f64; 7] = [2.0, 1.0, 1.0, -1.0, 1.0, 2.0, 2.0];
/// A fully safe part.
pub const DEFAULT_F_STAR: [f64; 7] = [0.0, 0.0, 0.0, 100.0, 0.0, 0.0, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSpec {
    pub f_star: Vec<f64>,
    pub attention: Vec<f64>,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            f_star: DEFAULT_F_STAR.to_vec(),
            attention: DEFAULT_ATTENTION.to_vec(),
        }
    }
}

impl TargetSpec {
    pub fn new(f_star: Vec<f64>, attention: Vec<f64>) -> Result<Self> {
        let spec = Self { f_star, attention };
        spec.validate()?;
        Ok(spec)
    }

    /// Default attention with a custom target.
    pub fn with_f_star(f_star: Vec<f64>) -> Result<Self> {
        Self::new(f_star, DEFAULT_ATTENTION.to_vec())
    }

    pub fn len(&self) -> usize {
        self.f_star.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_star.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.f_star.len() != self.attention.len() {
            return Err(Error::DimensionMismatch {
                expected: self.f_star.len(),
                got: self.attention.len(),
            });
        }
        if self.f_star.is_empty() {
            return Err(Error::InvalidArgument("target spec has no outputs".into()));
        }
        if self.f_star.iter().chain(&self.attention).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("target spec values must be finite".into()));
        }
        Ok(())
    }

    /// Attention-weighted distance to the target, `sum_j a_j (y_j - f_j)`.
    /// Lower is better.
    pub fn scalarize(&self, y: &[f64]) -> f64 {
        y.iter()
            .zip(&self.f_star)
            .zip(&self.attention)
            .map(|((y, f), a)| a * (y - f))
            .sum()
    }

    fn check(&self, m: usize) -> Result<()> {
        self.validate()?;
        if self.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: self.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EiMethod {
    #[default]
    Marginal,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionScores {
    pub n: usize,
    pub m: usize,
    /// `n x m`, row-major, all entries non-negative.
    pub ei: Vec<f64>,
    /// Row sums of `ei`.
    pub sum: Vec<f64>,
    pub method: EiMethod,
    pub n_mc: Option<usize>,
}

impl AcquisitionScores {
    pub fn new(n: usize, m: usize, ei: Vec<f64>, method: EiMethod, n_mc: Option<usize>) -> Self {
        let sum = ei.chunks(m).map(|r| r.iter().sum()).collect();
        Self {
            n,
            m,
            ei,
            sum,
            method,
            n_mc,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.ei[i * self.m..(i + 1) * self.m]
    }

    /// Sum of EI over every candidate and output.
    pub fn total(&self) -> f64 {
        self.sum.iter().sum()
    }
}

/// Closed-form EI of one transformed output.
pub fn expected_improvement(f_star: f64, mean: f64, sigma: f64) -> f64 {
    let gap = f_star - mean;
    if sigma <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (gap * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

/// Marginal EI per output. Full covariances are accepted; only their
/// diagonal is used.
pub fn ei_marginal(pred: &PosteriorPrediction, target: &TargetSpec) -> Result<AcquisitionScores> {
    let (n, m) = (pred.n, pred.m);
    target.check(m)?;
    let mut ei = vec![0.0; n * m];
    for i in 0..n {
        let mu = pred.mean_row(i);
        for j in 0..m {
            let var = pred.variance(i, j);
            if var < 0.0 || var.is_nan() {
                return Err(Error::NegativeVariance(var));
            }
            let a = target.attention[j];
            ei[i * m + j] = expected_improvement(a * target.f_star[j], a * mu[j], a.abs() * libm::sqrt(var));
        }
    }
    Ok(AcquisitionScores::new(n, m, ei, EiMethod::Marginal, None))
}

/// Monte-Carlo EI from joint draws of the transformed posterior. Candidate
/// `i` uses its own ChaCha8 stream `i` under `seed`, so results do not depend
/// on how candidates are batched.
pub fn ei_monte_carlo(pred: &PosteriorPrediction, target: &TargetSpec, n_mc: usize, seed: u64) -> Result<AcquisitionScores> {
    let (n, m) = (pred.n, pred.m);
    target.check(m)?;
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    if !pred.is_full() {
        return Err(Error::InvalidArgument(
            "Monte-Carlo EI needs the full covariance per candidate".into(),
        ));
    }
    let a = &target.attention;
    let f: Vec<f64> = target.f_star.iter().zip(a).map(|(f, a)| a * f).collect();
    let mut ei = vec![0.0; n * m];
    let mut z = vec![0.0; m];
    let mut acc = vec![0.0; m];
    for i in 0..n {
        let block = pred.block(i).expect("full covariance");
        let mu: Vec<f64> = pred.mean_row(i).iter().zip(a).map(|(mu, a)| a * mu).collect();
        let root = sqrt_factor(block, a, m)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        acc.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..n_mc {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            for j in 0..m {
                let s: f64 = mu[j] + (0..m).map(|k| root[j * m + k] * z[k]).sum::<f64>();
                let gain = f[j] - s;
                if gain > 0.0 {
                    acc[j] += gain;
                }
            }
        }
        for j in 0..m {
            ei[i * m + j] = acc[j] / n_mc as f64;
        }
    }
    Ok(AcquisitionScores::new(n, m, ei, EiMethod::MonteCarlo, Some(n_mc)))
}

/// `R` with `R R^T = D S D`, `D = diag(a)`, from a symmetric eigendecomposition.
fn sqrt_factor(block: &[f64], a: &[f64], m: usize) -> Result<Vec<f64>> {
    if block.iter().all(|v| *v == 0.0) {
        return Ok(vec![0.0; m * m]);
    }
    let s = DMatrix::from_fn(m, m, |r, c| a[r] * a[c] * 0.5 * (block[r * m + c] + block[c * m + r]));
    let eig = SymmetricEigen::new(s);
    let mut root = vec![0.0; m * m];
    for k in 0..m {
        let lambda = eig.eigenvalues[k];
        if lambda < -PSD_TOL || lambda.is_nan() {
            return Err(Error::NegativeVariance(lambda));
        }
        let scale = libm::sqrt(lambda.max(0.0));
        for r in 0..m {
            root[r * m + k] = eig.eigenvectors[(r, k)] * scale;
        }
    }
    Ok(root)
}

fn check_shape(scores: &AcquisitionScores, candidates: &CandidateSet) -> Result<()> {
    if candidates.is_empty() || scores.n == 0 {
        return Err(Error::EmptyCandidates);
    }
    if scores.n != candidates.len() {
        return Err(Error::DimensionMismatch {
            expected: candidates.len(),
            got: scores.n,
        });
    }
    Ok(())
}

/// The candidate with the largest EI sum (lowest index on ties).
pub fn select_best(scores: &AcquisitionScores, candidates: &CandidateSet) -> Result<(usize, DesignPoint)> {
    check_shape(scores, candidates)?;
    let i = argmax(&scores.sum).ok_or(Error::EmptyCandidates)?;
    Ok((i, candidates.design_point(i)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    HighestSum,
    PeakBased,
    CrowdingDistance,
}

/// Indices sorted by descending key, ties toward the lowest index.
fn descending(keys: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&i, &j| keys[j].partial_cmp(&keys[i]).unwrap_or(Ordering::Equal).then(i.cmp(&j)));
    order
}

/// Strict local maxima of a sequence. Endpoints are compared with their only
/// neighbor; a single value is a peak.
pub fn peaks(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    (0..n)
        .filter(|&i| (i == 0 || values[i] > values[i - 1]) && (i + 1 == n || values[i] > values[i + 1]))
        .collect()
}

/// `p` distinct candidates. The first is always [`select_best`]; the rest
/// follow `strategy`.
pub fn select_parallel(
    scores: &AcquisitionScores,
    candidates: &CandidateSet,
    p: usize,
    strategy: Strategy,
) -> Result<Vec<(usize, DesignPoint)>> {
    check_shape(scores, candidates)?;
    if p == 0 {
        return Err(Error::InvalidArgument("p must be at least 1".into()));
    }
    if p > scores.n {
        return Err(Error::InvalidArgument(format!(
            "cannot select {p} samples from {} candidates",
            scores.n
        )));
    }
    let (best, _) = select_best(scores, candidates)?;
    let mut chosen = vec![best];
    let mut taken = vec![false; scores.n];
    taken[best] = true;
    let mut take_from = |order: &mut dyn Iterator<Item = usize>, chosen: &mut Vec<usize>| {
        for i in order {
            if chosen.len() == p {
                break;
            }
            if !taken[i] {
                taken[i] = true;
                chosen.push(i);
            }
        }
    };
    if p > 1 {
        match strategy {
            Strategy::HighestSum => take_from(&mut descending(&scores.sum).into_iter(), &mut chosen),
            Strategy::PeakBased => {
                let peak = peaks(&scores.sum);
                let keys: Vec<f64> = peak.iter().map(|&i| scores.sum[i]).collect();
                let mut ranked = descending(&keys).into_iter().map(|k| peak[k]);
                take_from(&mut ranked, &mut chosen);
                take_from(&mut descending(&scores.sum).into_iter(), &mut chosen);
            }
            Strategy::CrowdingDistance => {
                let cd = crowding_distance(&scores.ei, scores.n, scores.m)?;
                take_from(&mut descending(&cd).into_iter(), &mut chosen);
            }
        }
    }
    Ok(chosen.into_iter().map(|i| (i, candidates.design_point(i))).collect())
}

/// Crowding distance of each row of an `n x m` matrix. Per column, rows are
/// sorted by value; interior rows gain the normalized gap between their
/// neighbors and the two extremes become infinite. A constant column adds
/// nothing to any row.
pub fn crowding_distance(values: &[f64], n: usize, m: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument("crowding distance needs at least 2 candidates".into()));
    }
    if values.len() != n * m {
        return Err(Error::DimensionMismatch {
            expected: n * m,
            got: values.len(),
        });
    }
    let mut cd = vec![0.0; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for j in 0..m {
        let v = |i: usize| values[i * m + j];
        order.clear();
        order.extend(0..n);
        order.sort_by(|&a, &b| v(a).partial_cmp(&v(b)).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        let range = v(order[n - 1]) - v(order[0]);
        if !(range > 0.0) {
            continue;
        }
        cd[order[0]] = f64::INFINITY;
        cd[order[n - 1]] = f64::INFINITY;
        for k in 1..n - 1 {
            cd[order[k]] += (v(order[k + 1]) - v(order[k - 1])) / range;
        }
    }
    Ok(cd)
}
