//! Multi-output Gaussian-process surrogate.
//!
//! Three flavors share one code path:
//!
//! * `independent`: zero prior mean, one Matern kernel shared by every output,
//!   outputs uncorrelated.
//! * `coupled_mean`: as above, but the prior mean of all outputs comes from a
//!   shared latent space (`mu = W2 tanh(W1 z + b1) + b2`).
//! * `lcm`: coupled mean plus a linear model of coregionalization, i.e. the
//!   outputs are linear combinations of `Q` latent GPs with their own kernels:
//!   `cov(f_a(x), f_b(x')) = sum_q B_q[a, b] k_q(z, z')` with
//!   `B_q = w_q w_q^T + diag(kappa_q)`.
//!
//! Inputs are z-scored per dimension and optionally passed through a latent
//! input encoder (one tanh hidden layer of width `2d`). Targets are z-scored
//! per output. Hyperparameters are fitted by Adam ascent on the log marginal
//! likelihood in standardized units; predictions are reported in original
//! units and describe the latent function (observation noise excluded).

mod kernel;
mod layout;
mod objective;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use kernel::Smoothness;
pub use layout::{Hyperparameters, MlpWeights};

use crate::math::mean_std;
use crate::nn::Adam;
use crate::space::CandidateSet;
use crate::{Error, PosteriorPrediction, Result};
use layout::Layout;
use objective::{evaluate, lengthscales, scaled, sq_dist};

/// Variance tolerance below zero that is clamped instead of rejected.
const NEGATIVE_VARIANCE_TOL: f64 = 1e-9;
/// Maximum number of tenfold noise-floor escalations.
const MAX_JITTER_ESCALATIONS: u32 = 6;
/// A training step that lowers the objective by more than this is undone
/// and the learning rate halved.
const MAX_OBJECTIVE_DROP: f64 = 0.5;
const MIN_LEARNING_RATE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    Independent,
    CoupledMean,
    #[default]
    Lcm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputEncoding {
    /// The kernel sees the standardized inputs directly.
    Identity,
    /// A small tanh network maps inputs to the latent input space.
    #[default]
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub max_steps: usize,
    pub learning_rate: f64,
    /// Training stops once the objective changes by less than this.
    pub convergence_tol: f64,
    /// Noise variance at initialization (standardized units).
    pub initial_noise: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            max_steps: 500,
            learning_rate: 0.05,
            convergence_tol: 1e-6,
            initial_noise: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub flavor: Flavor,
    pub kernel: Smoothness,
    pub encoder: InputEncoding,
    /// Latent input width; defaults to `2d` (or `d` for the identity encoding).
    pub latent_input_dim: Option<usize>,
    /// Latent output width of the mean network; defaults to `m`.
    pub latent_output_dim: Option<usize>,
    /// LCM only; defaults to `m`.
    pub num_latent_gps: Option<usize>,
    /// Lower bound on the noise variance (standardized units).
    pub noise_floor: f64,
    pub training: TrainingConfig,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            flavor: Flavor::Lcm,
            kernel: Smoothness::FiveHalves,
            encoder: InputEncoding::Mlp,
            latent_input_dim: None,
            latent_output_dim: None,
            num_latent_gps: None,
            noise_floor: 1e-6,
            training: TrainingConfig::default(),
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.latent_input_dim == Some(0) || self.latent_output_dim == Some(0) {
            return bad("latent dimensions must be at least 1".into());
        }
        if self.num_latent_gps == Some(0) {
            return bad("num_latent_gps must be at least 1".into());
        }
        if !(self.noise_floor > 0.0) {
            return bad(format!("noise_floor must be positive, got {}", self.noise_floor));
        }
        if !(self.training.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        if !(self.training.initial_noise > self.noise_floor) {
            return bad("initial_noise must exceed noise_floor".into());
        }
        Ok(())
    }
}

/// Training inputs (`n x d`) and targets (`n x m`), row-major, original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingData {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl TrainingData {
    pub fn from_rows(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        let d = x.first().map_or(0, Vec::len);
        let m = y.first().map_or(0, Vec::len);
        if x.iter().any(|r| r.len() != d) || y.iter().any(|r| r.len() != m) {
            return Err(Error::SchemaMismatch("ragged training rows".into()));
        }
        if x.iter().chain(y).flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("training data must be finite".into()));
        }
        Ok(Self {
            n: x.len(),
            d,
            m,
            x: x.concat(),
            y: y.concat(),
        })
    }
}

/// Diagnostics from hyperparameter fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub steps: usize,
    pub converged: bool,
    /// Negative log marginal likelihood after each evaluation.
    pub loss_trace: Vec<f64>,
    /// Number of tenfold noise-floor escalations that were needed.
    pub jitter_escalations: u32,
}

#[derive(Debug, Clone)]
struct Standardizer {
    x_mean: Vec<f64>,
    x_std: Vec<f64>,
    y_mean: Vec<f64>,
    y_std: Vec<f64>,
}

impl Standardizer {
    fn new(data: &TrainingData) -> Self {
        let col = |v: &[f64], width: usize, j: usize| mean_std(v.chunks(width).map(move |r| r[j]));
        let (x_mean, x_std) = (0..data.d).map(|j| col(&data.x, data.d, j)).unzip();
        let (y_mean, y_std) = (0..data.m).map(|j| col(&data.y, data.m, j)).unzip();
        Self {
            x_mean,
            x_std,
            y_mean,
            y_std,
        }
    }

    fn x(&self, x: &[f64]) -> Vec<f64> {
        let d = self.x_mean.len();
        x.iter()
            .enumerate()
            .map(|(k, v)| (v - self.x_mean[k % d]) / self.x_std[k % d])
            .collect()
    }

    fn y(&self, y: &[f64]) -> Vec<f64> {
        let m = self.y_mean.len();
        y.iter()
            .enumerate()
            .map(|(k, v)| (v - self.y_mean[k % m]) / self.y_std[k % m])
            .collect()
    }
}

/// A conditioned surrogate. Immutable; `predict` may be called concurrently.
#[derive(Debug, Clone)]
pub struct FittedSurrogate {
    config: SurrogateConfig,
    layout: Layout,
    params: Vec<f64>,
    floor: f64,
    data: TrainingData,
    scale: Standardizer,
    xs: Vec<f64>,
    ys: Vec<f64>,
    z: Vec<f64>,
    factor: DMatrix<f64>,
    alpha: Vec<f64>,
    lml: f64,
    report: FitReport,
}

/// Fits hyperparameters by maximizing the marginal likelihood.
///
/// Needs at least two training rows. If the training covariance is not
/// positive definite the noise floor is raised tenfold, up to six times.
pub fn fit(data: &TrainingData, config: &SurrogateConfig) -> Result<FittedSurrogate> {
    config.validate()?;
    if data.n < 2 {
        return Err(Error::InsufficientData(format!(
            "the surrogate needs at least 2 observations, got {}",
            data.n
        )));
    }
    let layout = Layout::new(config, data.d, data.m)?;
    let scale = Standardizer::new(data);
    let xs = scale.x(&data.x);
    let ys = scale.y(&data.y);
    let mut params = layout.initial(config);
    let mut floor = config.noise_floor;
    let mut escalations = 0;
    let nu = config.kernel;

    let mut adam = Adam::new(layout.len, config.training.learning_rate);
    let mut trace = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    // Last accepted point: objective and parameters.
    let mut accepted: Option<(f64, Vec<f64>)> = None;
    let mut converged = false;
    let mut steps = 0;
    let mut neg_grad = vec![0.0; layout.len];
    while steps < config.training.max_steps {
        let eval = match evaluate(&layout, &params, &xs, &ys, data.n, floor, nu, true) {
            Ok(e) => Some(e),
            Err(Error::NotPositiveDefinite) if accepted.is_some() => None,
            Err(Error::NotPositiveDefinite) if escalations < MAX_JITTER_ESCALATIONS => {
                escalations += 1;
                floor *= 10.0;
                continue;
            }
            Err(e) => return Err(e),
        };
        steps += 1;
        let grad = eval.as_ref().and_then(|e| e.grad.as_ref());
        let usable = eval.is_some() && grad.is_some_and(|g| g.iter().all(|v| v.is_finite()));
        let dropped = match (&eval, &accepted) {
            (Some(e), Some((prev, _))) => e.lml < prev - MAX_OBJECTIVE_DROP,
            _ => false,
        };
        if !usable || dropped {
            // Overshoot: go back to the last accepted point with a smaller step.
            let Some((_, prev)) = &accepted else { break };
            params.copy_from_slice(prev);
            adam.learning_rate *= 0.5;
            adam.reset();
            if adam.learning_rate < MIN_LEARNING_RATE {
                break;
            }
            continue;
        }
        let eval = eval.expect("usable evaluation");
        trace.push(-eval.lml);
        if best.as_ref().is_none_or(|b| eval.lml > b.0) {
            best = Some((eval.lml, params.clone()));
        }
        if trace.len() >= 2 && (trace[trace.len() - 1] - trace[trace.len() - 2]).abs() < config.training.convergence_tol {
            converged = true;
            break;
        }
        accepted = Some((eval.lml, params.clone()));
        for (ng, g) in neg_grad.iter_mut().zip(eval.grad.as_ref().expect("gradient requested")) {
            *ng = -g;
        }
        adam.descend(&mut params, &neg_grad);
        layout.clamp(&mut params);
    }
    if let Some((_, p)) = best {
        params = p;
    }
    let report = FitReport {
        steps,
        converged,
        loss_trace: trace,
        jitter_escalations: escalations,
    };
    FittedSurrogate::condition(config.clone(), layout, params, floor, data.clone(), scale, xs, ys, report)
}

impl FittedSurrogate {
    #[allow(clippy::too_many_arguments)]
    fn condition(
        config: SurrogateConfig,
        layout: Layout,
        params: Vec<f64>,
        mut floor: f64,
        data: TrainingData,
        scale: Standardizer,
        xs: Vec<f64>,
        ys: Vec<f64>,
        mut report: FitReport,
    ) -> Result<Self> {
        loop {
            match evaluate(&layout, &params, &xs, &ys, data.n, floor, config.kernel, false) {
                Ok(eval) => {
                    return Ok(Self {
                        config,
                        layout,
                        params,
                        floor,
                        data,
                        scale,
                        xs,
                        ys,
                        z: eval.z,
                        factor: eval.factor,
                        alpha: eval.alpha,
                        lml: eval.lml,
                        report,
                    })
                }
                Err(Error::NotPositiveDefinite) if report.jitter_escalations < MAX_JITTER_ESCALATIONS => {
                    report.jitter_escalations += 1;
                    floor *= 10.0;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Re-conditions the same training data on explicit hyperparameters.
    pub fn with_hyperparameters(&self, hyper: &Hyperparameters) -> Result<Self> {
        let params = self.layout.from_hyperparameters(hyper, self.floor)?;
        self.with_raw_parameters(params)
    }

    /// Re-conditions on a flat parameter vector (see [`parameter_names`]).
    ///
    /// [`parameter_names`]: FittedSurrogate::parameter_names
    pub fn with_raw_parameters(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.layout.len {
            return Err(Error::DimensionMismatch {
                expected: self.layout.len,
                got: params.len(),
            });
        }
        let report = FitReport {
            steps: 0,
            converged: false,
            loss_trace: Vec::new(),
            jitter_escalations: 0,
        };
        Self::condition(
            self.config.clone(),
            self.layout.clone(),
            params,
            self.floor,
            self.data.clone(),
            self.scale.clone(),
            self.xs.clone(),
            self.ys.clone(),
            report,
        )
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.config
    }

    pub fn training_data(&self) -> &TrainingData {
        &self.data
    }

    pub fn report(&self) -> &FitReport {
        &self.report
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        self.layout.to_hyperparameters(&self.params, self.floor)
    }

    /// Noise floor in effect after any jitter escalation.
    pub fn noise_floor(&self) -> f64 {
        self.floor
    }

    pub fn raw_parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.layout.names()
    }

    /// Per-dimension mean and deviation used to standardize inputs.
    pub fn input_standardization(&self) -> (&[f64], &[f64]) {
        (&self.scale.x_mean, &self.scale.x_std)
    }

    /// Per-output mean and deviation used to standardize targets.
    pub fn target_standardization(&self) -> (&[f64], &[f64]) {
        (&self.scale.y_mean, &self.scale.y_std)
    }

    /// The training objective (standardized units) at the current parameters.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        Ok(self.lml)
    }

    /// The training objective at arbitrary flat parameters.
    pub fn objective_at(&self, params: &[f64]) -> Result<f64> {
        self.check_len(params)?;
        evaluate(&self.layout, params, &self.xs, &self.ys, self.data.n, self.floor, self.config.kernel, false)
            .map(|e| e.lml)
    }

    /// Analytic gradient of the training objective at flat parameters.
    pub fn objective_gradient_at(&self, params: &[f64]) -> Result<Vec<f64>> {
        self.check_len(params)?;
        evaluate(&self.layout, params, &self.xs, &self.ys, self.data.n, self.floor, self.config.kernel, true)
            .map(|e| e.grad.expect("gradient requested"))
    }

    fn check_len(&self, params: &[f64]) -> Result<()> {
        if params.len() == self.layout.len {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.layout.len,
                got: params.len(),
            })
        }
    }

    /// Posterior over the outputs at every candidate, evaluated in batches of
    /// `batch_size` rows. With `full_covariance` each candidate carries its
    /// `m x m` block; otherwise only the marginal variances.
    pub fn predict(&self, candidates: &CandidateSet, full_covariance: bool, batch_size: usize) -> Result<PosteriorPrediction> {
        if candidates.dim() != self.data.d {
            return Err(Error::DimensionMismatch {
                expected: self.data.d,
                got: candidates.dim(),
            });
        }
        if candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let batch = batch_size.max(1);
        let d = self.data.d;
        let parts = candidates
            .points
            .chunks(batch * d)
            .map(|rows| self.predict_rows(rows, full_covariance))
            .collect::<Result<Vec<_>>>()?;
        PosteriorPrediction::concat(parts)
    }

    /// Posterior at raw input rows (row-major, original units).
    pub fn predict_rows(&self, rows: &[f64], full_covariance: bool) -> Result<PosteriorPrediction> {
        let (d, m, l, n) = (self.data.d, self.data.m, self.layout.l, self.data.n);
        if rows.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: rows.len() % d,
            });
        }
        let b = rows.len() / d;
        let xs = self.scale.x(rows);
        let (_, zstar) = self.layout.encode(&self.params, &xs, b);
        let (_, mu) = self.layout.mean(&self.params, &zstar, b);
        let coreg = self.layout.coregionalization(&self.params);
        let nu = self.config.kernel;
        let q = self.layout.q;
        let ls: Vec<Vec<f64>> = (0..q).map(|g| lengthscales(&self.layout, &self.params, g)).collect();
        let cross: Vec<Vec<f64>> = ls
            .iter()
            .map(|s| {
                let zt = scaled(&self.z, s);
                let zc = scaled(&zstar, s);
                let mut k = vec![0.0; n * b];
                for i in 0..n {
                    for c in 0..b {
                        k[i * b + c] = nu.value(sq_dist(&zt[i * l..(i + 1) * l], &zc[c * l..(c + 1) * l]));
                    }
                }
                k
            })
            .collect();

        let mut mean = mu;
        let mut blocks = vec![0.0; b * m * m];
        if self.layout.log_scale.is_some() {
            let s2 = coreg[0][0];
            let kstar = DMatrix::from_fn(n, b, |i, c| s2 * cross[0][i * b + c]);
            let v = self
                .factor
                .solve_lower_triangular(&kstar)
                .ok_or(Error::NotPositiveDefinite)?;
            for c in 0..b {
                let reduction: f64 = v.column(c).iter().map(|x| x * x).sum();
                let var = s2 - reduction;
                for a in 0..m {
                    let dot: f64 = (0..n).map(|i| kstar[(i, c)] * self.alpha[a * n + i]).sum();
                    mean[c * m + a] += dot;
                    blocks[c * m * m + a * m + a] = var;
                }
            }
        } else {
            let nm = n * m;
            let kstar = DMatrix::from_fn(nm, b * m, |r, col| {
                let (a, i) = (r / n, r % n);
                let (c, o) = (col / m, col % m);
                (0..q).map(|g| coreg[g][a * m + o] * cross[g][i * b + c]).sum()
            });
            let v = self
                .factor
                .solve_lower_triangular(&kstar)
                .ok_or(Error::NotPositiveDefinite)?;
            for c in 0..b {
                for o in 0..m {
                    let col = kstar.column(c * m + o);
                    let dot: f64 = col.iter().zip(&self.alpha).map(|(x, y)| x * y).sum();
                    mean[c * m + o] += dot;
                }
                for a in 0..m {
                    for o in 0..=a {
                        let prior: f64 = (0..q).map(|g| coreg[g][a * m + o]).sum();
                        let red = v.column(c * m + a).dot(&v.column(c * m + o));
                        let val = prior - red;
                        blocks[c * m * m + a * m + o] = val;
                        blocks[c * m * m + o * m + a] = val;
                    }
                }
            }
        }

        // Back to original units.
        let (ym, ysd) = (&self.scale.y_mean, &self.scale.y_std);
        for c in 0..b {
            for a in 0..m {
                mean[c * m + a] = mean[c * m + a] * ysd[a] + ym[a];
            }
        }
        let mut pred = PosteriorPrediction::full(b, m, mean, blocks);
        pred.clamp_variances(NEGATIVE_VARIANCE_TOL)?;
        if let crate::Covariance::Full(bl) = &mut pred.covariance {
            for block in bl.chunks_mut(m * m) {
                for a in 0..m {
                    for o in 0..m {
                        block[a * m + o] *= ysd[a] * ysd[o];
                    }
                }
            }
        }
        Ok(if full_covariance { pred } else { pred.into_marginal() })
    }

    /// Prior variance of each output (original units) at an input row,
    /// before conditioning on data.
    pub fn prior_variance(&self) -> Vec<f64> {
        let m = self.data.m;
        let coreg = self.layout.coregionalization(&self.params);
        (0..m)
            .map(|a| coreg.iter().map(|b| b[a * m + a]).sum::<f64>() * self.scale.y_std[a] * self.scale.y_std[a])
            .collect()
    }

    /// Prior mean (original units) at raw input rows.
    pub fn prior_mean(&self, rows: &[f64]) -> Vec<f64> {
        let b = rows.len() / self.data.d;
        let xs = self.scale.x(rows);
        let (_, z) = self.layout.encode(&self.params, &xs, b);
        let (_, mut mu) = self.layout.mean(&self.params, &z, b);
        let m = self.data.m;
        for (k, v) in mu.iter_mut().enumerate() {
            *v = *v * self.scale.y_std[k % m] + self.scale.y_mean[k % m];
        }
        mu
    }
}
