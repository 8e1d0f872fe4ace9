use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cloud::{choose_k_emb, resample, PointCloud, ResampleMode};
use crate::nn::{tanh_backward, tanh_inplace, Adam, Dense};
use crate::{Error, Result};

/// Accuracy below which training is reported as not converged.
const ACCURACY_WARNING: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub resample_mode: ResampleMode,
    /// Points per resampled cloud; chosen from the cloud sizes when unset.
    pub k_emb: Option<usize>,
    /// Embedding width; equal to `k_emb` when unset.
    pub embedding_dim: Option<usize>,
    pub hidden: [usize; 2],
    pub max_steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            resample_mode: ResampleMode::DownSample,
            k_emb: None,
            embedding_dim: None,
            hidden: [32, 64],
            max_steps: 500,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

/// Per-point network `3 -> h1 -> h2 -> e` with tanh activations, global max
/// pooling over points, and a linear part classifier on the pooled vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricEncoder {
    pub k_emb: usize,
    pub embedding_dim: usize,
    pub resample_mode: ResampleMode,
    pub seed: u64,
    /// Part ids in classifier output order.
    pub labels: Vec<String>,
    coord_mean: [f64; 3],
    coord_std: [f64; 3],
    layers: [Dense; 3],
    classifier: Dense,
    params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EncoderTraining {
    pub encoder: GeometricEncoder,
    /// `(part_id, embedding)` in label order.
    pub embeddings: Vec<(String, Vec<f64>)>,
    pub accuracy: f64,
    pub steps: usize,
    pub warning: Option<String>,
}

/// Activations of one cloud, kept for backprop.
struct Pass {
    h: [Vec<f64>; 3],
    pooled: Vec<f64>,
    winner: Vec<usize>,
}

impl GeometricEncoder {
    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    fn standardize(&self, cloud: &PointCloud) -> Vec<[f64; 3]> {
        cloud
            .points
            .iter()
            .map(|p| {
                let mut q = [0.0; 3];
                for k in 0..3 {
                    q[k] = (p[k] - self.coord_mean[k]) / self.coord_std[k];
                }
                q
            })
            .collect()
    }

    fn forward(&self, points: &[[f64; 3]]) -> Pass {
        let widths = [self.layers[0].n_out, self.layers[1].n_out, self.layers[2].n_out];
        let n = points.len();
        let mut h = [vec![0.0; n * widths[0]], vec![0.0; n * widths[1]], vec![0.0; n * widths[2]]];
        for (i, p) in points.iter().enumerate() {
            let (h0, rest) = h.split_at_mut(1);
            let (h1, h2) = rest.split_at_mut(1);
            let a = &mut h0[0][i * widths[0]..(i + 1) * widths[0]];
            self.layers[0].forward(&self.params, p, a);
            tanh_inplace(a);
            let b = &mut h1[0][i * widths[1]..(i + 1) * widths[1]];
            self.layers[1].forward(&self.params, a, b);
            tanh_inplace(b);
            let c = &mut h2[0][i * widths[2]..(i + 1) * widths[2]];
            self.layers[2].forward(&self.params, b, c);
            tanh_inplace(c);
        }
        let e = widths[2];
        let mut pooled = vec![f64::NEG_INFINITY; e];
        let mut winner = vec![0; e];
        for i in 0..n {
            for f in 0..e {
                let v = h[2][i * e + f];
                if v > pooled[f] {
                    pooled[f] = v;
                    winner[f] = i;
                }
            }
        }
        Pass { h, pooled, winner }
    }

    fn prepared(&self, cloud: &PointCloud) -> Result<Vec<[f64; 3]>> {
        let sampled = resample(cloud, self.k_emb, self.resample_mode, self.seed)?;
        Ok(self.standardize(&sampled))
    }

    /// Max-pooled embedding of a cloud, resampled the same way as in training.
    pub fn embed(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        Ok(self.forward(&self.prepared(cloud)?).pooled)
    }

    fn logits(&self, pooled: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.classifier.n_out];
        self.classifier.forward(&self.params, pooled, &mut out);
        out
    }

    /// Index of the most likely part.
    pub fn classify(&self, cloud: &PointCloud) -> Result<usize> {
        let logits = self.logits(&self.embed(cloud)?);
        Ok(crate::math::argmax(&logits).unwrap_or(0))
    }
}

/// Trains the encoder to tell the given parts apart and returns the
/// embedding of every part.
pub fn train_encoder(clouds: &[PointCloud], config: &EncoderConfig) -> Result<EncoderTraining> {
    if clouds.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "the encoder needs at least 2 parts, got {}",
            clouds.len()
        )));
    }
    for (i, c) in clouds.iter().enumerate() {
        if clouds[..i].iter().any(|o| o.part_id == c.part_id) {
            return Err(Error::InvalidArgument(format!("duplicate part {}", c.part_id)));
        }
    }
    let k_emb = match config.k_emb {
        Some(k) => k,
        None => choose_k_emb(clouds, config.resample_mode)?,
    };
    let embedding_dim = config.embedding_dim.unwrap_or(k_emb);
    if k_emb == 0 || embedding_dim == 0 || config.hidden.contains(&0) {
        return Err(Error::InvalidArgument("encoder widths must be at least 1".into()));
    }
    let sampled: Vec<PointCloud> = clouds
        .iter()
        .map(|c| resample(c, k_emb, config.resample_mode, config.seed))
        .collect::<Result<_>>()?;

    let mut coord_mean = [0.0; 3];
    let mut coord_std = [1.0; 3];
    for k in 0..3 {
        let (m, s) = crate::math::mean_std(sampled.iter().flat_map(|c| c.points.iter().map(move |p| p[k])));
        coord_mean[k] = m;
        coord_std[k] = s;
    }

    let [h1, h2] = config.hidden;
    let l0 = Dense::new(0, 3, h1);
    let l1 = Dense::new(l0.end(), h1, h2);
    let l2 = Dense::new(l1.end(), h2, embedding_dim);
    let classifier = Dense::new(l2.end(), embedding_dim, clouds.len());
    let mut params = vec![0.0; classifier.end()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for layer in [&l0, &l1, &l2, &classifier] {
        layer.init(&mut params, 1.0, &mut rng);
    }
    let mut enc = GeometricEncoder {
        k_emb,
        embedding_dim,
        resample_mode: config.resample_mode,
        seed: config.seed,
        labels: clouds.iter().map(|c| c.part_id.clone()).collect(),
        coord_mean,
        coord_std,
        layers: [l0, l1, l2],
        classifier,
        params,
    };
    let inputs: Vec<Vec<[f64; 3]>> = sampled.iter().map(|c| enc.standardize(c)).collect();

    let mut adam = Adam::new(enc.params.len(), config.learning_rate);
    let mut grad = vec![0.0; enc.params.len()];
    let mut steps = 0;
    let mut accuracy;
    loop {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut correct = 0;
        for (label, pts) in inputs.iter().enumerate() {
            let pass = enc.forward(pts);
            let logits = enc.logits(&pass.pooled);
            if crate::math::argmax(&logits) == Some(label) {
                correct += 1;
            }
            backward(&enc, pts, &pass, &logits, label, inputs.len() as f64, &mut grad);
        }
        accuracy = correct as f64 / inputs.len() as f64;
        if accuracy == 1.0 || steps >= config.max_steps {
            break;
        }
        adam.descend(&mut enc.params, &grad);
        steps += 1;
    }

    let embeddings = inputs
        .iter()
        .zip(&enc.labels)
        .map(|(pts, id)| (id.clone(), enc.forward(pts).pooled))
        .collect();
    let warning = (accuracy < ACCURACY_WARNING).then(|| {
        format!(
            "encoder reached only {:.0}% training accuracy after {steps} steps",
            accuracy * 100.0
        )
    });
    Ok(EncoderTraining {
        encoder: enc,
        embeddings,
        accuracy,
        steps,
        warning,
    })
}

/// Adds the cross-entropy gradient of one cloud, scaled by `1 / batch`.
fn backward(enc: &GeometricEncoder, pts: &[[f64; 3]], pass: &Pass, logits: &[f64], label: usize, batch: f64, grad: &mut [f64]) {
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| libm::exp(l - top)).collect();
    let total: f64 = exp.iter().sum();
    let dlogits: Vec<f64> = exp
        .iter()
        .enumerate()
        .map(|(k, e)| (e / total - if k == label { 1.0 } else { 0.0 }) / batch)
        .collect();
    let e = enc.embedding_dim;
    let mut dpooled = vec![0.0; e];
    enc.classifier.backward(&enc.params, &pass.pooled, &dlogits, grad, Some(&mut dpooled));

    // Only points that won the max for some feature receive gradient.
    let mut rows: Vec<usize> = pass.winner.clone();
    rows.sort_unstable();
    rows.dedup();
    let [w0, w1, _] = [enc.layers[0].n_out, enc.layers[1].n_out, e];
    for &i in &rows {
        let mut d2 = vec![0.0; e];
        for f in 0..e {
            if pass.winner[f] == i {
                d2[f] = dpooled[f];
            }
        }
        let h2 = &pass.h[2][i * e..(i + 1) * e];
        let h1 = &pass.h[1][i * w1..(i + 1) * w1];
        let h0 = &pass.h[0][i * w0..(i + 1) * w0];
        tanh_backward(h2, &mut d2);
        let mut d1 = vec![0.0; w1];
        enc.layers[2].backward(&enc.params, h1, &d2, grad, Some(&mut d1));
        tanh_backward(h1, &mut d1);
        let mut d0 = vec![0.0; w0];
        enc.layers[1].backward(&enc.params, h0, &d1, grad, Some(&mut d0));
        tanh_backward(h0, &mut d0);
        enc.layers[0].backward(&enc.params, &pts[i], &d0, grad, None);
    }
}
