//! Flat parameter layout of a surrogate and the conversion to named
//! hyperparameters.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Flavor, InputEncoding, SurrogateConfig};
use crate::nn::{tanh_inplace, Dense};
use crate::{Error, Result};

/// Weights of a one-hidden-layer tanh network with a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpWeights {
    /// `hidden x in`, row-major.
    pub hidden_weights: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    /// `out x hidden`, row-major.
    pub output_weights: Vec<f64>,
    pub output_bias: Vec<f64>,
}

/// Named view of every trainable quantity of a surrogate. Lengthscales,
/// scales and variances are in standardized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Latent input encoder (absent for the identity encoding).
    pub encoder: Option<MlpWeights>,
    /// Per latent GP, one lengthscale per latent input dimension.
    pub lengthscales: Vec<Vec<f64>>,
    /// Signal variance of the shared kernel (independent and coupled-mean).
    pub output_scale: Option<f64>,
    /// LCM: per latent GP, its loading on each output.
    pub mixing: Vec<Vec<f64>>,
    /// LCM: per latent GP, a per-output independent variance.
    pub kappa: Vec<Vec<f64>>,
    /// Latent coupled mean network (absent for the independent flavor).
    pub mean: Option<MlpWeights>,
    /// Observation noise variance, including the noise floor.
    pub noise_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub d: usize,
    pub m: usize,
    /// Latent input dimension.
    pub l: usize,
    /// Number of latent GPs (1 for the shared-kernel flavors).
    pub q: usize,
    pub flavor: Flavor,
    pub encoder: Option<(Dense, Dense)>,
    pub log_lengthscale: Vec<usize>,
    pub log_scale: Option<usize>,
    pub mixing: Vec<usize>,
    pub log_kappa: Vec<usize>,
    pub mean: Option<(Dense, Dense)>,
    pub noise_raw: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(config: &SurrogateConfig, d: usize, m: usize) -> Result<Self> {
        let l = match config.encoder {
            InputEncoding::Identity => d,
            InputEncoding::Mlp => config.latent_input_dim.unwrap_or(2 * d),
        };
        let latent_out = config.latent_output_dim.unwrap_or(m);
        let q = match config.flavor {
            Flavor::Lcm => config.num_latent_gps.unwrap_or(m),
            _ => 1,
        };
        if l == 0 || latent_out == 0 || q == 0 || d == 0 || m == 0 {
            return Err(Error::InvalidArgument("surrogate dimensions must be at least 1".into()));
        }
        let mut off = 0;
        let encoder = match config.encoder {
            InputEncoding::Identity => None,
            InputEncoding::Mlp => {
                let hidden = Dense::new(off, d, 2 * d);
                let out = Dense::new(hidden.end(), 2 * d, l);
                off = out.end();
                Some((hidden, out))
            }
        };
        let mut log_lengthscale = Vec::with_capacity(q);
        for _ in 0..q {
            log_lengthscale.push(off);
            off += l;
        }
        let mut log_scale = None;
        let mut mixing = Vec::new();
        let mut log_kappa = Vec::new();
        if config.flavor == Flavor::Lcm {
            for _ in 0..q {
                mixing.push(off);
                off += m;
                log_kappa.push(off);
                off += m;
            }
        } else {
            log_scale = Some(off);
            off += 1;
        }
        let mean = match config.flavor {
            Flavor::Independent => None,
            Flavor::CoupledMean | Flavor::Lcm => {
                let to_latent = Dense::new(off, l, latent_out);
                let to_outputs = Dense::new(to_latent.end(), latent_out, m);
                off = to_outputs.end();
                Some((to_latent, to_outputs))
            }
        };
        let noise_raw = off;
        off += 1;
        Ok(Self {
            d,
            m,
            l,
            q,
            flavor: config.flavor,
            encoder,
            log_lengthscale,
            log_scale,
            mixing,
            log_kappa,
            mean,
            noise_raw,
            len: off,
        })
    }

    /// Starting point of training: unit lengthscales, noise 0.1, a zero mean
    /// network output, seeded random encoder and mixing weights.
    pub fn initial(&self, config: &SurrogateConfig) -> Vec<f64> {
        let mut p = vec![0.0; self.len];
        let mut rng = ChaCha8Rng::seed_from_u64(config.training.seed);
        if let Some((a, b)) = &self.encoder {
            a.init(&mut p, 1.0, &mut rng);
            b.init(&mut p, 1.0, &mut rng);
        }
        if let Some((a, b)) = &self.mean {
            a.init(&mut p, 1.0, &mut rng);
            for w in &mut p[b.offset..b.end()] {
                *w = 0.0;
            }
        }
        for (&mix, &kap) in self.mixing.iter().zip(&self.log_kappa) {
            for j in 0..self.m {
                let z: f64 = StandardNormal.sample(&mut rng);
                p[mix + j] = 0.3 * z;
                p[kap + j] = libm::log(1.0 / self.q as f64);
            }
        }
        let initial_noise = (config.training.initial_noise - config.noise_floor).max(1e-12);
        p[self.noise_raw] = libm::log(initial_noise);
        p
    }

    /// Keeps log-parameters inside a range where the kernel algebra stays
    /// well defined.
    pub fn clamp(&self, p: &mut [f64]) {
        for &o in &self.log_lengthscale {
            for v in &mut p[o..o + self.l] {
                *v = v.clamp(-6.0, 6.0);
            }
        }
        if let Some(o) = self.log_scale {
            p[o] = p[o].clamp(-8.0, 8.0);
        }
        for &o in &self.log_kappa {
            for v in &mut p[o..o + self.m] {
                *v = v.clamp(-12.0, 6.0);
            }
        }
        p[self.noise_raw] = p[self.noise_raw].clamp(-20.0, 4.0);
    }

    pub fn noise_variance(&self, p: &[f64], floor: f64) -> f64 {
        floor + libm::exp(p[self.noise_raw])
    }

    /// Coregionalization matrices `B_q` (row-major `m x m`). For the shared
    /// flavors this is the single matrix `s^2 I`.
    pub fn coregionalization(&self, p: &[f64]) -> Vec<Vec<f64>> {
        let m = self.m;
        match self.log_scale {
            Some(o) => {
                let s2 = libm::exp(p[o]);
                let mut b = vec![0.0; m * m];
                for j in 0..m {
                    b[j * m + j] = s2;
                }
                vec![b]
            }
            None => (0..self.q)
                .map(|g| {
                    let w = &p[self.mixing[g]..self.mixing[g] + m];
                    let k = &p[self.log_kappa[g]..self.log_kappa[g] + m];
                    let mut b = vec![0.0; m * m];
                    for a in 0..m {
                        for c in 0..m {
                            b[a * m + c] = w[a] * w[c];
                        }
                        b[a * m + a] += libm::exp(k[a]);
                    }
                    b
                })
                .collect(),
        }
    }

    /// Encodes standardized inputs (row-major `n x d`) into latent inputs
    /// (`n x l`), also returning the hidden activations for backprop.
    pub fn encode(&self, p: &[f64], x: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
        match &self.encoder {
            None => (Vec::new(), x.to_vec()),
            Some((hidden, out)) => {
                let mut h = vec![0.0; n * hidden.n_out];
                let mut z = vec![0.0; n * self.l];
                for i in 0..n {
                    let hi = &mut h[i * hidden.n_out..(i + 1) * hidden.n_out];
                    hidden.forward(p, &x[i * self.d..(i + 1) * self.d], hi);
                    tanh_inplace(hi);
                    out.forward(p, hi, &mut z[i * self.l..(i + 1) * self.l]);
                }
                (h, z)
            }
        }
    }

    /// Prior mean (`n x m`) at latent inputs, with the latent output
    /// activations (`n x latent_out`) for backprop.
    pub fn mean(&self, p: &[f64], z: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
        let m = self.m;
        match &self.mean {
            None => (Vec::new(), vec![0.0; n * m]),
            Some((to_latent, to_outputs)) => {
                let k = to_latent.n_out;
                let mut u = vec![0.0; n * k];
                let mut mu = vec![0.0; n * m];
                for i in 0..n {
                    let ui = &mut u[i * k..(i + 1) * k];
                    to_latent.forward(p, &z[i * self.l..(i + 1) * self.l], ui);
                    tanh_inplace(ui);
                    to_outputs.forward(p, ui, &mut mu[i * m..(i + 1) * m]);
                }
                (u, mu)
            }
        }
    }

    pub fn to_hyperparameters(&self, p: &[f64], floor: f64) -> Hyperparameters {
        let mlp = |(a, b): &(Dense, Dense)| MlpWeights {
            hidden_weights: p[a.offset..a.offset + a.n_in * a.n_out].to_vec(),
            hidden_bias: p[a.offset + a.n_in * a.n_out..a.end()].to_vec(),
            output_weights: p[b.offset..b.offset + b.n_in * b.n_out].to_vec(),
            output_bias: p[b.offset + b.n_in * b.n_out..b.end()].to_vec(),
        };
        Hyperparameters {
            encoder: self.encoder.as_ref().map(mlp),
            lengthscales: self
                .log_lengthscale
                .iter()
                .map(|&o| p[o..o + self.l].iter().map(|v| libm::exp(*v)).collect())
                .collect(),
            output_scale: self.log_scale.map(|o| libm::exp(p[o])),
            mixing: self.mixing.iter().map(|&o| p[o..o + self.m].to_vec()).collect(),
            kappa: self
                .log_kappa
                .iter()
                .map(|&o| p[o..o + self.m].iter().map(|v| libm::exp(*v)).collect())
                .collect(),
            mean: self.mean.as_ref().map(mlp),
            noise_variance: self.noise_variance(p, floor),
        }
    }

    pub fn from_hyperparameters(&self, h: &Hyperparameters, floor: f64) -> Result<Vec<f64>> {
        let mut p = vec![0.0; self.len];
        let shape = |what: &str| Error::SchemaMismatch(format!("hyperparameter {what} has the wrong shape"));
        let put = |p: &mut [f64], (a, b): &(Dense, Dense), w: &MlpWeights, what: &str| -> Result<()> {
            let sizes = [
                (a.offset, a.n_in * a.n_out, &w.hidden_weights),
                (a.offset + a.n_in * a.n_out, a.n_out, &w.hidden_bias),
                (b.offset, b.n_in * b.n_out, &w.output_weights),
                (b.offset + b.n_in * b.n_out, b.n_out, &w.output_bias),
            ];
            for (off, len, src) in sizes {
                if src.len() != len {
                    return Err(shape(what));
                }
                p[off..off + len].copy_from_slice(src);
            }
            Ok(())
        };
        match (&self.encoder, &h.encoder) {
            (Some(layers), Some(w)) => put(&mut p, layers, w, "encoder")?,
            (None, None) => {}
            _ => return Err(shape("encoder")),
        }
        match (&self.mean, &h.mean) {
            (Some(layers), Some(w)) => put(&mut p, layers, w, "mean")?,
            (None, None) => {}
            _ => return Err(shape("mean")),
        }
        if h.lengthscales.len() != self.q {
            return Err(shape("lengthscales"));
        }
        for (&o, ls) in self.log_lengthscale.iter().zip(&h.lengthscales) {
            if ls.len() != self.l || ls.iter().any(|v| !(*v > 0.0)) {
                return Err(shape("lengthscales"));
            }
            for (dst, v) in p[o..o + self.l].iter_mut().zip(ls) {
                *dst = libm::log(*v);
            }
        }
        match (self.log_scale, h.output_scale) {
            (Some(o), Some(s)) if s > 0.0 => p[o] = libm::log(s),
            (None, None) => {}
            _ => return Err(shape("output_scale")),
        }
        if h.mixing.len() != self.mixing.len() || h.kappa.len() != self.log_kappa.len() {
            return Err(shape("mixing"));
        }
        for g in 0..self.mixing.len() {
            if h.mixing[g].len() != self.m || h.kappa[g].len() != self.m || h.kappa[g].iter().any(|v| !(*v > 0.0)) {
                return Err(shape("mixing"));
            }
            p[self.mixing[g]..self.mixing[g] + self.m].copy_from_slice(&h.mixing[g]);
            for (dst, v) in p[self.log_kappa[g]..self.log_kappa[g] + self.m].iter_mut().zip(&h.kappa[g]) {
                *dst = libm::log(*v);
            }
        }
        if !(h.noise_variance >= floor) {
            return Err(Error::InvalidArgument(format!(
                "noise variance {} is below the floor {floor}",
                h.noise_variance
            )));
        }
        p[self.noise_raw] = libm::log(h.noise_variance - floor);
        Ok(p)
    }

    /// Human-readable name of every flat parameter slot.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.len];
        let mut mlp = |prefix: &str, (a, b): &(Dense, Dense)| {
            for (layer, tag) in [(a, "0"), (b, "1")] {
                for k in 0..layer.n_in * layer.n_out {
                    names[layer.offset + k] = format!("{prefix}.w{tag}[{k}]");
                }
                for k in 0..layer.n_out {
                    names[layer.offset + layer.n_in * layer.n_out + k] = format!("{prefix}.b{tag}[{k}]");
                }
            }
        };
        if let Some(layers) = &self.encoder {
            mlp("encoder", layers);
        }
        if let Some(layers) = &self.mean {
            mlp("mean", layers);
        }
        for (g, &o) in self.log_lengthscale.iter().enumerate() {
            for k in 0..self.l {
                names[o + k] = format!("gp{g}.log_lengthscale[{k}]");
            }
        }
        if let Some(o) = self.log_scale {
            names[o] = "log_output_scale".into();
        }
        for g in 0..self.mixing.len() {
            for j in 0..self.m {
                names[self.mixing[g] + j] = format!("gp{g}.mixing[{j}]");
                names[self.log_kappa[g] + j] = format!("gp{g}.log_kappa[{j}]");
            }
        }
        names[self.noise_raw] = "noise.raw".into();
        names
    }
}
