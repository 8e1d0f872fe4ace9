use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Posterior covariance over the outputs at each candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariance {
    /// `n x m` marginal variances, row-major.
    Marginal(Vec<f64>),
    /// One `m x m` block per candidate, row-major blocks.
    Full(Vec<f64>),
}

/// Posterior mean and covariance of `m` outputs at `n` candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPrediction {
    pub n: usize,
    pub m: usize,
    /// `n x m`, row-major.
    pub mean: Vec<f64>,
    pub covariance: Covariance,
}

impl PosteriorPrediction {
    pub fn marginal(n: usize, m: usize, mean: Vec<f64>, variance: Vec<f64>) -> Self {
        debug_assert_eq!(mean.len(), n * m);
        debug_assert_eq!(variance.len(), n * m);
        Self {
            n,
            m,
            mean,
            covariance: Covariance::Marginal(variance),
        }
    }

    pub fn full(n: usize, m: usize, mean: Vec<f64>, blocks: Vec<f64>) -> Self {
        debug_assert_eq!(blocks.len(), n * m * m);
        Self {
            n,
            m,
            mean,
            covariance: Covariance::Full(blocks),
        }
    }

    pub fn is_full(&self) -> bool {
        matches!(self.covariance, Covariance::Full(_))
    }

    pub fn mean_row(&self, i: usize) -> &[f64] {
        &self.mean[i * self.m..(i + 1) * self.m]
    }

    pub fn variance(&self, i: usize, j: usize) -> f64 {
        match &self.covariance {
            Covariance::Marginal(v) => v[i * self.m + j],
            Covariance::Full(b) => b[i * self.m * self.m + j * self.m + j],
        }
    }

    /// The `m x m` block of candidate `i`, if the full covariance is stored.
    pub fn block(&self, i: usize) -> Option<&[f64]> {
        match &self.covariance {
            Covariance::Full(b) => Some(&b[i * self.m * self.m..(i + 1) * self.m * self.m]),
            Covariance::Marginal(_) => None,
        }
    }

    /// Drops off-diagonal terms.
    pub fn into_marginal(self) -> Self {
        match self.covariance {
            Covariance::Marginal(_) => self,
            Covariance::Full(_) => {
                let variance = (0..self.n)
                    .flat_map(|i| (0..self.m).map(move |j| (i, j)))
                    .map(|(i, j)| self.variance(i, j))
                    .collect();
                Self::marginal(self.n, self.m, self.mean, variance)
            }
        }
    }

    /// Concatenates predictions over disjoint candidate batches.
    pub fn concat(parts: Vec<PosteriorPrediction>) -> Result<Self> {
        let mut iter = parts.into_iter();
        let Some(mut out) = iter.next() else {
            return Err(Error::EmptyCandidates);
        };
        for part in iter {
            if part.m != out.m || part.is_full() != out.is_full() {
                return Err(Error::SchemaMismatch("prediction batches disagree in shape".into()));
            }
            out.n += part.n;
            out.mean.extend(part.mean);
            match (&mut out.covariance, part.covariance) {
                (Covariance::Marginal(a), Covariance::Marginal(b)) => a.extend(b),
                (Covariance::Full(a), Covariance::Full(b)) => a.extend(b),
                _ => unreachable!(),
            }
        }
        Ok(out)
    }

    /// Clamps variances in `[-tol, 0)` to zero and rejects anything below.
    pub(crate) fn clamp_variances(&mut self, tol: f64) -> Result<()> {
        let m = self.m;
        let fix = |v: &mut f64| -> Result<()> {
            if *v < -tol || v.is_nan() {
                return Err(Error::NegativeVariance(*v));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
            Ok(())
        };
        match &mut self.covariance {
            Covariance::Marginal(vs) => vs.iter_mut().try_for_each(fix),
            Covariance::Full(bs) => bs
                .chunks_mut(m * m)
                .try_for_each(|b| (0..m).try_for_each(|j| fix(&mut b[j * m + j]))),
        }
    }
}
