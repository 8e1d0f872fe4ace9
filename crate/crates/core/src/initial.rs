//! Initial design predictor: given the fixed design parameters of a part and
//! the desired target shares, propose values for the variable parameters.
//! Each variable parameter has its own small regressor.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::mean_std;
use crate::nn::{tanh_backward, tanh_inplace, Adam, Dense};
use crate::space::{ParameterSpec, Range};
use crate::{DesignPoint, Error, NamedValues, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialPredictorConfig {
    pub hidden: usize,
    pub max_steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub min_records: usize,
}

impl Default for InitialPredictorConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            max_steps: 2000,
            learning_rate: 0.01,
            seed: 0,
            min_records: 20,
        }
    }
}

/// One training example: the design that was simulated and the shares it
/// produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub inputs: DesignPoint,
    pub targets: NamedValues,
}

#[derive(Debug, Clone, PartialEq)]
struct Regressor {
    name: String,
    range: Range,
    hidden: Dense,
    out: Dense,
    params: Vec<f64>,
    y_mean: f64,
    y_std: f64,
}

impl Regressor {
    fn forward(&self, x: &[f64], h: &mut [f64]) -> f64 {
        self.hidden.forward(&self.params, x, h);
        tanh_inplace(h);
        let mut y = [0.0];
        self.out.forward(&self.params, h, &mut y);
        y[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialPredictor {
    pub fixed: Vec<String>,
    pub targets: Vec<String>,
    x_mean: Vec<f64>,
    x_std: Vec<f64>,
    regressors: Vec<Regressor>,
}

fn features(fixed: &[String], targets: &[String], inputs: &NamedValues, shares: &[f64]) -> Result<Vec<f64>> {
    let mut x = Vec::with_capacity(fixed.len() + targets.len());
    for name in fixed {
        x.push(
            inputs
                .get(name)
                .ok_or_else(|| Error::SchemaMismatch(format!("missing fixed parameter {name}")))?,
        );
    }
    x.extend_from_slice(shares);
    Ok(x)
}

/// Trains one regressor per variable parameter on squared error.
pub fn train_initial_predictor(
    examples: &[Example],
    fixed: &[String],
    targets: &[String],
    variable: &[(ParameterSpec, Range)],
    config: &InitialPredictorConfig,
) -> Result<InitialPredictor> {
    if examples.len() < config.min_records.max(2) {
        return Err(Error::InsufficientData(format!(
            "the initial predictor needs at least {} records, got {}; start from a random design instead",
            config.min_records.max(2),
            examples.len()
        )));
    }
    if config.hidden == 0 || variable.is_empty() {
        return Err(Error::InvalidArgument("initial predictor needs a hidden layer and at least one variable parameter".into()));
    }
    let rows: Vec<Vec<f64>> = examples
        .iter()
        .map(|e| {
            let shares = targets
                .iter()
                .map(|t| {
                    e.targets
                        .get(t)
                        .ok_or_else(|| Error::SchemaMismatch(format!("record lacks target {t}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            features(fixed, targets, &e.inputs, &shares)
        })
        .collect::<Result<_>>()?;
    let d = fixed.len() + targets.len();
    let n = rows.len();
    let (x_mean, x_std): (Vec<f64>, Vec<f64>) = (0..d).map(|j| mean_std(rows.iter().map(|r| r[j]))).unzip();
    let xs: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| (0..d).map(|j| (r[j] - x_mean[j]) / x_std[j]).collect())
        .collect();

    let mut regressors = Vec::new();
    for (k, (spec, range)) in variable.iter().enumerate() {
        let ys: Vec<f64> = examples
            .iter()
            .map(|e| {
                e.inputs
                    .get(&spec.name)
                    .ok_or_else(|| Error::SchemaMismatch(format!("record lacks parameter {}", spec.name)))
            })
            .collect::<Result<_>>()?;
        let (y_mean, y_std) = mean_std(ys.iter().copied());
        let hidden = Dense::new(0, d, config.hidden);
        let out = Dense::new(hidden.end(), config.hidden, 1);
        let mut params = vec![0.0; out.end()];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(k as u64));
        hidden.init(&mut params, 1.0, &mut rng);
        out.init(&mut params, 1.0, &mut rng);
        let mut reg = Regressor {
            name: spec.name.clone(),
            range: range.clone(),
            hidden,
            out,
            params,
            y_mean,
            y_std,
        };
        let mut adam = Adam::new(reg.params.len(), config.learning_rate);
        let mut grad = vec![0.0; reg.params.len()];
        let mut h = vec![0.0; config.hidden];
        let mut dh = vec![0.0; config.hidden];
        for _ in 0..config.max_steps {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (x, y) in xs.iter().zip(&ys) {
                let pred = reg.forward(x, &mut h);
                let err = pred - (y - y_mean) / y_std;
                dh.iter_mut().for_each(|v| *v = 0.0);
                reg.out.backward(&reg.params, &h, &[2.0 * err / n as f64], &mut grad, Some(&mut dh));
                tanh_backward(&h, &mut dh);
                reg.hidden.backward(&reg.params, x, &dh, &mut grad, None);
            }
            adam.descend(&mut reg.params, &grad);
        }
        regressors.push(reg);
    }
    Ok(InitialPredictor {
        fixed: fixed.to_vec(),
        targets: targets.to_vec(),
        x_mean,
        x_std,
        regressors,
    })
}

impl InitialPredictor {
    /// Proposes a design for the given fixed parameters and desired shares.
    /// Continuous outputs are clipped to their range; discrete ones snap to
    /// the nearest allowed value.
    pub fn predict(&self, fixed: &NamedValues, desired: &[f64]) -> Result<DesignPoint> {
        if desired.len() != self.targets.len() {
            return Err(Error::DimensionMismatch {
                expected: self.targets.len(),
                got: desired.len(),
            });
        }
        let raw = features(&self.fixed, &self.targets, fixed, desired)?;
        let x: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(j, v)| (v - self.x_mean[j]) / self.x_std[j])
            .collect();
        let mut out = NamedValues::new();
        for name in &self.fixed {
            out.set(name, fixed.get(name).expect("checked above"));
        }
        for reg in &self.regressors {
            let mut h = vec![0.0; reg.hidden.n_out];
            let y = reg.forward(&x, &mut h) * reg.y_std + reg.y_mean;
            out.set(&reg.name, reg.range.project(y));
        }
        Ok(out)
    }

    /// Names of the predicted parameters.
    pub fn variable(&self) -> Vec<String> {
        self.regressors.iter().map(|r| r.name.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let l4 = 20.0 + 60.0 * i as f64 / (n - 1) as f64;
                let d = 1.0 + (i % 3) as f64 * 0.2;
                Example {
                    inputs: NamedValues::new().with("D", d).with("p", 100.0 + 2.0 * l4),
                    targets: NamedValues::new().with("L4", l4).with("L7", 100.0 - l4),
                }
            })
            .collect()
    }

    fn variable() -> Vec<(ParameterSpec, Range)> {
        vec![(ParameterSpec::continuous("p"), Range::Interval { lo: 50.0, hi: 300.0 })]
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| String::from(*s)).collect()
    }

    #[test]
    fn recovers_a_linear_rule() {
        let all = store(30);
        // Hold out every fifth row.
        let train: Vec<Example> = all.iter().enumerate().filter(|(i, _)| i % 5 != 2).map(|(_, e)| e.clone()).collect();
        let pred = train_initial_predictor(&train, &names(&["D"]), &names(&["L4", "L7"]), &variable(), &InitialPredictorConfig::default()).unwrap();
        for e in all.iter().skip(2).step_by(5) {
            let l4 = e.targets.get("L4").unwrap();
            let out = pred.predict(&e.inputs, &[l4, 100.0 - l4]).unwrap();
            let truth = 100.0 + 2.0 * l4;
            assert!((out.get("p").unwrap() - truth).abs() <= 0.05 * truth);
            assert_eq!(out.get("D"), e.inputs.get("D"));
        }
    }

    #[test]
    fn outputs_stay_in_range() {
        let pred = train_initial_predictor(&store(25), &names(&["D"]), &names(&["L4", "L7"]), &variable(), &InitialPredictorConfig::default()).unwrap();
        let fixed = NamedValues::new().with("D", 1.0);
        for l4 in [-500.0, 0.0, 100.0, 900.0] {
            let p = pred.predict(&fixed, &[l4, 0.0]).unwrap().get("p").unwrap();
            assert!((50.0..=300.0).contains(&p));
        }
        let a = pred.predict(&fixed, &[40.0, 60.0]).unwrap();
        assert_eq!(a, pred.predict(&fixed, &[40.0, 60.0]).unwrap());
    }

    #[test]
    fn discrete_outputs_snap() {
        let rp = Range::Values(vec![160.0, 220.0, 280.0, 340.0]);
        assert_eq!(rp.project(235.0), 220.0);
        let examples: Vec<Example> = store(24)
            .into_iter()
            .map(|mut e| {
                e.inputs.set("Rp", 235.0);
                e
            })
            .collect();
        let variable = vec![(ParameterSpec::discrete("Rp"), rp)];
        let pred = train_initial_predictor(&examples, &names(&["D"]), &names(&["L4"]), &variable, &InitialPredictorConfig::default()).unwrap();
        let out = pred.predict(&NamedValues::new().with("D", 1.2), &[50.0]).unwrap();
        assert_eq!(out.get("Rp"), Some(220.0));
    }

    #[test]
    fn too_few_records() {
        let err = train_initial_predictor(&store(5), &names(&["D"]), &names(&["L4"]), &variable(), &InitialPredictorConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn missing_fixed_parameter_is_a_schema_error() {
        let pred = train_initial_predictor(&store(20), &names(&["D"]), &names(&["L4"]), &variable(), &InitialPredictorConfig::default()).unwrap();
        assert!(matches!(pred.predict(&NamedValues::new(), &[50.0]), Err(Error::SchemaMismatch(_))));
        assert!(pred.predict(&NamedValues::new().with("D", 1.0), &[50.0, 1.0]).is_err());
    }
}
