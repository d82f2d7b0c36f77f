use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::LayeredNet;

/// State-value baseline b(s).
///
/// Updates take one gradient step of size `delta` on the loss
/// `0.5 * (b(s) - target)^2`, averaged over the given samples. With a
/// tabular table and `delta = 1` a single update therefore sets each visited
/// state's value to the mean of its targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueBaseline {
    Tabular { values: Vec<f64>, delta: f64 },
    /// Network with a single linear output unit over one-hot or feature input.
    Net { net: LayeredNet, delta: f64 },
}

impl ValueBaseline {
    pub fn tabular(n_states: usize, delta: f64) -> Self {
        ValueBaseline::Tabular {
            values: vec![0.0; n_states],
            delta,
        }
    }

    pub fn value(&self, state: usize) -> f64 {
        match self {
            ValueBaseline::Tabular { values, .. } => values[state],
            ValueBaseline::Net { net, .. } => {
                let x = crate::policy::one_hot(state, net.input_dim()).expect("state in range");
                net.output(&x).expect("input sized by construction")[0]
            }
        }
    }

    /// Single-sample update toward `target`.
    pub fn update(&mut self, state: usize, target: f64) -> Result<()> {
        self.update_batch(&[(state, target)])
    }

    /// One averaged gradient step over `(state, target)` pairs. For the
    /// tabular case, each state's step averages over that state's samples.
    pub fn update_batch(&mut self, samples: &[(usize, f64)]) -> Result<()> {
        let weighted: Vec<(usize, f64, f64)> = samples.iter().map(|&(s, t)| (s, t, 1.0)).collect();
        self.update_weighted(&weighted)
    }

    /// As [`update_batch`](Self::update_batch) with per-sample loss weights
    /// `(state, target, weight)`; averages are weighted means.
    pub fn update_weighted(&mut self, samples: &[(usize, f64, f64)]) -> Result<()> {
        if let Some(&(_, t, _)) = samples.iter().find(|(_, t, w)| !t.is_finite() || !w.is_finite()) {
            return Err(Error::numerical("baseline update", format!("target {t}")));
        }
        match self {
            ValueBaseline::Tabular { values, delta } => {
                let mut sum = vec![0.0; values.len()];
                let mut mass = vec![0.0; values.len()];
                for &(s, t, w) in samples {
                    if s >= values.len() {
                        return Err(Error::DimensionMismatch {
                            expected: values.len(),
                            got: s,
                        });
                    }
                    sum[s] += w * (t - values[s]);
                    mass[s] += w;
                }
                for s in 0..values.len() {
                    if mass[s] > 0.0 {
                        values[s] += *delta * sum[s] / mass[s];
                    }
                }
            }
            ValueBaseline::Net { net, delta } => {
                if samples.is_empty() {
                    return Ok(());
                }
                let mut grad = vec![0.0; net.theta.len()];
                let n: f64 = samples.iter().map(|s| s.2).sum();
                if n <= 0.0 {
                    return Ok(());
                }
                for &(s, t, w) in samples {
                    let x = crate::policy::one_hot(s, net.input_dim())?;
                    let cache = net.forward(&x)?;
                    let v = cache.acts.last().expect("output")[0];
                    net.backward(&cache, &[t - v], w / n, &mut grad);
                }
                for (p, g) in net.theta.iter_mut().zip(&grad) {
                    *p += *delta * g;
                }
            }
        }
        self.check_finite()
    }

    pub fn check_finite(&self) -> Result<()> {
        let ok = match self {
            ValueBaseline::Tabular { values, .. } => values.iter().all(|v| v.is_finite()),
            ValueBaseline::Net { net, .. } => net.theta.iter().all(|v| v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::numerical("baseline", "non-finite value"))
        }
    }
}
