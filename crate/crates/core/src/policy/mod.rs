//! Parameterized stochastic policies, value baselines and gradient plumbing.

mod baseline;
mod net;

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use baseline::ValueBaseline;
pub use net::LayeredNet;

use crate::error::{Error, Result};

/// How a state is presented to a policy. Tabular policies read one-hot
/// features as an index; any feature vector is accepted and treated
/// linearly.
#[derive(Clone, Copy, Debug)]
pub enum StateInput<'a> {
    Index(usize),
    Features(&'a [f64]),
}

impl From<usize> for StateInput<'_> {
    fn from(i: usize) -> Self {
        StateInput::Index(i)
    }
}

impl<'a> From<&'a [f64]> for StateInput<'a> {
    fn from(f: &'a [f64]) -> Self {
        StateInput::Features(f)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter_mut().for_each(|v| *v /= z);
    e
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyParams {
    /// Logits stored row-major as `n_states x n_actions`.
    TabularSoftmax {
        n_states: usize,
        n_actions: usize,
        logits: Vec<f64>,
    },
    /// Network whose output layer gives the action logits.
    LayeredNet(LayeredNet),
}

impl PolicyParams {
    /// Uniform tabular policy.
    pub fn tabular(n_states: usize, n_actions: usize) -> Self {
        PolicyParams::TabularSoftmax {
            n_states,
            n_actions,
            logits: vec![0.0; n_states * n_actions],
        }
    }

    /// Tabular policy with Gaussian logits.
    pub fn tabular_gaussian(n_states: usize, n_actions: usize, std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        PolicyParams::TabularSoftmax {
            n_states,
            n_actions,
            logits: (0..n_states * n_actions).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn tabular_from_logits(n_states: usize, n_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                expected: n_states * n_actions,
                got: logits.len(),
            });
        }
        let p = PolicyParams::TabularSoftmax {
            n_states,
            n_actions,
            logits,
        };
        p.check_finite()?;
        Ok(p)
    }

    pub fn n_actions(&self) -> usize {
        match self {
            PolicyParams::TabularSoftmax { n_actions, .. } => *n_actions,
            PolicyParams::LayeredNet(net) => net.output_dim(),
        }
    }

    pub fn theta(&self) -> &[f64] {
        match self {
            PolicyParams::TabularSoftmax { logits, .. } => logits,
            PolicyParams::LayeredNet(net) => &net.theta,
        }
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        match self {
            PolicyParams::TabularSoftmax { logits, .. } => logits,
            PolicyParams::LayeredNet(net) => &mut net.theta,
        }
    }

    pub fn n_params(&self) -> usize {
        self.theta().len()
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(i) = self.theta().iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(
                "policy parameters",
                format!("parameter {i} is {}", self.theta()[i]),
            ));
        }
        Ok(())
    }

    fn logits(&self, state: StateInput<'_>) -> Result<Vec<f64>> {
        match (self, state) {
            (
                PolicyParams::TabularSoftmax {
                    n_states,
                    n_actions,
                    logits,
                },
                StateInput::Index(s),
            ) => {
                if s >= *n_states {
                    return Err(Error::DimensionMismatch {
                        expected: *n_states,
                        got: s,
                    });
                }
                Ok(logits[s * n_actions..(s + 1) * n_actions].to_vec())
            }
            (
                PolicyParams::TabularSoftmax {
                    n_states,
                    n_actions,
                    logits,
                },
                StateInput::Features(x),
            ) => {
                if x.len() != *n_states {
                    return Err(Error::DimensionMismatch {
                        expected: *n_states,
                        got: x.len(),
                    });
                }
                let mut out = vec![0.0; *n_actions];
                for (s, &xs) in x.iter().enumerate() {
                    if xs != 0.0 {
                        for (o, l) in out.iter_mut().zip(&logits[s * n_actions..(s + 1) * n_actions]) {
                            *o += xs * l;
                        }
                    }
                }
                Ok(out)
            }
            (PolicyParams::LayeredNet(net), StateInput::Features(x)) => net.output(x),
            (PolicyParams::LayeredNet(net), StateInput::Index(s)) => net.output(&one_hot(s, net.input_dim())?),
        }
    }

    pub fn action_probs<'a>(&self, state: impl Into<StateInput<'a>>) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(state.into())?))
    }

    /// Fast path for tabular policies: probability of `action` in `state`.
    pub fn tabular_prob(&self, state: usize, action: usize) -> f64 {
        match self {
            PolicyParams::TabularSoftmax { n_actions, logits, .. } => {
                softmax(&logits[state * n_actions..(state + 1) * n_actions])[action]
            }
            PolicyParams::LayeredNet(_) => {
                self.action_probs(state).map(|p| p[action]).unwrap_or(f64::NAN)
            }
        }
    }

    pub fn sample_action<'a>(&self, state: impl Into<StateInput<'a>>, rng: &mut impl Rng) -> Result<usize> {
        let probs = self.action_probs(state)?;
        Ok(sample_from(&probs, rng))
    }

    pub fn log_prob_grad<'a>(&self, state: impl Into<StateInput<'a>>, action: usize) -> Result<GradientVector> {
        let mut g = GradientVector::zeros(self.n_params());
        self.accumulate_log_prob_grad(state.into(), action, 1.0, g.as_mut_slice())?;
        Ok(g)
    }

    /// Add `weight * grad log pi(action | state)` into `grad`.
    pub fn accumulate_log_prob_grad(
        &self,
        state: StateInput<'_>,
        action: usize,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        let n_actions = self.n_actions();
        if action >= n_actions {
            return Err(Error::InvalidAction { action, n_actions });
        }
        if grad.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                got: grad.len(),
            });
        }
        match self {
            PolicyParams::TabularSoftmax { .. } => {
                let probs = self.action_probs(state)?;
                let mut add_row = |s: usize, scale: f64| {
                    let row = &mut grad[s * n_actions..(s + 1) * n_actions];
                    for (a, (g, p)) in row.iter_mut().zip(&probs).enumerate() {
                        let ind = if a == action { 1.0 } else { 0.0 };
                        *g += weight * scale * (ind - p);
                    }
                };
                match state {
                    StateInput::Index(s) => add_row(s, 1.0),
                    StateInput::Features(x) => {
                        for (s, &xs) in x.iter().enumerate() {
                            if xs != 0.0 {
                                add_row(s, xs);
                            }
                        }
                    }
                }
            }
            PolicyParams::LayeredNet(net) => {
                let features;
                let x = match state {
                    StateInput::Features(x) => x,
                    StateInput::Index(s) => {
                        features = one_hot(s, net.input_dim())?;
                        &features
                    }
                };
                let cache = net.forward(x)?;
                let probs = softmax(cache.acts.last().expect("output"));
                let dout: Vec<f64> = probs
                    .iter()
                    .enumerate()
                    .map(|(a, p)| if a == action { 1.0 - p } else { -p })
                    .collect();
                net.backward(&cache, &dout, weight, grad);
            }
        }
        Ok(())
    }
}

pub fn one_hot(i: usize, n: usize) -> Result<Vec<f64>> {
    if i >= n {
        return Err(Error::DimensionMismatch { expected: n, got: i });
    }
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    Ok(v)
}

/// Inverse-CDF draw; mass lost to rounding falls on the last action.
pub fn sample_from(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn scale(&mut self, c: f64) {
        self.0.iter_mut().for_each(|v| *v *= c);
    }

    pub fn add_scaled(&mut self, other: &GradientVector, c: f64) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        match self.0.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::numerical(context, format!("gradient entry {i} is {}", self.0[i]))),
            None => Ok(()),
        }
    }
}

pub const FINITE_DIFF_STEP: f64 = 1e-5;

/// Central-difference gradient of `objective` at `theta`.
pub fn finite_diff_objective_grad(objective: impl Fn(&[f64]) -> f64, theta: &[f64]) -> Result<GradientVector> {
    finite_diff_with_step(objective, theta, FINITE_DIFF_STEP)
}

pub fn finite_diff_with_step(
    objective: impl Fn(&[f64]) -> f64,
    theta: &[f64],
    step: f64,
) -> Result<GradientVector> {
    let mut probe = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        probe[i] = theta[i] + step;
        let up = objective(&probe);
        probe[i] = theta[i] - step;
        let down = objective(&probe);
        probe[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::numerical(
                "finite difference",
                format!("objective not finite around coordinate {i}"),
            ));
        }
        out.push((up - down) / (2.0 * step));
    }
    Ok(GradientVector(out))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMetadata {
    pub game: String,
    pub seed: u64,
    pub epoch: usize,
    pub shape: Vec<usize>,
}

/// On-disk form of a trained agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightFile {
    pub metadata: WeightMetadata,
    pub policy: PolicyParams,
    pub baseline: ValueBaseline,
}

impl WeightFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::harness::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let w: WeightFile = serde_json::from_str(&text)?;
        w.policy.check_finite()?;
        Ok(w)
    }
}
