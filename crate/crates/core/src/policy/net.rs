//! Small fully connected network in double precision, used for policies and
//! value heads that need exact gradient checks.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer sizes `[input, hidden.., output]`; hidden layers use ReLU, the
/// output is left linear. Each layer stores a row-major `out x in` weight
/// block followed by `out` biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayeredNet {
    pub dims: Vec<usize>,
    pub theta: Vec<f64>,
}

pub(crate) struct ForwardCache {
    /// Post-activation outputs of every layer, starting with the input.
    pub acts: Vec<Vec<f64>>,
}

impl LayeredNet {
    pub fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {dims:?}")));
        }
        let n = Self::param_count(&dims);
        Ok(Self {
            dims,
            theta: vec![0.0; n],
        })
    }

    /// He-style Gaussian weights, zero biases.
    pub fn random(dims: Vec<usize>, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        let mut off = 0;
        for w in net.dims.clone().windows(2) {
            let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive std");
            for v in &mut net.theta[off..off + w[0] * w[1]] {
                *v = normal.sample(rng);
            }
            off += w[0] * w[1] + w[1];
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two layers")
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        let last = self.dims.len() - 2;
        for (l, w) in self.dims.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.theta[off..off + n_in * n_out];
            let bias = &self.theta[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &acts[l];
            let mut out: Vec<f64> = (0..n_out)
                .map(|o| {
                    bias[o]
                        + weights[o * n_in..(o + 1) * n_in]
                            .iter()
                            .zip(input)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                })
                .collect();
            if l < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        Ok(ForwardCache { acts })
    }

    pub fn output(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.acts.pop().expect("output layer"))
    }

    /// Accumulate `d(sum_o dout[o] * output[o]) / dtheta`, scaled by `weight`,
    /// into `grad`.
    pub(crate) fn backward(&self, cache: &ForwardCache, dout: &[f64], weight: f64, grad: &mut [f64]) {
        let mut delta: Vec<f64> = dout.iter().map(|d| d * weight).collect();
        let mut offsets = Vec::with_capacity(self.dims.len() - 1);
        let mut off = 0;
        for w in self.dims.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        for l in (0..self.dims.len() - 1).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let off = offsets[l];
            let input = &cache.acts[l];
            for o in 0..n_out {
                grad[off + n_in * n_out + o] += delta[o];
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += delta[o] * x;
                }
            }
            if l == 0 {
                break;
            }
            let weights = &self.theta[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                for (i, p) in prev.iter_mut().enumerate() {
                    *p += weights[o * n_in + i] * delta[o];
                }
            }
            for (p, a) in prev.iter_mut().zip(&cache.acts[l]) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
}
