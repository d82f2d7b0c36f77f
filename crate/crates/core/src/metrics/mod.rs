//! Reward and behavior statistics, and cross-seed aggregation.

mod plot;

use serde::{Deserialize, Serialize};

use crate::envs::matrix::COOPERATE;
use crate::error::{Error, Result};

pub use plot::{line_chart_svg, scatter_svg, Band};

/// Normalized discounted reward `(1 - gamma) * sum_t gamma^t r_t`.
pub fn ndr(rewards: &[f64], gamma: f64) -> f64 {
    let mut acc = 0.0;
    let mut d = 1.0;
    for r in rewards {
        acc += d * r;
        d *= gamma;
    }
    (1.0 - gamma) * acc
}

/// Fraction of cooperative actions in a log.
pub fn p_cooperation(actions: &[usize]) -> Result<f64> {
    if actions.is_empty() {
        return Err(Error::DegenerateInput("empty action log".into()));
    }
    Ok(actions.iter().filter(|&&a| a == COOPERATE).count() as f64 / actions.len() as f64)
}

/// Mean of the last `k` epoch values of a per-epoch series.
pub fn window_mean(values: &[f64], k: usize) -> Result<f64> {
    if values.is_empty() || k == 0 {
        return Err(Error::DegenerateInput("empty window".into()));
    }
    let tail = &values[values.len().saturating_sub(k)..];
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Own-color share of an agent's picks; `None` when it picked nothing.
pub fn p_own_coin(own: u64, other: u64) -> Option<f64> {
    let total = own + other;
    (total > 0).then(|| own as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub seed: u64,
    pub agent: usize,
    pub epochs: Vec<usize>,
    pub values: Vec<f64>,
}

impl MetricSeries {
    pub fn new(name: impl Into<String>, seed: u64, agent: usize, points: Vec<(usize, f64)>) -> Result<Self> {
        let (epochs, values): (Vec<usize>, Vec<f64>) = points.into_iter().unzip();
        if epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::DegenerateInput("epochs must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("metric series", "non-finite value"));
        }
        Ok(Self {
            name: name.into(),
            seed,
            agent,
            epochs,
            values,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateBand {
    pub epochs: Vec<usize>,
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
}

/// Per-epoch mean and population standard deviation across seeds.
pub fn aggregate(series: &[MetricSeries]) -> Result<AggregateBand> {
    let Some(first) = series.first() else {
        return Err(Error::DegenerateInput("no series to aggregate".into()));
    };
    if series.iter().any(|s| s.epochs != first.epochs) {
        return Err(Error::DegenerateInput("series have different epoch grids".into()));
    }
    let n = series.len() as f64;
    let mut mean = Vec::with_capacity(first.epochs.len());
    let mut std = Vec::with_capacity(first.epochs.len());
    for i in 0..first.epochs.len() {
        // sorted summation keeps the result independent of seed order
        let mut vals: Vec<f64> = series.iter().map(|s| s.values[i]).collect();
        vals.sort_by(f64::total_cmp);
        let m = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        mean.push(m);
        std.push(var.max(0.0).sqrt());
    }
    Ok(AggregateBand {
        epochs: first.epochs.clone(),
        mean,
        std,
    })
}

/// First epoch from which `pred` holds for `sustain` consecutive epochs.
pub fn convergence_epoch(epochs: &[usize], values: &[f64], sustain: usize, pred: impl Fn(f64) -> bool) -> Option<usize> {
    let mut run = 0;
    for (i, &v) in values.iter().enumerate() {
        if pred(v) {
            run += 1;
            if run >= sustain.max(1) {
                return Some(epochs[i + 1 - run]);
            }
        } else {
            run = 0;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ndr_examples() {
        let v = ndr(&[-1.0; 200], 0.96);
        assert!((v + (1.0 - 0.96f64.powi(200))).abs() < 1e-12);
        assert!((v + 0.99971).abs() < 1e-5);
        assert_eq!(ndr(&[0.0; 10], 0.9), 0.0);
        assert!((ndr(&[3.0; 5000], 0.9) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn cooperation_and_picks() {
        assert_eq!(p_cooperation(&[0, 0, 0]).unwrap(), 1.0);
        assert_eq!(p_cooperation(&[0, 1, 0, 1]).unwrap(), 0.5);
        assert!(p_cooperation(&[]).is_err());
        assert_eq!(p_own_coin(2, 1), Some(2.0 / 3.0));
        assert_eq!(p_own_coin(0, 0), None);
        assert_eq!(window_mean(&[1.0, 2.0, 3.0, 5.0], 2).unwrap(), 4.0);
    }

    fn series(seed: u64, vals: &[f64]) -> MetricSeries {
        MetricSeries::new("ndr", seed, 0, vals.iter().copied().enumerate().collect()).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate(&[series(0, &[1.0, 2.0])]).unwrap();
        assert_eq!(one.std, vec![0.0, 0.0]);
        let same = aggregate(&[series(0, &[-1.0]), series(1, &[-1.0]), series(2, &[-1.0])]).unwrap();
        assert_eq!((same.mean[0], same.std[0]), (-1.0, 0.0));
        let two = aggregate(&[series(0, &[0.0]), series(1, &[2.0])]).unwrap();
        assert_eq!((two.mean[0], two.std[0]), (1.0, 1.0));
        let ragged = MetricSeries::new("ndr", 3, 0, vec![(0, 1.0), (2, 1.0)]).unwrap();
        assert!(aggregate(&[series(0, &[1.0, 1.0]), ragged]).is_err());
        assert!(MetricSeries::new("x", 0, 0, vec![(1, 0.0), (1, 0.0)]).is_err());
    }

    #[test]
    fn convergence_needs_a_sustained_run() {
        let e: Vec<usize> = (0..8).collect();
        let v = [0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(convergence_epoch(&e, &v, 3, |x| x > 0.5), Some(4));
        assert_eq!(convergence_epoch(&e, &v, 5, |x| x > 0.5), None);
    }

    proptest! {
        #[test]
        fn ndr_bounds_and_linearity(
            r in proptest::collection::vec(-5.0f64..5.0, 1..60),
            q_seed in -5.0f64..5.0,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            gamma in 0.0f64..0.99,
        ) {
            let t = r.len() as i32;
            let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let v = ndr(&r, gamma);
            let scale = 1.0 - gamma.powi(t);
            prop_assert!(v >= scale * lo - 1e-9 && v <= scale * hi + 1e-9);
            let q: Vec<f64> = r.iter().enumerate().map(|(i, x)| x * 0.3 + q_seed - i as f64 * 0.01).collect();
            let mix: Vec<f64> = r.iter().zip(&q).map(|(x, y)| a * x + b * y).collect();
            prop_assert!((ndr(&mix, gamma) - (a * ndr(&r, gamma) + b * ndr(&q, gamma))).abs() < 1e-9);
        }

        #[test]
        fn aggregate_is_permutation_invariant(vals in proptest::collection::vec(-10.0f64..10.0, 2..8), rot in 0usize..8) {
            let s: Vec<MetricSeries> = vals.iter().enumerate().map(|(i, v)| series(i as u64, &[*v])).collect();
            let mut t = s.clone();
            let k = rot % t.len();
            t.rotate_left(k);
            prop_assert_eq!(aggregate(&s).unwrap(), aggregate(&t).unwrap());
        }
    }
}
