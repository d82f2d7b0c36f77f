use serde::{Deserialize, Serialize};

use crate::envs::matrix::{MatrixState, PayoffMatrix};
use crate::error::{Error, Result};

/// Action values and state values of the row player when both players act
/// uniformly at random forever, indexed by [`MatrixState::index`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaValues {
    /// `q[s][a]`.
    pub q: Vec<[f64; 2]>,
    pub v: Vec<f64>,
    pub iterations: usize,
}

/// Value iteration for the uniformly random joint policy, run until the
/// value error bound drops below 1e-10.
pub fn lemma_q_values(payoff: &PayoffMatrix, gamma: f64) -> Result<LemmaValues> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    let n = MatrixState::COUNT;
    let next = |a: usize, b: usize| MatrixState::Joint(a, b).index();
    let mut v = vec![0.0; n];
    let mut q = vec![[0.0; 2]; n];
    let mut iterations = 0;
    loop {
        iterations += 1;
        for qs in q.iter_mut() {
            for (a, qa) in qs.iter_mut().enumerate() {
                *qa = (0..2)
                    .map(|b| 0.5 * (payoff.rewards(a, b)[0] + gamma * v[next(a, b)]))
                    .sum();
            }
        }
        let new_v: Vec<f64> = q.iter().map(|qs| 0.5 * (qs[0] + qs[1])).collect();
        let change = new_v.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = new_v;
        // ||V - V*|| <= gamma / (1 - gamma) * ||V_k - V_{k-1}||
        if change * gamma <= 1e-11 * (1.0 - gamma) || iterations > 1_000_000 {
            break;
        }
    }
    for qs in q.iter_mut() {
        for (a, qa) in qs.iter_mut().enumerate() {
            *qa = (0..2)
                .map(|b| 0.5 * (payoff.rewards(a, b)[0] + gamma * v[next(a, b)]))
                .sum();
        }
    }
    Ok(LemmaValues { q, v, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Under uniform play the next state does not affect what follows, so
    // V = mean payoff / (1 - gamma) everywhere and Q(a) = mean_b r(a, b) + gamma V.
    fn closed_form(m: &PayoffMatrix, gamma: f64) -> ([f64; 2], f64) {
        let row = |a: usize| 0.5 * (m.rewards(a, 0)[0] + m.rewards(a, 1)[0]);
        let v = 0.5 * (row(0) + row(1)) / (1.0 - gamma);
        ([row(0) + gamma * v, row(1) + gamma * v], v)
    }

    #[test]
    fn ipd_defection_gains_one_everywhere() {
        let m = PayoffMatrix::prisoners_dilemma();
        for gamma in [0.0, 0.5, 0.9, 0.96] {
            let lv = lemma_q_values(&m, gamma).unwrap();
            let (q, v) = closed_form(&m, gamma);
            for s in 0..MatrixState::COUNT {
                assert!((lv.q[s][1] - lv.q[s][0] - 1.0).abs() < 1e-8, "gamma {gamma} state {s}");
                assert!((lv.q[s][0] - q[0]).abs() < 1e-8 && (lv.q[s][1] - q[1]).abs() < 1e-8);
                assert!((lv.v[s] - v).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_discount_is_immediate_reward() {
        for m in [PayoffMatrix::matching_pennies(), PayoffMatrix::stag_hunt(), PayoffMatrix::chicken()] {
            let lv = lemma_q_values(&m, 0.0).unwrap();
            for s in 0..MatrixState::COUNT {
                for a in 0..2 {
                    let expect = 0.5 * (m.rewards(a, 0)[0] + m.rewards(a, 1)[0]);
                    assert_eq!(lv.q[s][a], expect);
                }
            }
        }
    }

    #[test]
    fn rejects_gamma_at_or_above_one() {
        let m = PayoffMatrix::prisoners_dilemma();
        assert!(lemma_q_values(&m, 1.0).is_err());
        assert!(lemma_q_values(&m, -0.1).is_err());
    }
}
