#![allow(dead_code)]

use rand::SeedableRng;
use sqlab::learner::{reinforce_grad, AgentTrajectory};
use sqlab::policy::{finite_diff_objective_grad, sample_from, softmax, PolicyParams, ValueBaseline};

/// Two-state MDP: the next state is the chosen action, rewards depend on
/// `(state, action)`. Episodes start in state 0.
pub const REWARD: [[f64; 2]; 2] = [[-1.0, 0.5], [2.0, -0.5]];
pub const HORIZON: usize = 4;
pub const GAMMA: f64 = 0.8;
pub const LOGITS: [f64; 4] = [0.3, -0.2, -0.4, 0.1];
pub const BASELINE: [f64; 2] = [0.4, -0.3];

/// Exact expected discounted return with the first action drawn from
/// `frozen` and all later ones from `theta`. The estimator skips the t = 0
/// term, so its expectation is the gradient of this objective in `theta`.
pub fn exact_objective(theta: &[f64], frozen: &[f64]) -> f64 {
    let mut total = 0.0;
    for code in 0..1usize << HORIZON {
        let (mut s, mut p, mut ret, mut d) = (0usize, 1.0, 0.0, 1.0);
        for t in 0..HORIZON {
            let a = (code >> t) & 1;
            let row = if t == 0 { frozen } else { theta };
            p *= softmax(&row[2 * s..2 * s + 2])[a];
            ret += d * REWARD[s][a];
            d *= GAMMA;
            s = a;
        }
        total += p * ret;
    }
    total
}

pub struct FidelityRow {
    pub estimate: f64,
    pub std_err: f64,
    pub exact: f64,
}

/// Per-coordinate estimator mean and standard error over `episodes`
/// single-episode estimates, against the finite-difference gradient.
pub fn estimator_fidelity(episodes: usize, seed: u64) -> Vec<FidelityRow> {
    let policy = PolicyParams::tabular_from_logits(2, 2, LOGITS.to_vec()).unwrap();
    let baseline = ValueBaseline::Tabular {
        values: BASELINE.to_vec(),
        delta: 1.0,
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = policy.n_params();
    let (mut sum, mut sq) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..episodes {
        let (mut states, mut actions, mut rewards) = (vec![], vec![], vec![]);
        let mut s = 0;
        for _ in 0..HORIZON {
            let a = sample_from(&policy.action_probs(s).unwrap(), &mut rng);
            states.push(s);
            actions.push(a);
            rewards.push(REWARD[s][a]);
            s = a;
        }
        let view = AgentTrajectory {
            states: &states,
            actions: &actions,
            rewards: &rewards,
        };
        let g = reinforce_grad(&[view], &policy, &baseline, GAMMA).unwrap();
        for (k, v) in g.as_slice().iter().enumerate() {
            sum[k] += v;
            sq[k] += v * v;
        }
    }
    let exact = finite_diff_objective_grad(|th| exact_objective(th, &LOGITS), &LOGITS).unwrap();
    let m = episodes as f64;
    (0..n)
        .map(|k| {
            let mean = sum[k] / m;
            let var = (sq[k] / m - mean * mean).max(0.0) * m / (m - 1.0);
            FidelityRow {
                estimate: mean,
                std_err: (var / m).sqrt(),
                exact: exact.as_slice()[k],
            }
        })
        .collect()
}
