//! Returns, the selfish policy gradient, the status-quo correction, and the
//! training loop that combines them.

mod game;
mod lemma;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{GradientVector, PolicyParams, StateInput, ValueBaseline};

pub use game::{BraessGame, MarkovGame, MatrixGame, PickCounts};
pub use lemma::{lemma_q_values, LemmaValues};
pub use train::{train, AgentSpec, EpochRecord, TrainingHistory};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyInit {
    /// All logits zero, i.e. the uniform policy.
    #[default]
    Zero,
    Gaussian { std: f64 },
}

/// How visits are weighted when fitting the state-value baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BaselineWeighting {
    /// Every visit counts equally.
    Uniform,
    /// A visit at step `t` counts `gamma^t`, matching the weight the policy
    /// gradient puts on that step.
    #[default]
    Discounted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub delta_actor: f64,
    pub delta_critic: f64,
    pub alpha: f64,
    pub beta: f64,
    pub z: usize,
    pub horizon: usize,
    pub batch: usize,
    pub epochs: usize,
    pub init: PolicyInit,
    pub baseline_weighting: BaselineWeighting,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.96,
            delta_actor: 0.005,
            delta_critic: 1.0,
            alpha: 1.0,
            beta: 0.5,
            z: 10,
            horizon: 200,
            batch: 200,
            epochs: 1000,
            init: PolicyInit::Zero,
            baseline_weighting: BaselineWeighting::Discounted,
        }
    }
}

impl LearnerConfig {
    /// Status-quo learner with default weights.
    pub fn sql() -> Self {
        Self::default()
    }

    /// Plain policy gradient (no status-quo term).
    pub fn selfish() -> Self {
        Self {
            beta: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if self.z < 1 {
            return bad("z must be at least 1".into());
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad(format!("alpha and beta must be >= 0, got {} and {}", self.alpha, self.beta));
        }
        if !(self.delta_actor.is_finite() && self.delta_critic.is_finite()) {
            return bad("step sizes must be finite".into());
        }
        if self.horizon == 0 || self.batch == 0 || self.epochs == 0 {
            return bad("horizon, batch and epochs must be positive".into());
        }
        Ok(())
    }
}

/// One agent's view of an episode: the state it observed before acting at
/// step `t`, its action, and its reward.
#[derive(Clone, Copy, Debug)]
pub struct AgentTrajectory<'a> {
    pub states: &'a [usize],
    pub actions: &'a [usize],
    pub rewards: &'a [f64],
}

impl AgentTrajectory<'_> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// A joint episode, stored per agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<usize>>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(n_agents: usize, horizon: usize) -> Self {
        Self {
            states: vec![Vec::with_capacity(horizon); n_agents],
            actions: vec![Vec::with_capacity(horizon); n_agents],
            rewards: vec![Vec::with_capacity(horizon); n_agents],
        }
    }

    pub fn agent(&self, i: usize) -> AgentTrajectory<'_> {
        AgentTrajectory {
            states: &self.states[i],
            actions: &self.actions[i],
            rewards: &self.rewards[i],
        }
    }
}

/// `R_t = r_t + gamma * R_{t+1}`, with `R` past the end equal to zero.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Uniform draw from `{1, ..., z}`.
pub fn sample_kappa(rng: &mut impl Rng, z: usize) -> usize {
    rng.gen_range(1..=z.max(1))
}

/// Return of the imagined episode in which the previous step is repeated
/// `kappa` times before play resumes:
/// `((1 - gamma^kappa) / (1 - gamma)) * r_{t-1} + gamma^kappa * R_t`.
pub fn imagined_return(rewards: &[f64], returns: &[f64], t: usize, kappa: usize, gamma: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::UndefinedIndex("imagined return needs a previous step (t >= 1)".into()));
    }
    if t >= returns.len() || t > rewards.len() {
        return Err(Error::UndefinedIndex(format!("t = {t} beyond episode length {}", returns.len())));
    }
    let gk = gamma.powi(kappa as i32);
    // sum_{j<kappa} gamma^j, written so that gamma = 1 stays finite
    let repeat = if gamma == 1.0 { kappa as f64 } else { (1.0 - gk) / (1.0 - gamma) };
    Ok(repeat * rewards[t - 1] + gk * returns[t])
}

/// Accumulates `weight * grad log pi(a | s)` for index states, caching the
/// action distribution of each tabular state.
struct LogProbAccumulator<'p> {
    policy: &'p PolicyParams,
    rows: Option<Vec<Option<Vec<f64>>>>,
    grad: GradientVector,
}

impl<'p> LogProbAccumulator<'p> {
    fn new(policy: &'p PolicyParams) -> Self {
        let rows = match policy {
            PolicyParams::TabularSoftmax { n_states, .. } => Some(vec![None; *n_states]),
            PolicyParams::LayeredNet(_) => None,
        };
        Self {
            policy,
            rows,
            grad: GradientVector::zeros(policy.n_params()),
        }
    }

    fn add(&mut self, state: usize, action: usize, weight: f64) -> Result<()> {
        let Some(rows) = self.rows.as_mut() else {
            return self
                .policy
                .accumulate_log_prob_grad(StateInput::Index(state), action, weight, self.grad.as_mut_slice());
        };
        let n_actions = self.policy.n_actions();
        if action >= n_actions {
            return Err(Error::InvalidAction { action, n_actions });
        }
        if state >= rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: state,
            });
        }
        let probs = match &rows[state] {
            Some(p) => p,
            None => rows[state].insert(self.policy.action_probs(state)?),
        };
        let g = &mut self.grad.as_mut_slice()[state * n_actions..(state + 1) * n_actions];
        for (a, (gi, p)) in g.iter_mut().zip(probs).enumerate() {
            let ind = if a == action { 1.0 } else { 0.0 };
            *gi += weight * (ind - p);
        }
        Ok(())
    }

    fn finish(mut self, batch: usize, context: &str) -> Result<GradientVector> {
        if batch > 0 {
            self.grad.scale(1.0 / batch as f64);
        }
        self.grad.check_finite(context)?;
        Ok(self.grad)
    }
}

fn check_lengths(traj: &AgentTrajectory<'_>) -> Result<()> {
    if traj.states.len() != traj.rewards.len() || traj.actions.len() != traj.rewards.len() {
        return Err(Error::DimensionMismatch {
            expected: traj.rewards.len(),
            got: traj.states.len().min(traj.actions.len()),
        });
    }
    Ok(())
}

/// Batch mean of `sum_{t>=1} grad log pi(u_t | s_t) * gamma^t * (R_t - b(s_t))`.
pub fn reinforce_grad(
    batch: &[AgentTrajectory<'_>],
    policy: &PolicyParams,
    baseline: &ValueBaseline,
    gamma: f64,
) -> Result<GradientVector> {
    let mut acc = LogProbAccumulator::new(policy);
    for traj in batch {
        check_lengths(traj)?;
        let returns = discounted_returns(traj.rewards, gamma);
        let mut discount = 1.0;
        for t in 0..traj.len() {
            if t > 0 {
                let s = traj.states[t];
                acc.add(s, traj.actions[t], discount * (returns[t] - baseline.value(s)))?;
            }
            discount *= gamma;
        }
    }
    acc.finish(batch.len(), "standard policy gradient")
}

/// Batch mean of `sum_{t>=1} grad log pi(u_{t-1} | s_t) * gamma^t * (R^_t - b(s_t))`
/// with a fresh `kappa ~ U{1..z}` per trajectory and step.
pub fn sq_correction(
    batch: &[AgentTrajectory<'_>],
    policy: &PolicyParams,
    baseline: &ValueBaseline,
    gamma: f64,
    z: usize,
    rng: &mut impl Rng,
) -> Result<GradientVector> {
    sq_correction_with(batch, policy, baseline, gamma, |_, _| sample_kappa(rng, z))
}

/// As [`sq_correction`], with `kappa` supplied per `(trajectory, t)`.
pub fn sq_correction_with(
    batch: &[AgentTrajectory<'_>],
    policy: &PolicyParams,
    baseline: &ValueBaseline,
    gamma: f64,
    mut kappa: impl FnMut(usize, usize) -> usize,
) -> Result<GradientVector> {
    let mut acc = LogProbAccumulator::new(policy);
    for (b, traj) in batch.iter().enumerate() {
        check_lengths(traj)?;
        let returns = discounted_returns(traj.rewards, gamma);
        let mut discount = 1.0;
        for t in 0..traj.len() {
            if t > 0 {
                let s = traj.states[t];
                let imagined = imagined_return(traj.rewards, &returns, t, kappa(b, t), gamma)?;
                acc.add(s, traj.actions[t - 1], discount * (imagined - baseline.value(s)))?;
            }
            discount *= gamma;
        }
    }
    acc.finish(batch.len(), "status-quo correction")
}

/// `theta += (alpha * g_std + beta * g_sq) * delta_actor`.
pub fn sql_update(
    policy: &mut PolicyParams,
    g_std: &GradientVector,
    g_sq: &GradientVector,
    cfg: &LearnerConfig,
) -> Result<()> {
    let n = policy.n_params();
    for g in [g_std, g_sq] {
        if g.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: g.len() });
        }
    }
    for ((p, a), b) in policy.theta_mut().iter_mut().zip(g_std.as_slice()).zip(g_sq.as_slice()) {
        *p += (cfg.alpha * a + cfg.beta * b) * cfg.delta_actor;
    }
    policy.check_finite()
}

/// Baseline targets `(state, R_t, weight)`: the empirical discounted return
/// at every visited state, weighted per `weighting`.
pub fn baseline_targets(
    batch: &[AgentTrajectory<'_>],
    gamma: f64,
    weighting: BaselineWeighting,
) -> Vec<(usize, f64, f64)> {
    let mut out = Vec::with_capacity(batch.iter().map(|t| t.len()).sum());
    for traj in batch {
        let returns = discounted_returns(traj.rewards, gamma);
        let mut d = 1.0;
        for (&s, r) in traj.states.iter().zip(returns) {
            let w = match weighting {
                BaselineWeighting::Uniform => 1.0,
                BaselineWeighting::Discounted => d,
            };
            out.push((s, r, w));
            d *= gamma;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn returns_by_backward_recursion() {
        assert_eq!(discounted_returns(&[-1.0, -2.0], 0.5), vec![-2.0, -2.0]);
        assert_eq!(discounted_returns(&[0.0; 4], 0.9), vec![0.0; 4]);
        assert_eq!(discounted_returns(&[1.0, 2.0, 3.0], 0.0), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn kappa_distribution() {
        let mut r = rng::stream(11, "kappa", 0);
        assert!((0..100).all(|_| sample_kappa(&mut r, 1) == 1));
        let n = 100_000;
        let mut counts = [0usize; 11];
        let mut sum = 0usize;
        for _ in 0..n {
            let k = sample_kappa(&mut r, 10);
            counts[k] += 1;
            sum += k;
        }
        assert_eq!(counts[0], 0);
        for c in &counts[1..] {
            assert!((*c as f64 / n as f64 - 0.1).abs() < 0.005);
        }
        assert!((sum as f64 / n as f64 - 5.5).abs() < 0.05);
    }

    #[test]
    fn imagined_return_examples() {
        let rewards = [-1.0, 7.0];
        let returns = [0.0, -2.0];
        assert_eq!(imagined_return(&rewards, &returns, 1, 2, 0.5).unwrap(), -2.0);
        assert_eq!(imagined_return(&rewards, &returns, 1, 1, 0.5).unwrap(), -1.0 + 0.5 * -2.0);
        assert_eq!(imagined_return(&[0.0, 0.0], &returns, 1, 3, 0.5).unwrap(), 0.125 * -2.0);
        assert!(matches!(
            imagined_return(&rewards, &returns, 0, 1, 0.5),
            Err(Error::UndefinedIndex(_))
        ));
    }

    #[test]
    fn update_arithmetic() {
        let cfg = LearnerConfig::default();
        let mut p = PolicyParams::tabular(1, 2);
        let ones = GradientVector(vec![1.0, 1.0]);
        sql_update(&mut p, &ones, &ones, &cfg).unwrap();
        for v in p.theta() {
            assert!((v - 0.0075).abs() < 1e-15);
        }
        let frozen = LearnerConfig {
            alpha: 0.0,
            beta: 0.0,
            ..cfg
        };
        let before = p.clone();
        sql_update(&mut p, &ones, &ones, &frozen).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn zero_rewards_give_zero_gradients() {
        let p = PolicyParams::tabular(3, 2);
        let b = ValueBaseline::tabular(3, 1.0);
        let traj = AgentTrajectory {
            states: &[0, 1, 2],
            actions: &[0, 1, 1],
            rewards: &[0.0; 3],
        };
        let mut r = rng::stream(0, "k", 0);
        assert!(reinforce_grad(&[traj], &p, &b, 0.9).unwrap().0.iter().all(|v| *v == 0.0));
        assert!(sq_correction(&[traj], &p, &b, 0.9, 10, &mut r).unwrap().0.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bandit_sign() {
        // two steps; only t = 1 contributes; action 0 earns 0, action 1 earns -1
        let p = PolicyParams::tabular(1, 2);
        let b = ValueBaseline::tabular(1, 1.0);
        let good = AgentTrajectory {
            states: &[0, 0],
            actions: &[0, 0],
            rewards: &[0.0, 0.0],
        };
        let bad = AgentTrajectory {
            states: &[0, 0],
            actions: &[0, 1],
            rewards: &[0.0, -1.0],
        };
        let g = reinforce_grad(&[good, bad], &p, &b, 0.9).unwrap();
        assert!(g.0[0] > 0.0 && g.0[1] < 0.0);
    }

    #[test]
    fn correction_matches_hand_computation() {
        let gamma: f64 = 0.8;
        let p = PolicyParams::tabular_from_logits(2, 2, vec![0.2, -0.4, 1.0, 0.5]).unwrap();
        let mut b = ValueBaseline::tabular(2, 1.0);
        b.update_batch(&[(0, -0.3), (1, 0.7)]).unwrap();
        let traj = AgentTrajectory {
            states: &[0, 1, 0],
            actions: &[1, 0, 0],
            rewards: &[-1.0, 2.0, 0.5],
        };
        let g = sq_correction_with(&[traj], &p, &b, gamma, |_, _| 1).unwrap();

        let r = [-1.0, 2.0, 0.5];
        let big_r = [r[0] + gamma * (r[1] + gamma * r[2]), r[1] + gamma * r[2], r[2]];
        let mut expect = vec![0.0; 4];
        let probs = |s: usize| p.action_probs(s).unwrap();
        // t = 1: state 1, previous action 1
        let w1 = gamma * (r[0] + gamma * big_r[1] - 0.7);
        let p1 = probs(1);
        expect[2] += w1 * (0.0 - p1[0]);
        expect[3] += w1 * (1.0 - p1[1]);
        // t = 2: state 0, previous action 0
        let w2 = gamma * gamma * (r[1] + gamma * big_r[2] + 0.3);
        let p0 = probs(0);
        expect[0] += w2 * (1.0 - p0[0]);
        expect[1] += w2 * (0.0 - p0[1]);
        for (a, e) in g.0.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn correction_only_reads_previous_actions() {
        let base = PolicyParams::tabular_from_logits(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let b = ValueBaseline::tabular(2, 1.0);
        let rewards = [-1.0, -2.0, -3.0];
        let a = AgentTrajectory {
            states: &[0, 1, 0],
            actions: &[0, 1, 1],
            rewards: &rewards,
        };
        // the final action is never anyone's previous action
        let b_traj = AgentTrajectory {
            actions: &[0, 1, 2],
            ..a
        };
        let ga = sq_correction_with(&[a], &base, &b, 0.9, |_, _| 2).unwrap();
        let gb = sq_correction_with(&[b_traj], &base, &b, 0.9, |_, _| 2).unwrap();
        assert_eq!(ga, gb);

        // and equals the gradient of the weighted repeat log-probabilities
        let ret = discounted_returns(&rewards, 0.9);
        let w1 = 0.9 * imagined_return(&rewards, &ret, 1, 2, 0.9).unwrap();
        let w2 = 0.81 * imagined_return(&rewards, &ret, 2, 2, 0.9).unwrap();
        let objective = |theta: &[f64]| {
            let q = PolicyParams::tabular_from_logits(2, 3, theta.to_vec()).unwrap();
            w1 * q.action_probs(1).unwrap()[0].ln() + w2 * q.action_probs(0).unwrap()[1].ln()
        };
        let fd = crate::policy::finite_diff_objective_grad(objective, base.theta()).unwrap();
        for (x, e) in ga.0.iter().zip(fd.as_slice()) {
            assert!((x - e).abs() < 1e-6);
        }
    }

    #[test]
    fn config_validation() {
        assert!(LearnerConfig::default().validate().is_ok());
        for bad in [
            LearnerConfig { gamma: 1.0, ..Default::default() },
            LearnerConfig { z: 0, ..Default::default() },
            LearnerConfig { beta: -1.0, ..Default::default() },
            LearnerConfig { batch: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
