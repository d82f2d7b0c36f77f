use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::game::{MarkovGame, PickCounts};
use crate::learner::{
    baseline_targets, reinforce_grad, sq_correction, sql_update, LearnerConfig, PolicyInit, Trajectory,
};
use crate::metrics;
use crate::par::Execution;
use crate::policy::{sample_from, GradientVector, PolicyParams, ValueBaseline};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentSpec {
    Learner(LearnerConfig),
    /// Always plays the same action.
    Fixed { action: usize },
}

impl AgentSpec {
    pub fn learner(&self) -> Option<&LearnerConfig> {
        match self {
            AgentSpec::Learner(cfg) => Some(cfg),
            AgentSpec::Fixed { .. } => None,
        }
    }
}

/// Metrics of one agent in one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub agent: usize,
    /// Batch-mean normalized discounted reward.
    pub ndr: f64,
    /// Fraction of played actions equal to action 0.
    pub p_cooperation: f64,
    /// Own-color share of coin picks, when the game has coins and the agent
    /// picked at least one.
    pub p_own_coin: Option<f64>,
    /// Fraction of steps spent in each observation.
    pub visit_freq: Vec<f64>,
    /// Policy probability of action 0 in each observation after the update.
    pub coop_prob: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub seed: u64,
    pub agents: Vec<AgentSpec>,
    pub state_labels: Vec<String>,
    pub records: Vec<EpochRecord>,
    pub policies: Vec<Option<PolicyParams>>,
    pub baselines: Vec<Option<ValueBaseline>>,
}

impl TrainingHistory {
    pub fn agent_records(&self, agent: usize) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.agent == agent)
    }

    /// Per-epoch series of one scalar metric for one agent.
    pub fn series(&self, agent: usize, metric: impl Fn(&EpochRecord) -> Option<f64>) -> Vec<(usize, f64)> {
        self.agent_records(agent)
            .filter_map(|r| metric(r).map(|v| (r.epoch, v)))
            .collect()
    }

    /// Long-format rows `(epoch, agent, metric, value)`.
    pub fn rows(&self) -> Vec<(usize, usize, String, f64)> {
        let mut out = Vec::new();
        for r in &self.records {
            out.push((r.epoch, r.agent, "ndr".to_string(), r.ndr));
            out.push((r.epoch, r.agent, "p_cooperation".to_string(), r.p_cooperation));
            if let Some(p) = r.p_own_coin {
                out.push((r.epoch, r.agent, "p_own_coin".to_string(), p));
            }
            for (s, label) in self.state_labels.iter().enumerate() {
                out.push((r.epoch, r.agent, format!("visit_{label}"), r.visit_freq[s]));
                if !r.coop_prob.is_empty() {
                    out.push((r.epoch, r.agent, format!("pi_c_{label}"), r.coop_prob[s]));
                }
            }
        }
        out
    }

    /// CSV with columns `epoch,seed,agent,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,seed,agent,metric,value\n");
        for (epoch, agent, metric, value) in self.rows() {
            s.push_str(&format!("{epoch},{},{agent},{metric},{value}\n", self.seed));
        }
        s
    }
}

struct Rollout {
    traj: Trajectory,
    picks: Option<Vec<PickCounts>>,
}

fn rollout<G: MarkovGame>(
    game: &mut G,
    tables: &[Vec<Vec<f64>>],
    specs: &[AgentSpec],
    horizon: usize,
    rng: &mut rng::Rng,
) -> Result<Rollout> {
    let n = specs.len();
    let mut traj = Trajectory::new(n, horizon);
    let mut actions = vec![0; n];
    game.reset(rng);
    for _ in 0..horizon {
        for i in 0..n {
            let s = game.observe(i);
            actions[i] = match &specs[i] {
                AgentSpec::Fixed { action } => *action,
                AgentSpec::Learner(_) => sample_from(&tables[i][s], rng),
            };
            traj.states[i].push(s);
            traj.actions[i].push(actions[i]);
        }
        let rewards = game.step(&actions, rng)?;
        for (i, r) in rewards.into_iter().enumerate() {
            if !r.is_finite() {
                return Err(Error::numerical("environment step", format!("agent {i} reward {r}")));
            }
            traj.rewards[i].push(r);
        }
    }
    Ok(Rollout {
        picks: game.pick_counts(),
        traj,
    })
}

fn prob_table(policy: &PolicyParams, n_states: usize) -> Result<Vec<Vec<f64>>> {
    (0..n_states).map(|s| policy.action_probs(s)).collect()
}

/// Train all learners jointly by self-play in games built by `factory`.
///
/// Episode length, batch size and epoch count come from the learner
/// configurations, which must agree on them. Rollout `b` of epoch `e` draws
/// from stream `(seed, "rollout", [e, b])`; learner `i`'s imagined-horizon
/// draws come from `(seed, "kappa", [e, i])`. Results are identical under
/// both execution modes.
pub fn train<G, F>(factory: F, specs: &[AgentSpec], seed: u64, exec: Execution) -> Result<TrainingHistory>
where
    G: MarkovGame,
    F: Fn() -> Result<G> + Sync,
{
    let probe = factory()?;
    let n_agents = probe.n_agents();
    let n_states = probe.n_states();
    let n_actions = probe.n_actions();
    if specs.len() != n_agents {
        return Err(Error::Config(format!(
            "game has {n_agents} agents but {} specs were given",
            specs.len()
        )));
    }
    let learners: Vec<&LearnerConfig> = specs.iter().filter_map(AgentSpec::learner).collect();
    let Some(&lead) = learners.first() else {
        return Err(Error::Config("at least one agent must be a learner".into()));
    };
    for cfg in &learners {
        cfg.validate()?;
        if (cfg.horizon, cfg.batch, cfg.epochs) != (lead.horizon, lead.batch, lead.epochs) {
            return Err(Error::Config("learners must share horizon, batch and epochs".into()));
        }
    }
    for spec in specs {
        if let AgentSpec::Fixed { action } = spec {
            if *action >= n_actions {
                return Err(Error::InvalidAction {
                    action: *action,
                    n_actions,
                });
            }
        }
    }
    let (horizon, batch, epochs) = (lead.horizon, lead.batch, lead.epochs);
    let lead = lead.clone();

    let mut policies: Vec<Option<PolicyParams>> = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            spec.learner().map(|cfg| match cfg.init {
                PolicyInit::Zero => PolicyParams::tabular(n_states, n_actions),
                PolicyInit::Gaussian { std } => PolicyParams::tabular_gaussian(
                    n_states,
                    n_actions,
                    std,
                    &mut rng::stream(seed, "init", i as u64),
                ),
            })
        })
        .collect();
    let mut baselines: Vec<Option<ValueBaseline>> = specs
        .iter()
        .map(|s| s.learner().map(|cfg| ValueBaseline::tabular(n_states, cfg.delta_critic)))
        .collect();
    let state_labels: Vec<String> = (0..n_states).map(|s| probe.state_label(s)).collect();
    drop(probe);

    let mut records = Vec::with_capacity(epochs * n_agents);
    for epoch in 0..epochs {
        let tables: Vec<Vec<Vec<f64>>> = policies
            .iter()
            .map(|p| p.as_ref().map_or(Ok(Vec::new()), |p| prob_table(p, n_states)))
            .collect::<Result<_>>()?;
        let rollouts = exec.try_map(batch, |b| {
            let mut game = factory()?;
            let mut r = rng::stream_path(seed, "rollout", &[epoch as u64, b as u64]);
            rollout(&mut game, &tables, specs, horizon, &mut r)
        })?;

        for (i, spec) in specs.iter().enumerate() {
            let views: Vec<_> = rollouts.iter().map(|r| r.traj.agent(i)).collect();
            if let (AgentSpec::Learner(cfg), Some(policy), Some(baseline)) =
                (spec, policies[i].as_mut(), baselines[i].as_mut())
            {
                let context = |e: Error| match e {
                    Error::Numerical { context, detail } => Error::Numerical {
                        context: format!("epoch {epoch}, agent {i}: {context}"),
                        detail,
                    },
                    other => other,
                };
                baseline.update_weighted(&baseline_targets(&views, cfg.gamma, cfg.baseline_weighting)).map_err(context)?;
                let g_std = if cfg.alpha != 0.0 {
                    reinforce_grad(&views, policy, baseline, cfg.gamma).map_err(context)?
                } else {
                    GradientVector::zeros(policy.n_params())
                };
                let g_sq = if cfg.beta != 0.0 {
                    let mut kr = rng::stream_path(seed, "kappa", &[epoch as u64, i as u64]);
                    sq_correction(&views, policy, baseline, cfg.gamma, cfg.z, &mut kr).map_err(context)?
                } else {
                    GradientVector::zeros(policy.n_params())
                };
                let snapshot = policy.clone();
                if let Err(e) = sql_update(policy, &g_std, &g_sq, cfg) {
                    return Err(Error::Numerical {
                        context: format!("epoch {epoch}, agent {i}"),
                        detail: format!(
                            "{e}; last finite parameters: {}",
                            serde_json::to_string(&snapshot).unwrap_or_default()
                        ),
                    });
                }
            }
            let gamma = spec.learner().map_or(lead.gamma, |c| c.gamma);
            records.push(epoch_record(epoch, i, gamma, &views, &rollouts, policies[i].as_ref(), n_states)?);
        }
        if epoch % 100 == 0 {
            log::debug!(
                "seed {seed} epoch {epoch}: ndr {:?}",
                records[records.len() - n_agents..].iter().map(|r| r.ndr).collect::<Vec<_>>()
            );
        }
    }

    Ok(TrainingHistory {
        seed,
        agents: specs.to_vec(),
        state_labels,
        records,
        policies,
        baselines,
    })
}

fn epoch_record(
    epoch: usize,
    agent: usize,
    gamma: f64,
    views: &[crate::learner::AgentTrajectory<'_>],
    rollouts: &[Rollout],
    policy: Option<&PolicyParams>,
    n_states: usize,
) -> Result<EpochRecord> {
    let ndr = views.iter().map(|v| metrics::ndr(v.rewards, gamma)).sum::<f64>() / views.len() as f64;
    let actions: Vec<usize> = views.iter().flat_map(|v| v.actions.iter().copied()).collect();
    let p_cooperation = metrics::p_cooperation(&actions)?;
    let mut visits = vec![0.0; n_states];
    for v in views {
        for &s in v.states {
            visits[s] += 1.0;
        }
    }
    let total = actions.len() as f64;
    visits.iter_mut().for_each(|c| *c /= total);
    let p_own_coin = rollouts
        .iter()
        .map(|r| r.picks.as_ref().map(|p| p[agent]))
        .collect::<Option<Vec<_>>>()
        .and_then(|picks| {
            let own: u64 = picks.iter().map(|p| p.own).sum();
            let other: u64 = picks.iter().map(|p| p.other).sum();
            metrics::p_own_coin(own, other)
        });
    let coop_prob = match policy {
        Some(p) => (0..n_states).map(|s| p.tabular_prob(s, 0)).collect(),
        None => Vec::new(),
    };
    Ok(EpochRecord {
        epoch,
        agent,
        ndr,
        p_cooperation,
        p_own_coin,
        visit_freq: visits,
        coop_prob,
    })
}
