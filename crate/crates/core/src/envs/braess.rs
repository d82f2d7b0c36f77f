//! N-player Braess-paradox congestion game.
//!
//! Agent `i` (0-based) has integer ID `i + 1`. Cooperating odd-ID agents take
//! Start-A-End, cooperating even-ID agents take Start-B-End, and defectors take
//! the bridge Start-A-B-End. Every edge cost is counted as a negative reward.

use serde::{Deserialize, Serialize};

use crate::envs::matrix::{COOPERATE, DEFECT};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BraessObservation {
    /// The full previous joint profile.
    #[default]
    FullProfile,
    /// Own previous action plus the number of other defectors.
    OwnAndDefectorCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BraessConfig {
    pub agents: usize,
    pub horizon: usize,
    #[serde(default)]
    pub observation: BraessObservation,
}

impl BraessConfig {
    pub fn new(agents: usize, horizon: usize) -> Result<Self> {
        let cfg = Self {
            agents,
            horizon,
            observation: BraessObservation::FullProfile,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents < 2 || self.agents % 2 != 0 {
            return Err(Error::Config(format!(
                "braess needs an even agent count >= 2, got {}",
                self.agents
            )));
        }
        if self.agents > 16 && self.observation == BraessObservation::FullProfile {
            return Err(Error::Config("full-profile observation supports at most 16 agents".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(())
    }

    /// Base reward `R0 = 2.5 * N0 / 2`.
    pub fn base_reward(&self) -> f64 {
        2.5 * self.agents as f64 / 2.0
    }

    /// Number of distinct per-agent observations, including Start.
    pub fn n_states(&self) -> usize {
        match self.observation {
            BraessObservation::FullProfile => (1 << self.agents) + 1,
            BraessObservation::OwnAndDefectorCount => 2 * self.agents + 1,
        }
    }
}

fn is_odd_id(agent: usize) -> bool {
    (agent + 1) % 2 == 1
}

pub fn braess_rewards(actions: &[usize], cfg: &BraessConfig) -> Result<Vec<f64>> {
    if actions.len() != cfg.agents {
        return Err(Error::Config(format!(
            "expected {} actions, got {}",
            cfg.agents,
            actions.len()
        )));
    }
    if let Some(&a) = actions.iter().find(|&&a| a > DEFECT) {
        return Err(Error::InvalidAction { action: a, n_actions: 2 });
    }
    let defectors = actions.iter().filter(|&&a| a == DEFECT).count();
    let odd_coop = actions
        .iter()
        .enumerate()
        .filter(|&(i, &a)| a == COOPERATE && is_odd_id(i))
        .count();
    let even_coop = actions
        .iter()
        .enumerate()
        .filter(|&(i, &a)| a == COOPERATE && !is_odd_id(i))
        .count();
    let n_start_a = (odd_coop + defectors) as f64;
    let n_b_end = (even_coop + defectors) as f64;
    let r0 = cfg.base_reward();
    Ok(actions
        .iter()
        .enumerate()
        .map(|(i, &a)| match (a == DEFECT, is_odd_id(i)) {
            (true, _) => -(n_start_a + n_b_end),
            (false, true) => -(n_start_a + r0),
            (false, false) => -(r0 + n_b_end),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BraessState {
    Start,
    Profile(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct BraessEnv {
    cfg: BraessConfig,
    state: BraessState,
    t: usize,
}

impl BraessEnv {
    pub fn new(cfg: BraessConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: BraessState::Start,
            t: 0,
        })
    }

    pub fn config(&self) -> &BraessConfig {
        &self.cfg
    }

    pub fn state(&self) -> &BraessState {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state = BraessState::Start;
        self.t = 0;
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<Vec<f64>> {
        if self.t >= self.cfg.horizon {
            return Err(Error::EpisodeExhausted {
                horizon: self.cfg.horizon,
            });
        }
        let rewards = braess_rewards(actions, &self.cfg)?;
        self.state = BraessState::Profile(actions.to_vec());
        self.t += 1;
        Ok(rewards)
    }

    /// Tabular observation index for `agent`. Index 0 is Start.
    pub fn observe(&self, agent: usize) -> usize {
        match &self.state {
            BraessState::Start => 0,
            BraessState::Profile(p) => match self.cfg.observation {
                BraessObservation::FullProfile => {
                    1 + p.iter().enumerate().fold(0, |acc, (i, &a)| acc | (a << i))
                }
                BraessObservation::OwnAndDefectorCount => {
                    let others = p
                        .iter()
                        .enumerate()
                        .filter(|&(i, &a)| i != agent && a == DEFECT)
                        .count();
                    1 + p[agent] * self.cfg.agents + others
                }
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(n: usize) -> BraessConfig {
        BraessConfig::new(n, 200).unwrap()
    }

    #[test]
    fn base_reward_is_one_and_a_quarter_n() {
        assert_eq!(cfg(4).base_reward(), 5.0);
        assert_eq!(cfg(6).base_reward(), 7.5);
        assert!(BraessConfig::new(3, 10).is_err());
        assert!(BraessConfig::new(0, 10).is_err());
    }

    #[test]
    fn cost_function_examples() {
        assert_eq!(braess_rewards(&[1, 1, 1, 1], &cfg(4)).unwrap(), vec![-8.0; 4]);
        assert_eq!(braess_rewards(&[0, 0, 0, 0], &cfg(4)).unwrap(), vec![-7.0; 4]);
        // agent 0 has ID 1 (odd) and defects
        assert_eq!(
            braess_rewards(&[1, 0, 0, 0], &cfg(4)).unwrap(),
            vec![-5.0, -8.0, -7.0, -8.0]
        );
        assert!(braess_rewards(&[0, 0, 0], &cfg(4)).is_err());
    }

    #[test]
    fn stepping_records_profile() {
        let mut env = BraessEnv::new(cfg(4)).unwrap();
        assert_eq!(env.observe(2), 0);
        for _ in 0..3 {
            assert_eq!(env.step(&[0, 0, 0, 0]).unwrap(), vec![-7.0; 4]);
        }
        assert_eq!(env.state(), &BraessState::Profile(vec![0, 0, 0, 0]));
        env.step(&[1, 0, 0, 1]).unwrap();
        assert_eq!(env.observe(0), 1 + 0b1001);
    }

    #[test]
    fn defector_count_observation() {
        let mut c = cfg(4);
        c.observation = BraessObservation::OwnAndDefectorCount;
        assert_eq!(c.n_states(), 9);
        let mut env = BraessEnv::new(c).unwrap();
        env.step(&[1, 1, 0, 0]).unwrap();
        assert_eq!(env.observe(0), 1 + 4 + 1);
        assert_eq!(env.observe(2), 1 + 2);
    }

    proptest! {
        #[test]
        fn rewards_are_nonpositive(profile in proptest::collection::vec(0usize..2, 6)) {
            let r = braess_rewards(&profile, &cfg(6)).unwrap();
            prop_assert!(r.iter().all(|&x| x <= 0.0));
        }

        #[test]
        fn equivariant_within_parity_class(profile in proptest::collection::vec(0usize..2, 6)) {
            // indices 0, 2, 4 are odd IDs; swap agents 0 and 4
            let mut swapped = profile.clone();
            swapped.swap(0, 4);
            let a = braess_rewards(&profile, &cfg(6)).unwrap();
            let b = braess_rewards(&swapped, &cfg(6)).unwrap();
            prop_assert_eq!(a[0], b[4]);
            prop_assert_eq!(a[4], b[0]);
            for i in [1, 2, 3, 5] {
                prop_assert_eq!(a[i], b[i]);
            }
        }
    }

    #[test]
    fn dilemma_structure_for_four_agents() {
        let c = cfg(4);
        let coop = braess_rewards(&[0; 4], &c).unwrap();
        let defect = braess_rewards(&[1; 4], &c).unwrap();
        assert!(coop.iter().zip(&defect).all(|(a, b)| a > b));
        for i in 0..4 {
            let mut p = vec![0; 4];
            p[i] = 1;
            assert!(braess_rewards(&p, &c).unwrap()[i] > coop[i]);
        }
    }
}
