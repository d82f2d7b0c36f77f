//! The matrix game obtained by letting each agent choose, every step,
//! between its cooperation and defection oracle.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::distill::oracle::GreedyPolicy;
use crate::distill::visual::VisualGame;
use crate::envs::matrix::{classify_dilemma, DilemmaClass, MatrixState};
use crate::error::{Error, Result};
use crate::learner::{MarkovGame, PickCounts};
use crate::rng::{self, Rng};

/// Meta-action 0 consults the cooperation oracle, 1 the defection oracle.
pub const COOPERATE: usize = 0;
pub const DEFECT: usize = 1;

/// Cooperation and defection oracles of one agent.
#[derive(Clone, Debug)]
pub struct OraclePair {
    pub cooperate: GreedyPolicy,
    pub defect: GreedyPolicy,
}

impl OraclePair {
    pub fn get(&self, meta_action: usize) -> &GreedyPolicy {
        if meta_action == COOPERATE {
            &self.cooperate
        } else {
            &self.defect
        }
    }
}

/// Both agents observe the previous joint meta-action, so the meta-state
/// space is that of an iterated 2x2 game.
#[derive(Clone, Debug)]
pub struct MetaGame<G> {
    pub game: G,
    oracles: Arc<[OraclePair; 2]>,
    last: MatrixState,
}

impl<G: VisualGame> MetaGame<G> {
    pub fn new(game: G, oracles: Arc<[OraclePair; 2]>) -> Self {
        Self {
            game,
            oracles,
            last: MatrixState::Start,
        }
    }

    /// One environment step with each agent following its chosen oracle
    /// greedily on its own observation.
    pub fn meta_step(&mut self, meta_actions: [usize; 2], rng: &mut Rng) -> Result<(MatrixState, [f64; 2])> {
        for &a in &meta_actions {
            if a > DEFECT {
                return Err(Error::InvalidAction { action: a, n_actions: 2 });
            }
        }
        let moves = [
            self.oracles[0].get(meta_actions[0]).act(&self.game.observe(0))?,
            self.oracles[1].get(meta_actions[1]).act(&self.game.observe(1))?,
        ];
        let rewards = self.game.step(moves, rng);
        self.last = MatrixState::Joint(meta_actions[0], meta_actions[1]);
        Ok((self.last, rewards))
    }

    pub fn state(&self) -> MatrixState {
        self.last
    }
}

impl<G: VisualGame> MarkovGame for MetaGame<G> {
    fn n_agents(&self) -> usize {
        2
    }

    fn n_states(&self) -> usize {
        MatrixState::COUNT
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut Rng) {
        self.game.reset(rng);
        self.last = MatrixState::Start;
    }

    fn observe(&self, agent: usize) -> usize {
        if agent == 0 {
            self.last.index()
        } else {
            self.last.swapped().index()
        }
    }

    fn step(&mut self, actions: &[usize], rng: &mut Rng) -> Result<Vec<f64>> {
        let [a, b] = actions else {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: actions.len(),
            });
        };
        Ok(self.meta_step([*a, *b], rng)?.1.to_vec())
    }

    fn state_label(&self, state: usize) -> String {
        MatrixState::from_index(state).map_or_else(|| state.to_string(), |s| s.label().to_string())
    }

    fn pick_counts(&self) -> Option<Vec<PickCounts>> {
        self.game.pick_counts().map(|p| p.to_vec())
    }
}

/// Mean per-step rewards of agent 0 under each fixed pair of meta-actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaPayoffs {
    /// `[own][other]` mean reward of agent 0.
    pub row: [[f64; 2]; 2],
    /// Own-coin pick fraction of agent 0 under each pair, when picks occur.
    pub own_coin: [[Option<f64>; 2]; 2],
    pub dilemma: DilemmaClass,
}

/// Monte Carlo estimate of the reduced game's payoffs.
pub fn estimate_meta_payoffs<G: VisualGame>(
    base: &MetaGame<G>,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<MetaPayoffs> {
    let mut row = [[0.0; 2]; 2];
    let mut own_coin = [[None; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let (mut total, mut own, mut other) = (0.0, 0u64, 0u64);
            for ep in 0..episodes {
                let mut r = rng::stream_path(seed, "meta-payoff", &[a as u64, b as u64, ep as u64]);
                let mut g = base.clone();
                MarkovGame::reset(&mut g, &mut r);
                for _ in 0..horizon {
                    total += g.meta_step([a, b], &mut r)?.1[0];
                }
                if let Some(p) = g.game.pick_counts() {
                    own += p[0].own;
                    other += p[0].other;
                }
            }
            row[a][b] = total / (episodes * horizon).max(1) as f64;
            own_coin[a][b] = (own + other > 0).then(|| own as f64 / (own + other) as f64);
        }
    }
    let (r, s, t, p) = (row[0][0], row[0][1], row[1][0], row[1][1]);
    Ok(MetaPayoffs {
        row,
        own_coin,
        dilemma: classify_dilemma(r, s, t, p),
    })
}
