use crate::envs::matrix::{IteratedMatrixEnv, MatrixState, PayoffMatrix};
use crate::envs::{BraessConfig, BraessEnv};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Own-color and other-color coin picks of one agent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PickCounts {
    pub own: u64,
    pub other: u64,
}

/// A fully observed multi-agent game with a finite per-agent observation
/// space, played by the training loop.
pub trait MarkovGame {
    fn n_agents(&self) -> usize;
    /// Number of distinct per-agent observations.
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn reset(&mut self, rng: &mut Rng);
    /// Observation index of `agent`, from its own perspective.
    fn observe(&self, agent: usize) -> usize;
    fn step(&mut self, actions: &[usize], rng: &mut Rng) -> Result<Vec<f64>>;

    fn state_label(&self, state: usize) -> String {
        state.to_string()
    }

    /// Coin picks since the last reset, for games that have coins.
    fn pick_counts(&self) -> Option<Vec<PickCounts>> {
        None
    }
}

/// Iterated 2x2 game; each agent sees `(own previous action, other's
/// previous action)`.
#[derive(Clone, Debug)]
pub struct MatrixGame {
    env: IteratedMatrixEnv,
}

impl MatrixGame {
    pub fn new(payoff: PayoffMatrix, horizon: usize) -> Result<Self> {
        Ok(Self {
            env: IteratedMatrixEnv::new(payoff, horizon)?,
        })
    }

    pub fn by_name(name: &str, horizon: usize) -> Result<Self> {
        Self::new(PayoffMatrix::by_name(name)?, horizon)
    }
}

impl MarkovGame for MatrixGame {
    fn n_agents(&self) -> usize {
        2
    }

    fn n_states(&self) -> usize {
        MatrixState::COUNT
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, _rng: &mut Rng) {
        self.env.reset();
    }

    fn observe(&self, agent: usize) -> usize {
        self.env.state_for(agent).index()
    }

    fn step(&mut self, actions: &[usize], _rng: &mut Rng) -> Result<Vec<f64>> {
        let [a, b] = actions else {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: actions.len(),
            });
        };
        let (_, r) = self.env.step([*a, *b])?;
        Ok(r.to_vec())
    }

    fn state_label(&self, state: usize) -> String {
        MatrixState::from_index(state).map_or_else(|| state.to_string(), |s| s.label().to_string())
    }
}

#[derive(Clone, Debug)]
pub struct BraessGame {
    env: BraessEnv,
}

impl BraessGame {
    pub fn new(cfg: BraessConfig) -> Result<Self> {
        Ok(Self {
            env: BraessEnv::new(cfg)?,
        })
    }
}

impl MarkovGame for BraessGame {
    fn n_agents(&self) -> usize {
        self.env.config().agents
    }

    fn n_states(&self) -> usize {
        self.env.config().n_states()
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, _rng: &mut Rng) {
        self.env.reset();
    }

    fn observe(&self, agent: usize) -> usize {
        self.env.observe(agent)
    }

    fn step(&mut self, actions: &[usize], _rng: &mut Rng) -> Result<Vec<f64>> {
        self.env.step(actions)
    }
}
