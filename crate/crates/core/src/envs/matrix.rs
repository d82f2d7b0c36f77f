//! Iterated 2x2 matrix games.
//!
//! Action index 0 is Cooperate (Heads in Matching Pennies) and index 1 is
//! Defect (Tails). The agent-facing state is the previous joint action seen
//! from that agent's own perspective: `(own action, opponent action)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const COOPERATE: usize = 0;
pub const DEFECT: usize = 1;

/// Two-player payoff table. `rewards[row][col] = [row reward, col reward]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PayoffMatrix {
    labels: [[String; 2]; 2],
    rewards: [[[f64; 2]; 2]; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ActionLabels {
    Shared([String; 2]),
    PerPlayer([[String; 2]; 2]),
}

#[derive(Serialize, Deserialize)]
struct PayoffDoc {
    actions: ActionLabels,
    rewards: Vec<Vec<Vec<f64>>>,
}

impl PayoffMatrix {
    pub fn new(labels: [[String; 2]; 2], rewards: [[[f64; 2]; 2]; 2]) -> Result<Self> {
        if rewards.iter().flatten().flatten().any(|r| !r.is_finite()) {
            return Err(Error::Config("payoff entries must be finite".into()));
        }
        Ok(Self { labels, rewards })
    }

    /// Symmetric dilemma from the row player's `R, S, T, P`.
    pub fn symmetric(labels: [&str; 2], r: f64, s: f64, t: f64, p: f64) -> Result<Self> {
        let l = [labels[0].to_string(), labels[1].to_string()];
        Self::new([l.clone(), l], [[[r, r], [s, t]], [[t, s], [p, p]]])
    }

    pub fn prisoners_dilemma() -> Self {
        Self::symmetric(["C", "D"], -1.0, -3.0, 0.0, -2.0).unwrap()
    }

    pub fn matching_pennies() -> Self {
        let l = ["H".to_string(), "T".to_string()];
        Self::new(
            [l.clone(), l],
            [[[1.0, -1.0], [-1.0, 1.0]], [[-1.0, 1.0], [1.0, -1.0]]],
        )
        .unwrap()
    }

    pub fn stag_hunt() -> Self {
        Self::symmetric(["C", "D"], 0.0, -4.0, -1.0, -3.0).unwrap()
    }

    pub fn chicken() -> Self {
        Self::symmetric(["C", "D"], -1.0, -3.0, 0.0, -4.0).unwrap()
    }

    /// Built-in games: `ipd`, `imp`, `ish`, `icg`.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "ipd" => Ok(Self::prisoners_dilemma()),
            "imp" => Ok(Self::matching_pennies()),
            "ish" => Ok(Self::stag_hunt()),
            "icg" => Ok(Self::chicken()),
            other => Err(Error::Config(format!("unknown matrix game {other:?}"))),
        }
    }

    pub fn is_builtin(name: &str) -> bool {
        matches!(name, "ipd" | "imp" | "ish" | "icg")
    }

    pub fn labels(&self) -> &[[String; 2]; 2] {
        &self.labels
    }

    pub fn table(&self) -> &[[[f64; 2]; 2]; 2] {
        &self.rewards
    }

    pub fn rewards(&self, row: usize, col: usize) -> [f64; 2] {
        self.rewards[row][col]
    }

    /// Row-player `(R, S, T, P)`.
    pub fn rstp(&self) -> (f64, f64, f64, f64) {
        let m = &self.rewards;
        (m[0][0][0], m[0][1][0], m[1][0][0], m[1][1][0])
    }

    pub fn max_entry(&self) -> f64 {
        self.rewards
            .iter()
            .flatten()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PayoffDoc = serde_json::from_str(text)?;
        let labels = match doc.actions {
            ActionLabels::Shared(l) => [l.clone(), l],
            ActionLabels::PerPlayer(l) => l,
        };
        let bad = || Error::Config("payoff \"rewards\" must be a 2x2x2 array".into());
        if doc.rewards.len() != 2 {
            return Err(bad());
        }
        let mut rewards = [[[0.0; 2]; 2]; 2];
        for (i, row) in doc.rewards.iter().enumerate() {
            if row.len() != 2 {
                return Err(bad());
            }
            for (j, cell) in row.iter().enumerate() {
                if cell.len() != 2 {
                    return Err(bad());
                }
                rewards[i][j] = [cell[0], cell[1]];
            }
        }
        Self::new(labels, rewards)
    }

    pub fn to_json(&self) -> String {
        let actions = if self.labels[0] == self.labels[1] {
            ActionLabels::Shared(self.labels[0].clone())
        } else {
            ActionLabels::PerPlayer(self.labels.clone())
        };
        let rewards = self
            .rewards
            .iter()
            .map(|row| row.iter().map(|c| c.to_vec()).collect())
            .collect();
        serde_json::to_string_pretty(&PayoffDoc { actions, rewards }).expect("payoff serializes")
    }
}

/// Shift every entry by the global maximum so that all rewards are
/// non-positive. Returns the shifted matrix and the subtracted constant.
pub fn make_nonpositive(m: &PayoffMatrix) -> (PayoffMatrix, f64) {
    let shift = m.max_entry();
    let mut rewards = m.rewards;
    rewards.iter_mut().flatten().flatten().for_each(|r| *r -= shift);
    (
        PayoffMatrix {
            labels: m.labels.clone(),
            rewards,
        },
        shift,
    )
}

/// Social-dilemma classification of a symmetric 2x2 game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DilemmaClass {
    /// R > P
    pub rule1: bool,
    /// R > S
    pub rule2: bool,
    /// 2R > T + S
    pub rule3: bool,
    /// T > R
    pub greed: bool,
    /// P > S
    pub fear: bool,
    pub is_dilemma: bool,
}

pub fn classify_dilemma(r: f64, s: f64, t: f64, p: f64) -> DilemmaClass {
    let rule1 = r > p;
    let rule2 = r > s;
    let rule3 = 2.0 * r > t + s;
    let greed = t > r;
    let fear = p > s;
    DilemmaClass {
        rule1,
        rule2,
        rule3,
        greed,
        fear,
        is_dilemma: rule1 && rule2 && rule3 && (greed || fear),
    }
}

/// Previous joint action, or the distinguished start state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatrixState {
    Start,
    Joint(usize, usize),
}

impl MatrixState {
    pub const COUNT: usize = 5;
    pub const ALL: [MatrixState; 5] = [
        MatrixState::Start,
        MatrixState::Joint(0, 0),
        MatrixState::Joint(0, 1),
        MatrixState::Joint(1, 0),
        MatrixState::Joint(1, 1),
    ];

    /// Fixed ordering Start, CC, CD, DC, DD.
    pub fn index(self) -> usize {
        match self {
            MatrixState::Start => 0,
            MatrixState::Joint(a, b) => 1 + 2 * a + b,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// The same state seen by the other player.
    pub fn swapped(self) -> Self {
        match self {
            MatrixState::Start => MatrixState::Start,
            MatrixState::Joint(a, b) => MatrixState::Joint(b, a),
        }
    }

    pub fn label(self) -> &'static str {
        ["Start", "CC", "CD", "DC", "DD"][self.index()]
    }
}

pub fn encode_state(s: MatrixState) -> [f64; 5] {
    let mut v = [0.0; 5];
    v[s.index()] = 1.0;
    v
}

#[derive(Clone, Debug)]
pub struct IteratedMatrixEnv {
    payoff: PayoffMatrix,
    horizon: usize,
    current: MatrixState,
    t: usize,
}

impl IteratedMatrixEnv {
    pub const DEFAULT_HORIZON: usize = 200;

    pub fn new(payoff: PayoffMatrix, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(Self {
            payoff,
            horizon,
            current: MatrixState::Start,
            t: 0,
        })
    }

    pub fn payoff(&self) -> &PayoffMatrix {
        &self.payoff
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn reset(&mut self) -> MatrixState {
        self.current = MatrixState::Start;
        self.t = 0;
        self.current
    }

    /// Global state, row player's perspective.
    pub fn state(&self) -> MatrixState {
        self.current
    }

    /// State as observed by `agent` (0 = row, 1 = column).
    pub fn state_for(&self, agent: usize) -> MatrixState {
        if agent == 0 {
            self.current
        } else {
            self.current.swapped()
        }
    }

    pub fn step(&mut self, joint: [usize; 2]) -> Result<(MatrixState, [f64; 2])> {
        if self.t >= self.horizon {
            return Err(Error::EpisodeExhausted {
                horizon: self.horizon,
            });
        }
        for &a in &joint {
            if a > 1 {
                return Err(Error::InvalidAction { action: a, n_actions: 2 });
            }
        }
        let rewards = self.payoff.rewards(joint[0], joint[1]);
        self.current = MatrixState::Joint(joint[0], joint[1]);
        self.t += 1;
        Ok((self.current, rewards))
    }
}
