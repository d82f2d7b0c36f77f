//! Visual 7x7 Stag Hunt.
//!
//! Layouts are 7 lines of 7 characters: `#` wall, `.` floor, `S` stag, `H`
//! hare. The stag is the joint target: both agents standing on it in the same
//! step earns +25 each, a lone agent earns nothing. The hare is the solo
//! target worth +4 to every agent standing on it. Note that some published
//! descriptions of this environment swap the two animal names; rewards here
//! are keyed to the solo/joint role, not the name.
//!
//! After any target is consumed, both targets stay at their fixed cells and
//! both agents are re-placed on uniformly random free floor cells.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::grid::{Move, Observation, Pos};
use crate::error::{Error, Result};

pub const SIZE: usize = 7;
pub const CHANNELS: usize = 5;
pub const JOINT_REWARD: f64 = 25.0;
pub const SOLO_REWARD: f64 = 4.0;

pub const DEFAULT_LAYOUT: &str = include_str!("../../data/staghunt.txt");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    walls: Vec<bool>,
    pub stag_pos: Pos,
    pub hare_pos: Pos,
}

impl Layout {
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != SIZE || lines.iter().any(|l| l.trim_end().chars().count() != SIZE) {
            return Err(Error::Config(format!("stag hunt layout must be {SIZE}x{SIZE}")));
        }
        let mut walls = vec![false; SIZE * SIZE];
        let (mut stag, mut hare) = (None, None);
        for (r, line) in lines.iter().enumerate() {
            for (c, ch) in line.trim_end().chars().enumerate() {
                match ch {
                    '#' => walls[r * SIZE + c] = true,
                    '.' => {}
                    'S' if stag.is_none() => stag = Some(Pos::new(r, c)),
                    'H' if hare.is_none() => hare = Some(Pos::new(r, c)),
                    other => {
                        return Err(Error::Config(format!(
                            "unexpected layout character {other:?} at ({r}, {c})"
                        )))
                    }
                }
            }
        }
        let (Some(stag_pos), Some(hare_pos)) = (stag, hare) else {
            return Err(Error::Config("layout needs one S and one H".into()));
        };
        let layout = Self {
            walls,
            stag_pos,
            hare_pos,
        };
        if layout.spawn_cells().len() < 2 {
            return Err(Error::Config("layout needs at least two free floor cells".into()));
        }
        Ok(layout)
    }

    pub fn default_layout() -> Self {
        Self::parse(DEFAULT_LAYOUT).expect("bundled layout is valid")
    }

    pub fn is_wall(&self, p: Pos) -> bool {
        self.walls[p.row * SIZE + p.col]
    }

    pub fn floor_cells(&self) -> Vec<Pos> {
        (0..SIZE * SIZE)
            .map(|i| Pos::new(i / SIZE, i % SIZE))
            .filter(|&p| !self.is_wall(p))
            .collect()
    }

    /// Floor cells that hold no target.
    pub fn spawn_cells(&self) -> Vec<Pos> {
        self.floor_cells()
            .into_iter()
            .filter(|&p| p != self.stag_pos && p != self.hare_pos)
            .collect()
    }

    /// Where `m` takes an agent at `p`; blocked moves stay put.
    pub fn apply(&self, m: Move, p: Pos) -> Pos {
        let q = m.apply(p, SIZE, SIZE);
        if self.is_wall(q) {
            p
        } else {
            q
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Capture {
    Stag,
    Hare,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StagHuntStep {
    pub rewards: [f64; 2],
    pub captures: [Option<Capture>; 2],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagHuntState {
    pub layout: Layout,
    pub red_pos: Pos,
    pub blue_pos: Pos,
    pub step_count: usize,
}

impl StagHuntState {
    pub fn random(layout: Layout, rng: &mut impl Rng) -> Self {
        let mut s = Self {
            red_pos: layout.stag_pos,
            blue_pos: layout.stag_pos,
            layout,
            step_count: 0,
        };
        s.replace_agents(rng);
        s
    }

    pub fn agent_pos(&self, agent: usize) -> Pos {
        if agent == 0 {
            self.red_pos
        } else {
            self.blue_pos
        }
    }

    fn replace_agents(&mut self, rng: &mut impl Rng) {
        let cells = self.layout.spawn_cells();
        let a = rng.gen_range(0..cells.len());
        let mut b = rng.gen_range(0..cells.len() - 1);
        if b >= a {
            b += 1;
        }
        self.red_pos = cells[a];
        self.blue_pos = cells[b];
    }

    pub fn step(&mut self, actions: [Move; 2], rng: &mut impl Rng) -> StagHuntStep {
        self.red_pos = self.layout.apply(actions[0], self.red_pos);
        self.blue_pos = self.layout.apply(actions[1], self.blue_pos);
        self.step_count += 1;
        let stag = self.layout.stag_pos;
        let hare = self.layout.hare_pos;
        let mut rewards = [0.0; 2];
        let mut captures = [None; 2];
        if self.red_pos == stag && self.blue_pos == stag {
            rewards = [JOINT_REWARD; 2];
            captures = [Some(Capture::Stag); 2];
        } else {
            for agent in 0..2 {
                if self.agent_pos(agent) == hare {
                    rewards[agent] = SOLO_REWARD;
                    captures[agent] = Some(Capture::Hare);
                }
            }
        }
        if captures.iter().any(Option::is_some) {
            self.replace_agents(rng);
        }
        StagHuntStep { rewards, captures }
    }

    /// Channels: own agent, other agent, stag, hare, walls.
    pub fn observe(&self, agent: usize) -> Observation {
        let mut obs = Observation::zeros(CHANNELS, SIZE, SIZE);
        obs.set(0, self.agent_pos(agent));
        obs.set(1, self.agent_pos(1 - agent));
        obs.set(2, self.layout.stag_pos);
        obs.set(3, self.layout.hare_pos);
        for p in (0..SIZE * SIZE).map(|i| Pos::new(i / SIZE, i % SIZE)) {
            if self.layout.is_wall(p) {
                obs.set(4, p);
            }
        }
        obs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn at(red: Pos, blue: Pos) -> StagHuntState {
        StagHuntState {
            layout: Layout::default_layout(),
            red_pos: red,
            blue_pos: blue,
            step_count: 0,
        }
    }

    #[test]
    fn bundled_layout_parses() {
        let l = Layout::default_layout();
        assert_eq!(l.stag_pos, Pos::new(3, 3));
        assert_eq!(l.hare_pos, Pos::new(1, 1));
        assert_eq!(l.floor_cells().len(), 21);
        assert!(Layout::parse("#######\n").is_err());
        assert!(Layout::parse(&DEFAULT_LAYOUT.replace("S", ".")).is_err());
    }

    #[test]
    fn lone_agent_on_solo_target() {
        let mut r = rng::stream(3, "t", 0);
        let mut s = at(Pos::new(1, 2), Pos::new(5, 5));
        let out = s.step([Move::Left, Move::Up], &mut r);
        assert_eq!(out.rewards, [4.0, 0.0]);
        assert_eq!(out.captures, [Some(Capture::Hare), None]);
    }

    #[test]
    fn both_on_joint_target() {
        let mut r = rng::stream(3, "t", 0);
        let mut s = at(Pos::new(3, 2), Pos::new(3, 4));
        let out = s.step([Move::Right, Move::Left], &mut r);
        assert_eq!(out.rewards, [25.0, 25.0]);
        assert_ne!(s.red_pos, s.blue_pos);
    }

    #[test]
    fn nothing_reached_and_walls_block() {
        let mut r = rng::stream(3, "t", 0);
        let mut s = at(Pos::new(1, 3), Pos::new(5, 5));
        let out = s.step([Move::Down, Move::Right], &mut r);
        assert_eq!(out.rewards, [0.0, 0.0]);
        assert_eq!(s.red_pos, Pos::new(2, 3));
        assert_eq!(s.blue_pos, Pos::new(5, 5));
        // lone agent on the stag gets nothing
        let out = s.step([Move::Down, Move::Up], &mut r);
        assert_eq!(s.red_pos, Pos::new(3, 3));
        assert_eq!(out.rewards, [0.0, 0.0]);
    }

    #[test]
    fn observation_is_perspective_relative() {
        let s = at(Pos::new(1, 2), Pos::new(5, 5));
        let red = s.observe(0);
        let blue = s.observe(1);
        assert_eq!(red.locate(0), Some(Pos::new(1, 2)));
        assert_eq!(blue.locate(0), Some(Pos::new(5, 5)));
        assert_eq!(red.locate(2), Some(Pos::new(3, 3)));
    }

    proptest! {
        #[test]
        fn agents_never_on_walls(seed in any::<u64>(), steps in 1usize..300) {
            let mut r = rng::stream(seed, "sh", 0);
            let mut s = StagHuntState::random(Layout::default_layout(), &mut r);
            for _ in 0..steps {
                let m = [Move::from_index(r.gen_range(0..4)).unwrap(), Move::from_index(r.gen_range(0..4)).unwrap()];
                s.step(m, &mut r);
                prop_assert!(!s.layout.is_wall(s.red_pos));
                prop_assert!(!s.layout.is_wall(s.blue_pos));
            }
        }
    }
}
