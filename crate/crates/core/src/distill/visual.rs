//! Two-agent grid games seen through per-agent image observations.

use crate::envs::coin::{self, CoinGameState, Color, PickEvent};
use crate::envs::grid::{Move, Observation, Pos};
use crate::envs::staghunt::{self, Capture, Layout, StagHuntState};
use crate::learner::PickCounts;
use crate::rng::Rng;

/// A two-agent grid game with binary image observations and four moves.
pub trait VisualGame: Clone + Send + Sync {
    fn name(&self) -> &'static str;
    fn channels(&self) -> usize;
    fn height(&self) -> usize;
    fn width(&self) -> usize;
    fn reset(&mut self, rng: &mut Rng);
    /// Observation from `agent`'s perspective: channel 0 is always the
    /// observing agent, channel 1 the other one.
    fn observe(&self, agent: usize) -> Observation;
    fn step(&mut self, moves: [Move; 2], rng: &mut Rng) -> [f64; 2];

    /// Reward tuples `(self, other)` whose classes must fill their quota
    /// during data collection. Other non-zero tuples are discarded.
    fn reward_classes(&self) -> Vec<(i64, i64)>;

    /// Every observation an agent can receive (from its own perspective).
    fn all_observations(&self) -> Vec<Observation>;

    /// Channel holding impassable cells, if any.
    fn wall_channel(&self) -> Option<usize> {
        None
    }

    /// Per-agent coin picks since reset, for games with coins.
    fn pick_counts(&self) -> Option<[PickCounts; 2]> {
        None
    }

    fn n_actions(&self) -> usize {
        Move::ALL.len()
    }

    fn obs_len(&self) -> usize {
        self.channels() * self.height() * self.width()
    }
}

#[derive(Clone, Debug)]
pub struct CoinVisual {
    pub state: CoinGameState,
    picks: [PickCounts; 2],
}

impl Default for CoinVisual {
    fn default() -> Self {
        Self::new(CoinGameState {
            red_pos: Pos::new(0, 0),
            blue_pos: Pos::new(2, 2),
            coin_pos: Pos::new(1, 1),
            coin_color: Color::Red,
            step_count: 0,
        })
    }
}

impl CoinVisual {
    pub fn new(state: CoinGameState) -> Self {
        Self {
            state,
            picks: [PickCounts::default(); 2],
        }
    }

    /// Step and also report which agents picked which coin.
    pub fn step_events(&mut self, moves: [Move; 2], rng: &mut Rng) -> coin::CoinStep {
        let out = self.state.step(moves, rng);
        for (agent, ev) in out.events.iter().enumerate() {
            match ev {
                Some(PickEvent::OwnCoin) => self.picks[agent].own += 1,
                Some(PickEvent::OtherCoin) => self.picks[agent].other += 1,
                None => {}
            }
        }
        out
    }
}

fn cells(h: usize, w: usize) -> impl Iterator<Item = Pos> {
    (0..h * w).map(move |i| Pos::new(i / w, i % w))
}

impl VisualGame for CoinVisual {
    fn name(&self) -> &'static str {
        "coin"
    }

    fn channels(&self) -> usize {
        coin::CHANNELS
    }

    fn height(&self) -> usize {
        coin::SIZE
    }

    fn width(&self) -> usize {
        coin::SIZE
    }

    fn reset(&mut self, rng: &mut Rng) {
        self.state = CoinGameState::random(rng);
        self.picks = [PickCounts::default(); 2];
    }

    fn observe(&self, agent: usize) -> Observation {
        self.state.observe(Color::of_agent(agent))
    }

    fn step(&mut self, moves: [Move; 2], rng: &mut Rng) -> [f64; 2] {
        self.step_events(moves, rng).rewards
    }

    fn reward_classes(&self) -> Vec<(i64, i64)> {
        coin::PICK_REWARD_TUPLES.to_vec()
    }

    fn all_observations(&self) -> Vec<Observation> {
        let mut out = Vec::new();
        for me in cells(coin::SIZE, coin::SIZE) {
            for other in cells(coin::SIZE, coin::SIZE) {
                for coin_pos in cells(coin::SIZE, coin::SIZE).filter(|&c| c != me && c != other) {
                    for coin_color in [Color::Red, Color::Blue] {
                        let s = CoinGameState {
                            red_pos: me,
                            blue_pos: other,
                            coin_pos,
                            coin_color,
                            step_count: 0,
                        };
                        out.push(s.observe(Color::Red));
                    }
                }
            }
        }
        out
    }

    fn pick_counts(&self) -> Option<[PickCounts; 2]> {
        Some(self.picks)
    }
}

#[derive(Clone, Debug)]
pub struct StagVisual {
    pub state: StagHuntState,
}

impl StagVisual {
    pub fn new(layout: Layout, rng: &mut Rng) -> Self {
        Self {
            state: StagHuntState::random(layout, rng),
        }
    }

    pub fn step_captures(&mut self, moves: [Move; 2], rng: &mut Rng) -> staghunt::StagHuntStep {
        self.state.step(moves, rng)
    }

    pub fn target(&self, capture: Capture) -> Pos {
        match capture {
            Capture::Stag => self.state.layout.stag_pos,
            Capture::Hare => self.state.layout.hare_pos,
        }
    }
}

impl VisualGame for StagVisual {
    fn name(&self) -> &'static str {
        "staghunt"
    }

    fn channels(&self) -> usize {
        staghunt::CHANNELS
    }

    fn height(&self) -> usize {
        staghunt::SIZE
    }

    fn width(&self) -> usize {
        staghunt::SIZE
    }

    fn reset(&mut self, rng: &mut Rng) {
        self.state = StagHuntState::random(self.state.layout.clone(), rng);
    }

    fn observe(&self, agent: usize) -> Observation {
        self.state.observe(agent)
    }

    fn step(&mut self, moves: [Move; 2], rng: &mut Rng) -> [f64; 2] {
        self.state.step(moves, rng).rewards
    }

    fn reward_classes(&self) -> Vec<(i64, i64)> {
        let j = staghunt::JOINT_REWARD as i64;
        let s = staghunt::SOLO_REWARD as i64;
        vec![(j, j), (s, 0), (0, s)]
    }

    fn all_observations(&self) -> Vec<Observation> {
        let floor = self.state.layout.floor_cells();
        let mut out = Vec::with_capacity(floor.len() * floor.len());
        let mut s = self.state.clone();
        for &me in &floor {
            for &other in &floor {
                s.red_pos = me;
                s.blue_pos = other;
                out.push(s.observe(0));
            }
        }
        out
    }

    fn wall_channel(&self) -> Option<usize> {
        Some(4)
    }
}

/// Bit-packed key of a binary observation.
pub fn obs_key(data: &[f32]) -> Vec<u64> {
    let mut key = vec![0u64; data.len().div_ceil(64)];
    for (i, &v) in data.iter().enumerate() {
        if v > 0.5 {
            key[i / 64] |= 1 << (i % 64);
        }
    }
    key
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;
    use std::collections::HashSet;

    #[test]
    fn coin_observation_space_is_complete() {
        let g = CoinVisual::default();
        let all = g.all_observations();
        assert_eq!(all.len(), 9 * 8 * 2 + 72 * 7 * 2);
        let keys: HashSet<_> = all.iter().map(|o| obs_key(&o.data)).collect();
        assert_eq!(keys.len(), all.len());
        // random play never leaves the enumerated set, from either side
        let mut g = CoinVisual::default();
        let mut r = rng::stream(0, "test", 0);
        g.reset(&mut r);
        for _ in 0..2000 {
            for agent in 0..2 {
                assert!(keys.contains(&obs_key(&g.observe(agent).data)));
            }
            let m = [Move::ALL[r.gen_range(0..4)], Move::ALL[r.gen_range(0..4)]];
            g.step(m, &mut r);
        }
        let p = g.pick_counts().unwrap();
        assert!(p[0].own + p[0].other + p[1].own + p[1].other > 0);
    }

    #[test]
    fn stag_observation_space_is_complete() {
        let mut r = rng::stream(1, "test", 0);
        let mut g = StagVisual::new(Layout::default_layout(), &mut r);
        let keys: HashSet<_> = g.all_observations().iter().map(|o| obs_key(&o.data)).collect();
        for _ in 0..2000 {
            for agent in 0..2 {
                assert!(keys.contains(&obs_key(&g.observe(agent).data)));
            }
            let m = [Move::ALL[r.gen_range(0..4)], Move::ALL[r.gen_range(0..4)]];
            g.step(m, &mut r);
        }
    }

    #[test]
    fn keys_distinguish_single_bits() {
        let mut a = vec![0.0f32; 70];
        let b = a.clone();
        a[65] = 1.0;
        assert_ne!(obs_key(&a), obs_key(&b));
        assert_eq!(obs_key(&a)[1], 2);
    }
}
