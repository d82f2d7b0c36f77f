//! Two-agent 3x3 Coin Game.
//!
//! Red and Blue move simultaneously. An agent that lands on the coin picks it
//! up and gets +1; if the coin had the other agent's color, the other agent
//! gets -2. When both land on the coin in the same step both pick rewards
//! apply. After any pick a coin of uniformly random color respawns in a
//! uniformly random cell not occupied by an agent; agents stay in place.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::grid::{Move, Observation, Pos};

pub const SIZE: usize = 3;
pub const CHANNELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Color {
    Red,
    Blue,
}

impl Color {
    pub fn other(self) -> Color {
        match self {
            Color::Red => Color::Blue,
            Color::Blue => Color::Red,
        }
    }

    /// Agent index owning this color (Red = 0, Blue = 1).
    pub fn agent(self) -> usize {
        match self {
            Color::Red => 0,
            Color::Blue => 1,
        }
    }

    pub fn of_agent(agent: usize) -> Color {
        if agent == 0 {
            Color::Red
        } else {
            Color::Blue
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PickEvent {
    OwnCoin,
    OtherCoin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoinStep {
    pub rewards: [f64; 2],
    pub events: [Option<PickEvent>; 2],
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoinGameState {
    pub red_pos: Pos,
    pub blue_pos: Pos,
    pub coin_pos: Pos,
    pub coin_color: Color,
    pub step_count: usize,
}

/// The four reward tuples `(self, other)` a single pick can produce, from
/// the perspective of the observing agent.
pub const PICK_REWARD_TUPLES: [(i64, i64); 4] = [(1, 0), (1, -2), (0, 1), (-2, 1)];

fn random_cell(rng: &mut impl Rng) -> Pos {
    let i = rng.gen_range(0..SIZE * SIZE);
    Pos::new(i / SIZE, i % SIZE)
}

impl CoinGameState {
    pub fn random(rng: &mut impl Rng) -> Self {
        let red_pos = random_cell(rng);
        let blue_pos = random_cell(rng);
        let mut s = Self {
            red_pos,
            blue_pos,
            coin_pos: red_pos,
            coin_color: Color::Red,
            step_count: 0,
        };
        s.respawn_coin(rng);
        s
    }

    pub fn agent_pos(&self, agent: usize) -> Pos {
        if agent == 0 {
            self.red_pos
        } else {
            self.blue_pos
        }
    }

    pub fn empty_cells(&self) -> Vec<Pos> {
        (0..SIZE * SIZE)
            .map(|i| Pos::new(i / SIZE, i % SIZE))
            .filter(|&p| p != self.red_pos && p != self.blue_pos)
            .collect()
    }

    pub fn respawn_coin(&mut self, rng: &mut impl Rng) {
        let cells = self.empty_cells();
        self.coin_color = if rng.gen_bool(0.5) { Color::Red } else { Color::Blue };
        self.coin_pos = cells[rng.gen_range(0..cells.len())];
    }

    /// Advance one step with actions `[red, blue]`.
    pub fn step(&mut self, actions: [Move; 2], rng: &mut impl Rng) -> CoinStep {
        self.red_pos = actions[0].apply(self.red_pos, SIZE, SIZE);
        self.blue_pos = actions[1].apply(self.blue_pos, SIZE, SIZE);
        self.step_count += 1;
        let mut rewards = [0.0; 2];
        let mut events = [None; 2];
        let owner = self.coin_color.agent();
        for agent in 0..2 {
            if self.agent_pos(agent) == self.coin_pos {
                rewards[agent] += 1.0;
                if owner == agent {
                    events[agent] = Some(PickEvent::OwnCoin);
                } else {
                    rewards[owner] -= 2.0;
                    events[agent] = Some(PickEvent::OtherCoin);
                }
            }
        }
        if events.iter().any(Option::is_some) {
            self.respawn_coin(rng);
        }
        CoinStep { rewards, events }
    }

    /// Swap agent identities and coin color.
    pub fn color_swapped(&self) -> Self {
        Self {
            red_pos: self.blue_pos,
            blue_pos: self.red_pos,
            coin_pos: self.coin_pos,
            coin_color: self.coin_color.other(),
            step_count: self.step_count,
        }
    }

    /// Channels: own agent, other agent, own-color coin, other-color coin.
    /// Red's perspective is the canonical order.
    pub fn observe(&self, perspective: Color) -> Observation {
        let s = match perspective {
            Color::Red => self.clone(),
            Color::Blue => self.color_swapped(),
        };
        let mut obs = Observation::zeros(CHANNELS, SIZE, SIZE);
        obs.set(0, s.red_pos);
        obs.set(1, s.blue_pos);
        obs.set(if s.coin_color == Color::Red { 2 } else { 3 }, s.coin_pos);
        obs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn state(red: (usize, usize), blue: (usize, usize), coin: (usize, usize), color: Color) -> CoinGameState {
        CoinGameState {
            red_pos: Pos::new(red.0, red.1),
            blue_pos: Pos::new(blue.0, blue.1),
            coin_pos: Pos::new(coin.0, coin.1),
            coin_color: color,
            step_count: 0,
        }
    }

    #[test]
    fn own_coin_pick() {
        let mut r = rng::stream(1, "test", 0);
        let mut s = state((0, 0), (2, 2), (0, 1), Color::Red);
        let out = s.step([Move::Right, Move::Down], &mut r);
        assert_eq!(out.rewards, [1.0, 0.0]);
        assert_eq!(out.events, [Some(PickEvent::OwnCoin), None]);
        assert_ne!(s.coin_pos, s.red_pos);
        assert_ne!(s.coin_pos, s.blue_pos);
    }

    #[test]
    fn other_coin_pick_penalizes_owner() {
        let mut r = rng::stream(1, "test", 0);
        let mut s = state((0, 0), (2, 2), (0, 1), Color::Blue);
        let out = s.step([Move::Right, Move::Down], &mut r);
        assert_eq!(out.rewards, [1.0, -2.0]);
        assert_eq!(out.events, [Some(PickEvent::OtherCoin), None]);
    }

    #[test]
    fn no_pick_leaves_coin() {
        let mut r = rng::stream(1, "test", 0);
        let mut s = state((0, 0), (2, 2), (1, 1), Color::Blue);
        let out = s.step([Move::Up, Move::Right], &mut r);
        assert_eq!(out.rewards, [0.0, 0.0]);
        assert_eq!(out.events, [None, None]);
        assert_eq!(s.coin_pos, Pos::new(1, 1));
        assert_eq!(s.red_pos, Pos::new(0, 0));
    }

    #[test]
    fn simultaneous_pick_applies_both() {
        let mut r = rng::stream(1, "test", 0);
        let mut s = state((0, 0), (0, 2), (0, 1), Color::Red);
        let out = s.step([Move::Right, Move::Left], &mut r);
        // red +1 own; blue +1 and red -2
        assert_eq!(out.rewards, [-1.0, 1.0]);
        assert_eq!(out.events, [Some(PickEvent::OwnCoin), Some(PickEvent::OtherCoin)]);
    }

    #[test]
    fn observation_channels() {
        let s = state((0, 0), (2, 1), (1, 2), Color::Blue);
        let red = s.observe(Color::Red);
        assert_eq!(red.get(0, Pos::new(0, 0)), 1.0);
        assert_eq!(red.get(1, Pos::new(2, 1)), 1.0);
        assert_eq!(red.get(3, Pos::new(1, 2)), 1.0);
        let sums: Vec<f32> = (0..4).map(|c| red.channel_sum(c)).collect();
        assert_eq!(sums, vec![1.0, 1.0, 0.0, 1.0]);
        assert_eq!(s.observe(Color::Blue), s.color_swapped().observe(Color::Red));
        let blue = s.observe(Color::Blue);
        assert_eq!(blue.get(0, Pos::new(2, 1)), 1.0);
        assert_eq!(blue.get(2, Pos::new(1, 2)), 1.0);
    }

    #[test]
    fn spawn_statistics() {
        let mut r = rng::stream(42, "spawn", 0);
        let s0 = state((0, 0), (1, 1), (2, 2), Color::Red);
        let n = 10_000;
        let mut red = 0;
        let mut cells = std::collections::HashSet::new();
        for _ in 0..n {
            let mut s = s0.clone();
            s.respawn_coin(&mut r);
            assert!(s.coin_pos != s.red_pos && s.coin_pos != s.blue_pos);
            if s.coin_color == Color::Red {
                red += 1;
            }
            cells.insert(s.coin_pos);
        }
        let frac = red as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "red fraction {frac}");
        assert_eq!(cells.len(), 7);
    }

    fn arb_move() -> impl Strategy<Value = Move> {
        (0usize..4).prop_map(|i| Move::from_index(i).unwrap())
    }

    proptest! {
        #[test]
        fn color_swap_symmetry(seed in any::<u64>(), moves in proptest::collection::vec((arb_move(), arb_move()), 1..40)) {
            let mut ra = rng::stream(seed, "a", 0);
            let mut rb = rng::stream(seed, "a", 0);
            let mut a = CoinGameState::random(&mut rng::stream(seed, "init", 0));
            let mut b = a.color_swapped();
            for (m0, m1) in moves {
                let oa = a.step([m0, m1], &mut ra);
                let ob = b.step([m1, m0], &mut rb);
                prop_assert_eq!(oa.rewards, [ob.rewards[1], ob.rewards[0]]);
                prop_assert_eq!(oa.events, [ob.events[1], ob.events[0]]);
                // respawn consumed the same random draws; align colors
                prop_assert_eq!(a.red_pos, b.blue_pos);
                prop_assert_eq!(a.coin_pos, b.coin_pos);
                b = a.color_swapped();
            }
        }

        #[test]
        fn invariants_hold_along_random_play(seed in any::<u64>(), steps in 1usize..200) {
            let mut r = rng::stream(seed, "play", 0);
            let mut s = CoinGameState::random(&mut r);
            let mut picks = 0;
            let mut respawns = 0;
            for _ in 0..steps {
                let coin_before = (s.coin_pos, s.coin_color);
                let m = [Move::from_index(r.gen_range(0..4)).unwrap(), Move::from_index(r.gen_range(0..4)).unwrap()];
                let out = s.step(m, &mut r);
                let any = out.events.iter().any(Option::is_some);
                picks += usize::from(any);
                if any {
                    respawns += 1;
                    prop_assert!(s.coin_pos != s.red_pos && s.coin_pos != s.blue_pos);
                } else {
                    prop_assert_eq!(coin_before, (s.coin_pos, s.coin_color));
                }
                for p in [s.red_pos, s.blue_pos, s.coin_pos] {
                    prop_assert!(p.row < SIZE && p.col < SIZE);
                }
                let obs = s.observe(Color::Red);
                prop_assert_eq!(obs.channel_sum(0), 1.0);
                prop_assert_eq!(obs.channel_sum(1), 1.0);
                prop_assert_eq!(obs.channel_sum(2) + obs.channel_sum(3), 1.0);
            }
            prop_assert_eq!(picks, respawns);
        }
    }
}
