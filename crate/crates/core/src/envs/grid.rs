//! Shared grid-world primitives.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Up = row - 1, Down = row + 1, Left = col - 1, Right = col + 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::Up, Move::Down, Move::Left, Move::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Move> {
        Self::ALL.get(i).copied()
    }

    /// Target cell, clamped to a `height x width` board.
    pub fn apply(self, p: Pos, height: usize, width: usize) -> Pos {
        match self {
            Move::Up => Pos::new(p.row.saturating_sub(1), p.col),
            Move::Down => Pos::new((p.row + 1).min(height - 1), p.col),
            Move::Left => Pos::new(p.row, p.col.saturating_sub(1)),
            Move::Right => Pos::new(p.row, (p.col + 1).min(width - 1)),
        }
    }
}

/// Channel-major binary occupancy tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Observation {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn set(&mut self, channel: usize, p: Pos) {
        let i = (channel * self.height + p.row) * self.width + p.col;
        self.data[i] = 1.0;
    }

    pub fn get(&self, channel: usize, p: Pos) -> f32 {
        self.data[(channel * self.height + p.row) * self.width + p.col]
    }

    pub fn channel_sum(&self, channel: usize) -> f32 {
        let n = self.height * self.width;
        self.data[channel * n..(channel + 1) * n].iter().sum()
    }

    /// Position of the single set cell in `channel`, if exactly one is set.
    pub fn locate(&self, channel: usize) -> Option<Pos> {
        let n = self.height * self.width;
        let plane = &self.data[channel * n..(channel + 1) * n];
        let mut found = None;
        for (i, &v) in plane.iter().enumerate() {
            if v > 0.5 {
                if found.is_some() {
                    return None;
                }
                found = Some(Pos::new(i / self.width, i % self.width));
            }
        }
        found
    }
}
