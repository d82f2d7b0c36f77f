//! Random-play data collection.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::distill::visual::VisualGame;
use crate::envs::grid::{Move, Observation};
use crate::error::{Error, Result};
use crate::rng;

/// A window of consecutive observations ending with a non-zero reward.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionSample {
    /// Oldest first; the last frame is the observation right after the
    /// rewarded step.
    pub frames: Vec<Observation>,
    /// `(self, opponent)` from the collecting agent's perspective.
    pub reward: (f64, f64),
}

impl TransitionSample {
    pub fn look_back(&self) -> usize {
        self.frames.len()
    }

    pub fn class(&self) -> (i64, i64) {
        (self.reward.0.round() as i64, self.reward.1.round() as i64)
    }

    /// Window in position-major layout with `channels * look_back` channels;
    /// channel `c * look_back + f` holds channel `c` of frame `f`.
    pub fn stacked(&self) -> Vec<f32> {
        let l = self.frames.len();
        let first = &self.frames[0];
        let (ch, positions) = (first.channels, first.height * first.width);
        let mut out = vec![0.0; positions * ch * l];
        for (f, frame) in self.frames.iter().enumerate() {
            for c in 0..ch {
                for p in 0..positions {
                    out[p * ch * l + c * l + f] = frame.data[c * positions + p];
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub min_samples: usize,
    /// Number of environments stepped in lockstep.
    pub batch: usize,
    pub look_back: usize,
    /// Give up after this many lockstep iterations.
    pub max_steps: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            min_samples: 2000,
            batch: 100,
            look_back: 5,
            max_steps: 200_000,
        }
    }
}

fn integral(v: f64) -> Option<i64> {
    (v.is_finite() && (v - v.round()).abs() < 1e-9).then(|| v.round() as i64)
}

/// Play `cfg.batch` copies of `game` with uniformly random moves for both
/// agents and keep the observation windows of `agent` that end in a reward
/// tuple belonging to one of the game's reward classes.
///
/// A window is emitted only when it holds `look_back` frames and is then
/// cleared, so every frame in it follows the previous reward event of that
/// environment. Returns exactly `min_samples` samples per class, shuffled.
pub fn collect_data<G: VisualGame>(
    game: &G,
    agent: usize,
    cfg: &CollectConfig,
    seed: u64,
) -> Result<Vec<TransitionSample>> {
    if agent > 1 || cfg.look_back == 0 || cfg.batch == 0 || cfg.min_samples == 0 {
        return Err(Error::Config(format!("invalid collection settings {cfg:?} for agent {agent}")));
    }
    let classes = game.reward_classes();
    let mut buckets: BTreeMap<(i64, i64), Vec<TransitionSample>> = classes.iter().map(|&c| (c, Vec::new())).collect();
    let mut envs: Vec<(G, rng::Rng, VecDeque<Observation>)> = (0..cfg.batch)
        .map(|b| {
            let mut r = rng::stream(seed, "collect", b as u64);
            let mut g = game.clone();
            g.reset(&mut r);
            (g, r, VecDeque::with_capacity(cfg.look_back))
        })
        .collect();
    let full = |b: &BTreeMap<_, Vec<_>>| b.values().all(|v| v.len() >= cfg.min_samples);

    let mut steps = 0;
    while !full(&buckets) {
        if steps >= cfg.max_steps {
            let deficient = buckets
                .iter()
                .filter(|(_, v)| v.len() < cfg.min_samples)
                .map(|(&k, _)| k)
                .collect();
            return Err(Error::CollectionTimeout { steps, deficient });
        }
        steps += 1;
        for (g, r, window) in &mut envs {
            let moves = [Move::ALL[r.gen_range(0..4)], Move::ALL[r.gen_range(0..4)]];
            let rewards = g.step(moves, r);
            if window.len() == cfg.look_back {
                window.pop_front();
            }
            window.push_back(g.observe(agent));
            let tuple = (rewards[agent], rewards[1 - agent]);
            if tuple == (0.0, 0.0) {
                continue;
            }
            let frames: Vec<Observation> = window.drain(..).collect();
            if frames.len() < cfg.look_back {
                continue;
            }
            let key = integral(tuple.0).zip(integral(tuple.1));
            if let Some(bucket) = key.and_then(|k| buckets.get_mut(&k)) {
                bucket.push(TransitionSample { frames, reward: tuple });
            }
        }
    }
    log::debug!("collected {} classes after {steps} lockstep iterations", classes.len());

    let mut out: Vec<TransitionSample> = buckets
        .into_values()
        .flat_map(|mut v| {
            v.truncate(cfg.min_samples);
            v
        })
        .collect();
    out.shuffle(&mut rng::stream(seed, "collect-shuffle", 0));
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct StoredSample {
    reward: (f64, f64),
    /// Hex of the bit-packed, frame-major CHW data.
    bits: String,
}

#[derive(Serialize, Deserialize)]
struct StoredDataset {
    game: String,
    channels: usize,
    height: usize,
    width: usize,
    look_back: usize,
    samples: Vec<StoredSample>,
}

/// Write a binary-observation dataset as compact JSON.
pub fn save_dataset(path: &Path, game: &str, samples: &[TransitionSample]) -> Result<()> {
    let Some(first) = samples.first() else {
        return Err(Error::DegenerateInput("empty dataset".into()));
    };
    let o = &first.frames[0];
    let stored = StoredDataset {
        game: game.to_string(),
        channels: o.channels,
        height: o.height,
        width: o.width,
        look_back: first.frames.len(),
        samples: samples
            .iter()
            .map(|s| {
                let bits: Vec<bool> = s.frames.iter().flat_map(|f| f.data.iter().map(|&v| v > 0.5)).collect();
                StoredSample {
                    reward: s.reward,
                    bits: to_hex(&bits),
                }
            })
            .collect(),
    };
    crate::harness::write_atomic(path, serde_json::to_string(&stored)?.as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<(String, Vec<TransitionSample>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stored: StoredDataset = serde_json::from_str(&text)?;
    let frame_len = stored.channels * stored.height * stored.width;
    let samples = stored
        .samples
        .into_iter()
        .map(|s| {
            let bits = from_hex(&s.bits, frame_len * stored.look_back)?;
            let frames = bits
                .chunks(frame_len)
                .map(|chunk| Observation {
                    channels: stored.channels,
                    height: stored.height,
                    width: stored.width,
                    data: chunk.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
                })
                .collect();
            Ok(TransitionSample {
                frames,
                reward: s.reward,
            })
        })
        .collect::<Result<_>>()?;
    Ok((stored.game, samples))
}

fn to_hex(bits: &[bool]) -> String {
    bits.chunks(4)
        .map(|nib| {
            let v = nib.iter().enumerate().fold(0u32, |acc, (i, &b)| acc | ((b as u32) << i));
            char::from_digit(v, 16).expect("nibble")
        })
        .collect()
}

fn from_hex(s: &str, n: usize) -> Result<Vec<bool>> {
    let mut out = Vec::with_capacity(s.len() * 4);
    for ch in s.chars() {
        let v = ch
            .to_digit(16)
            .ok_or_else(|| Error::Config(format!("bad hex digit {ch:?} in dataset")))?;
        out.extend((0..4).map(|i| v >> i & 1 == 1));
    }
    if out.len() < n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: out.len(),
        });
    }
    out.truncate(n);
    Ok(out)
}
