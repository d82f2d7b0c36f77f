//! Behaviour-cloned oracles distilled from clustered windows.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::distill::collect::TransitionSample;
use crate::distill::visual::{obs_key, CoinVisual, StagVisual, VisualGame};
use crate::envs::coin::PickEvent;
use crate::envs::grid::{Move, Observation, Pos};
use crate::envs::staghunt::Capture;
use crate::error::{Error, Result};
use crate::nn::{argmax, chw_to_hwc, softmax_f32, Activation, Conv2d, Dense, Optimizer, OptimizerKind, ParamAlloc};
use crate::rng;

/// The move that takes the observing agent (channel 0) from `prev` to
/// `next`. Moves off the grid or into a wall leave the agent in place, so a
/// stationary transition can be explained by several moves; those, and
/// transitions no move explains (respawns), are ambiguous.
pub fn deduce_move(prev: &Observation, next: &Observation, wall_channel: Option<usize>) -> Result<Move> {
    let locate = |o: &Observation| {
        o.locate(0)
            .ok_or_else(|| Error::AmbiguousTransition("agent not visible".into()))
    };
    let (from, to) = (locate(prev)?, locate(next)?);
    let blocked = |p: Pos| wall_channel.is_some_and(|c| prev.get(c, p) > 0.5);
    let candidates: Vec<Move> = Move::ALL
        .into_iter()
        .filter(|m| {
            let dest = m.apply(from, prev.height, prev.width);
            let dest = if blocked(dest) { from } else { dest };
            dest == to
        })
        .collect();
    match candidates.as_slice() {
        [m] => Ok(*m),
        [] => Err(Error::AmbiguousTransition(format!("no move takes {from:?} to {to:?}"))),
        many => Err(Error::AmbiguousTransition(format!("{from:?} -> {to:?} fits {many:?}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub optimizer: OptimizerKind,
    pub l2: f32,
    pub epochs: usize,
    pub minibatch: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam { lr: 1e-3 },
            l2: 1e-4,
            epochs: 60,
            minibatch: 32,
        }
    }
}

/// Distinct training states with their observed move counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MoveTable {
    pub states: Vec<Observation>,
    pub counts: Vec<[u32; 4]>,
    /// Transitions dropped as ambiguous.
    pub skipped: usize,
}

impl MoveTable {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().map(|&c| u64::from(c)).sum()
    }
}

/// Pair each frame with the move deduced from it to the next frame.
pub fn move_table(samples: &[&TransitionSample], wall_channel: Option<usize>) -> MoveTable {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut table = MoveTable::default();
    for s in samples {
        for pair in s.frames.windows(2) {
            match deduce_move(&pair[0], &pair[1], wall_channel) {
                Ok(m) => {
                    let slot = *index.entry(obs_key(&pair[0].data)).or_insert_with(|| {
                        table.states.push(pair[0].clone());
                        table.counts.push([0; 4]);
                        table.states.len() - 1
                    });
                    table.counts[slot][m.index()] += 1;
                }
                Err(_) => table.skipped += 1,
            }
        }
    }
    if table.skipped > 0 {
        log::debug!("skipped {} ambiguous transitions", table.skipped);
    }
    table
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    convs: [Conv2d; 3],
    hidden: Dense,
    head: Dense,
    pub params: Vec<f32>,
}

impl Oracle {
    pub fn new(channels: usize, height: usize, width: usize, n_actions: usize, seed: u64) -> Self {
        let mut a = ParamAlloc::default();
        let convs = [
            Conv2d::new(&mut a, channels, 128, 2, height, width, Activation::Relu),
            Conv2d::new(&mut a, 128, 128, 2, height, width, Activation::Relu),
            Conv2d::new(&mut a, 128, 64, 2, height, width, Activation::Relu),
        ];
        let hidden = Dense::new(&mut a, 64 * height * width, 128, Activation::Relu);
        let head = Dense::new(&mut a, 128, n_actions, Activation::Identity);
        let mut params = vec![0.0; a.len()];
        let mut r = rng::stream(seed, "oracle-init", 0);
        convs.iter().for_each(|c| c.init(&mut params, &mut r));
        hidden.init(&mut params, &mut r);
        head.init(&mut params, &mut r);
        Self {
            convs,
            hidden,
            head,
            params,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.head.outputs
    }

    fn input(&self, obs: &Observation) -> Result<Vec<f32>> {
        let c = &self.convs[0];
        if (obs.channels, obs.height, obs.width) != (c.in_ch, c.height, c.width) {
            return Err(Error::DimensionMismatch {
                expected: c.in_len(),
                got: obs.data.len(),
            });
        }
        Ok(chw_to_hwc(&obs.data, obs.channels, obs.height * obs.width))
    }

    fn forward(&self, x: &[f32]) -> ([Vec<f32>; 3], [Vec<f32>; 3], Vec<f32>, Vec<f32>) {
        let mut cols: [Vec<f32>; 3] = Default::default();
        let mut acts: [Vec<f32>; 3] = Default::default();
        for i in 0..3 {
            let mut out = vec![0.0; self.convs[i].out_len()];
            let input = if i == 0 { x } else { &acts[i - 1] };
            self.convs[i].forward(&self.params, input, &mut cols[i], &mut out);
            acts[i] = out;
        }
        let mut h = vec![0.0; self.hidden.outputs];
        self.hidden.forward(&self.params, &acts[2], &mut h);
        let mut logits = vec![0.0; self.head.outputs];
        self.head.forward(&self.params, &h, &mut logits);
        (cols, acts, h, logits)
    }

    pub fn logits(&self, obs: &Observation) -> Result<Vec<f32>> {
        Ok(self.forward(&self.input(obs)?).3)
    }

    pub fn probs(&self, obs: &Observation) -> Result<Vec<f32>> {
        Ok(softmax_f32(&self.logits(obs)?))
    }

    /// Arg-max action; ties go to the lowest index.
    pub fn greedy(&self, obs: &Observation) -> Result<usize> {
        Ok(argmax(&self.logits(obs)?))
    }

    /// Cross-entropy against the target distribution `target`, scaled by
    /// `weight`; gradients accumulate into `grad`.
    fn accumulate(&self, x: &[f32], target: &[f32], weight: f32, grad: &mut [f32]) -> f32 {
        let (cols, mut acts, h, logits) = self.forward(x);
        let p = softmax_f32(&logits);
        let loss: f32 = target
            .iter()
            .zip(&p)
            .filter(|(t, _)| **t > 0.0)
            .map(|(t, q)| -t * q.max(1e-12).ln())
            .sum();
        let mut dlogits: Vec<f32> = p.iter().zip(target).map(|(q, t)| weight * (q - t)).collect();
        let mut dh = vec![0.0; h.len()];
        self.head.backward(&self.params, &h, &logits, &mut dlogits, grad, Some(&mut dh));
        let mut dflat = vec![0.0; acts[2].len()];
        self.hidden.backward(&self.params, &acts[2], &h, &mut dh, grad, Some(&mut dflat));
        let mut dout = dflat;
        for i in (0..3).rev() {
            let out = std::mem::take(&mut acts[i]);
            if i == 0 {
                self.convs[0].backward(&self.params, &cols[0], &out, &mut dout, grad, None);
            } else {
                let mut dx = vec![0.0; self.convs[i].in_len()];
                self.convs[i].backward(&self.params, &cols[i], &out, &mut dout, grad, Some(&mut dx));
                dout = dx;
            }
        }
        weight * loss
    }

    fn weight_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut r: Vec<_> = self.convs.iter().map(Conv2d::weight_range).collect();
        r.push(self.hidden.weight_range());
        r.push(self.head.weight_range());
        r
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::harness::write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Fit an oracle to the move frequencies of `table` by minibatch descent on
/// count-weighted cross-entropy plus an L2 penalty on weights. Returns the
/// oracle and the mean loss per epoch.
pub fn train_oracle(table: &MoveTable, n_actions: usize, cfg: &OracleConfig, seed: u64) -> Result<(Oracle, Vec<f64>)> {
    let Some(first) = table.states.first() else {
        return Err(Error::EmptyCluster("no deducible moves to train an oracle on".into()));
    };
    if cfg.minibatch == 0 {
        return Err(Error::Config("oracle minibatch must be positive".into()));
    }
    let mut oracle = Oracle::new(first.channels, first.height, first.width, n_actions, seed);
    let inputs: Vec<Vec<f32>> = table.states.iter().map(|o| oracle.input(o)).collect::<Result<_>>()?;
    let total = table.total() as f32;
    let targets: Vec<(Vec<f32>, f32)> = table
        .counts
        .iter()
        .map(|c| {
            let n: u32 = c.iter().sum();
            let mut t = vec![0.0; n_actions];
            for (a, &k) in c.iter().enumerate().take(n_actions) {
                t[a] = k as f32 / n as f32;
            }
            (t, n as f32 / total)
        })
        .collect();
    let ranges = oracle.weight_ranges();
    let mut opt = Optimizer::new(cfg.optimizer, oracle.params.len());
    let mut grad = vec![0.0; oracle.params.len()];
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(seed, "oracle-shuffle", epoch as u64));
        let mut epoch_loss = 0.0f64;
        let n_batches = inputs.len().div_ceil(cfg.minibatch) as f32;
        for chunk in order.chunks(cfg.minibatch) {
            grad.fill(0.0);
            // Per-state weights sum to one over the data set; rescale so each
            // minibatch step sees an average-sized gradient.
            for &i in chunk {
                let (t, w) = &targets[i];
                epoch_loss += f64::from(oracle.accumulate(&inputs[i], t, w * n_batches, &mut grad)) / f64::from(n_batches);
            }
            for r in &ranges {
                for j in r.clone() {
                    grad[j] += 2.0 * cfg.l2 * oracle.params[j];
                }
            }
            opt.step(&mut oracle.params, &grad);
        }
        if !epoch_loss.is_finite() {
            return Err(Error::numerical(format!("oracle training epoch {epoch}"), format!("loss {epoch_loss}")));
        }
        losses.push(epoch_loss);
    }
    Ok((oracle, losses))
}

/// Precomputed greedy actions over a finite observation set.
#[derive(Clone, Debug, Default)]
pub struct GreedyTable {
    map: HashMap<Vec<u64>, usize>,
}

impl GreedyTable {
    pub fn build(oracle: &Oracle, observations: &[Observation]) -> Result<Self> {
        let map = observations
            .iter()
            .map(|o| Ok((obs_key(&o.data), oracle.greedy(o)?)))
            .collect::<Result<_>>()?;
        Ok(Self { map })
    }

    pub fn get(&self, obs: &Observation) -> Option<usize> {
        self.map.get(&obs_key(&obs.data)).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Greedy actions of an oracle, cached for known observations.
#[derive(Clone, Debug)]
pub struct GreedyPolicy {
    pub oracle: Oracle,
    table: GreedyTable,
}

impl GreedyPolicy {
    pub fn new(oracle: Oracle, observations: &[Observation]) -> Result<Self> {
        let table = GreedyTable::build(&oracle, observations)?;
        Ok(Self { oracle, table })
    }

    pub fn act(&self, obs: &Observation) -> Result<Move> {
        let a = match self.table.get(obs) {
            Some(a) => a,
            None => self.oracle.greedy(obs)?,
        };
        Move::from_index(a).ok_or(Error::InvalidAction { action: a, n_actions: 4 })
    }
}

/// Coin picks of the oracle-driven agent against a uniformly random partner.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoinSoloEval {
    pub own_picks: u64,
    pub other_picks: u64,
}

impl CoinSoloEval {
    /// Share of the agent's picks that took the other agent's coin.
    pub fn other_fraction(&self) -> Option<f64> {
        let n = self.own_picks + self.other_picks;
        (n > 0).then(|| self.other_picks as f64 / n as f64)
    }
}

/// Who shares the grid with the oracle-driven agent during solo evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoloPartner {
    /// The grid holds the evaluated agent only: the other-agent channel is
    /// empty and coins respawn only when the agent picks them.
    #[default]
    Absent,
    /// A second agent moves uniformly at random and picks coins too.
    Random,
}

/// Drive an agent by `policy` and count its picks by coin color.
/// Observations are perspective-relative, so the evaluated agent plays Red.
pub fn coin_solo_eval(
    policy: &GreedyPolicy,
    partner: SoloPartner,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Result<CoinSoloEval> {
    let mut out = CoinSoloEval::default();
    for ep in 0..episodes {
        let mut r = rng::stream(seed, "coin-solo", ep as u64);
        let mut g = CoinVisual::default();
        g.reset(&mut r);
        for _ in 0..steps {
            match partner {
                SoloPartner::Random => {
                    let moves = [policy.act(&g.observe(0))?, Move::ALL[r.gen_range(0..4)]];
                    match g.step_events(moves, &mut r).events[0] {
                        Some(PickEvent::OwnCoin) => out.own_picks += 1,
                        Some(PickEvent::OtherCoin) => out.other_picks += 1,
                        None => {}
                    }
                }
                SoloPartner::Absent => {
                    let s = &mut g.state;
                    let mut obs = s.observe(crate::envs::coin::Color::Red);
                    obs.data[s.blue_pos.row * obs.width + s.blue_pos.col + obs.height * obs.width] = 0.0;
                    let m = policy.act(&obs)?;
                    s.red_pos = m.apply(s.red_pos, obs.height, obs.width);
                    if s.red_pos == s.coin_pos {
                        if s.coin_color == crate::envs::coin::Color::Red {
                            out.own_picks += 1;
                        } else {
                            out.other_picks += 1;
                        }
                        // respawn anywhere but under the agent
                        s.blue_pos = s.red_pos;
                        s.respawn_coin(&mut r);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Which target the oracle-driven agent reached first, per episode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StagSoloEval {
    pub episodes: usize,
    pub reached: BTreeMap<String, usize>,
}

impl StagSoloEval {
    pub fn rate(&self, target: Capture) -> f64 {
        let key = format!("{target:?}").to_lowercase();
        self.reached.get(&key).copied().unwrap_or(0) as f64 / self.episodes.max(1) as f64
    }
}

/// From random spawns, drive `agent` by the oracle (the partner moves at
/// random) and record whether it steps onto the stag or the hare cell first
/// within `steps` moves.
pub fn stag_solo_eval(
    policy: &GreedyPolicy,
    base: &StagVisual,
    agent: usize,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Result<StagSoloEval> {
    let mut out = StagSoloEval {
        episodes,
        reached: BTreeMap::new(),
    };
    for ep in 0..episodes {
        let mut r = rng::stream(seed, "stag-solo", ep as u64);
        let mut g = base.clone();
        g.reset(&mut r);
        let mut hit = "none";
        for _ in 0..steps {
            let mut moves = [Move::ALL[r.gen_range(0..4)]; 2];
            moves[agent] = policy.act(&g.observe(agent))?;
            let before = g.clone();
            let pos = before.state.agent_pos(agent);
            let dest = before.state.layout.apply(moves[agent], pos);
            g.step_captures(moves, &mut r);
            if dest == before.target(Capture::Stag) {
                hit = "stag";
                break;
            }
            if dest == before.target(Capture::Hare) {
                hit = "hare";
                break;
            }
        }
        *out.reached.entry(hit.to_string()).or_insert(0) += 1;
    }
    Ok(out)
}
