//! Reward-predicting trajectory encoder.
//!
//! Three 3x3 convolutions with 64 maps feed a shared flatten; two linear
//! branches (self, opponent) each end in a scalar reward head.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::distill::collect::TransitionSample;
use crate::error::{Error, Result};
use crate::nn::{Activation, Conv2d, Dense, Optimizer, OptimizerKind, ParamAlloc};
use crate::rng;

/// Which activations serve as the embedding of a window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    /// Self-reward branch.
    SelfBranch,
    /// Opponent-reward branch. Its activations separate windows by what
    /// happened to the opponent, which is what the cluster labelling reads.
    #[default]
    OpponentBranch,
    /// Self branch followed by opponent branch.
    Concat,
    /// Shared flattened convolution features.
    Trunk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Width of each branch layer.
    pub embedding_dim: usize,
    pub conv_maps: usize,
    pub weight_self: f32,
    pub weight_opponent: f32,
    pub lr: f32,
    pub epochs: usize,
    pub minibatch: usize,
    /// Fraction of samples held out for evaluation.
    pub holdout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 100,
            conv_maps: 64,
            weight_self: 1.0,
            weight_opponent: 1.0,
            lr: 0.003,
            epochs: 10,
            minibatch: 32,
            holdout: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEncoder {
    convs: [Conv2d; 3],
    self_fc: Dense,
    opp_fc: Dense,
    self_out: Dense,
    opp_out: Dense,
    pub params: Vec<f32>,
}

struct Cache {
    cols: [Vec<f32>; 3],
    acts: [Vec<f32>; 3],
    e_self: Vec<f32>,
    e_opp: Vec<f32>,
    y: [f32; 2],
}

impl TrajectoryEncoder {
    /// `channels` is the stacked channel count (frame channels x look-back).
    pub fn new(channels: usize, height: usize, width: usize, cfg: &EncoderConfig, seed: u64) -> Self {
        let mut a = ParamAlloc::default();
        let m = cfg.conv_maps;
        let convs = [
            Conv2d::new(&mut a, channels, m, 3, height, width, Activation::Relu),
            Conv2d::new(&mut a, m, m, 3, height, width, Activation::Relu),
            Conv2d::new(&mut a, m, m, 3, height, width, Activation::Relu),
        ];
        let flat = m * height * width;
        let self_fc = Dense::new(&mut a, flat, cfg.embedding_dim, Activation::Identity);
        let opp_fc = Dense::new(&mut a, flat, cfg.embedding_dim, Activation::Identity);
        let self_out = Dense::new(&mut a, cfg.embedding_dim, 1, Activation::Identity);
        let opp_out = Dense::new(&mut a, cfg.embedding_dim, 1, Activation::Identity);
        let mut params = vec![0.0; a.len()];
        let mut r = rng::stream(seed, "encoder-init", 0);
        convs.iter().for_each(|c| c.init(&mut params, &mut r));
        for d in [&self_fc, &opp_fc, &self_out, &opp_out] {
            d.init(&mut params, &mut r);
        }
        Self {
            convs,
            self_fc,
            opp_fc,
            self_out,
            opp_out,
            params,
        }
    }

    pub fn input_len(&self) -> usize {
        self.convs[0].in_len()
    }

    pub fn embedding_dim(&self, source: EmbeddingSource) -> usize {
        match source {
            EmbeddingSource::SelfBranch | EmbeddingSource::OpponentBranch => self.self_fc.outputs,
            EmbeddingSource::Concat => 2 * self.self_fc.outputs,
            EmbeddingSource::Trunk => self.convs[2].out_len(),
        }
    }

    fn forward(&self, x: &[f32]) -> Result<Cache> {
        if x.len() != self.input_len() {
            return Err(Error::DimensionMismatch {
                expected: self.input_len(),
                got: x.len(),
            });
        }
        let mut cols: [Vec<f32>; 3] = Default::default();
        let mut acts: [Vec<f32>; 3] = Default::default();
        for i in 0..3 {
            let conv = &self.convs[i];
            let mut out = vec![0.0; conv.out_len()];
            let input = if i == 0 { x } else { &acts[i - 1] };
            conv.forward(&self.params, input, &mut cols[i], &mut out);
            acts[i] = out;
        }
        let mut e_self = vec![0.0; self.self_fc.outputs];
        let mut e_opp = vec![0.0; self.opp_fc.outputs];
        self.self_fc.forward(&self.params, &acts[2], &mut e_self);
        self.opp_fc.forward(&self.params, &acts[2], &mut e_opp);
        let (mut ys, mut yo) = ([0.0f32], [0.0f32]);
        self.self_out.forward(&self.params, &e_self, &mut ys);
        self.opp_out.forward(&self.params, &e_opp, &mut yo);
        Ok(Cache {
            cols,
            acts,
            e_self,
            e_opp,
            y: [ys[0], yo[0]],
        })
    }

    /// Predicted `(self, opponent)` rewards.
    pub fn predict(&self, sample: &TransitionSample) -> Result<(f32, f32)> {
        let c = self.forward(&sample.stacked())?;
        Ok((c.y[0], c.y[1]))
    }

    pub fn embed(&self, sample: &TransitionSample, source: EmbeddingSource) -> Result<Vec<f64>> {
        let c = self.forward(&sample.stacked())?;
        let v: Vec<f32> = match source {
            EmbeddingSource::SelfBranch => c.e_self,
            EmbeddingSource::OpponentBranch => c.e_opp,
            EmbeddingSource::Concat => c.e_self.into_iter().chain(c.e_opp).collect(),
            EmbeddingSource::Trunk => c.acts[2].clone(),
        };
        Ok(v.into_iter().map(f64::from).collect())
    }

    /// Accumulate the gradient of `scale * (ws*(ys-s)^2 + wo*(yo-o)^2)`;
    /// returns the unscaled weighted loss.
    fn accumulate(&self, x: &[f32], target: (f32, f32), w: (f32, f32), scale: f32, grad: &mut [f32]) -> Result<f32> {
        let mut c = self.forward(x)?;
        let (ds, dopp) = (c.y[0] - target.0, c.y[1] - target.1);
        let loss = w.0 * ds * ds + w.1 * dopp * dopp;
        let p = &self.params;
        let mut de_s = vec![0.0; c.e_self.len()];
        let mut de_o = vec![0.0; c.e_opp.len()];
        self.self_out.backward(p, &c.e_self, &[c.y[0]], &mut [2.0 * w.0 * ds * scale], grad, Some(&mut de_s));
        self.opp_out.backward(p, &c.e_opp, &[c.y[1]], &mut [2.0 * w.1 * dopp * scale], grad, Some(&mut de_o));
        let mut dflat = vec![0.0; c.acts[2].len()];
        let mut tmp = vec![0.0; c.acts[2].len()];
        self.self_fc.backward(p, &c.acts[2], &c.e_self, &mut de_s, grad, Some(&mut dflat));
        self.opp_fc.backward(p, &c.acts[2], &c.e_opp, &mut de_o, grad, Some(&mut tmp));
        dflat.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
        let mut dout = dflat;
        for i in (0..3).rev() {
            let out = std::mem::take(&mut c.acts[i]);
            if i == 0 {
                self.convs[0].backward(p, &c.cols[0], &out, &mut dout, grad, None);
            } else {
                let mut dx = vec![0.0; self.convs[i].in_len()];
                self.convs[i].backward(p, &c.cols[i], &out, &mut dout, grad, Some(&mut dx));
                dout = dx;
            }
        }
        Ok(loss)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::harness::write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderReport {
    /// Mean weighted training loss per epoch.
    pub train_loss: Vec<f64>,
    pub holdout_size: usize,
    /// Mean absolute self-reward error on the holdout.
    pub holdout_mae_self: f64,
    pub holdout_mae_opponent: f64,
    /// Weighted squared-error loss of the network on the holdout.
    pub holdout_loss: f64,
    /// Same loss for a predictor that outputs the training-set means.
    pub constant_baseline_loss: f64,
}

/// Train an encoder on `samples`. The last `holdout` fraction (samples are
/// already shuffled by collection) is kept out of training for evaluation.
/// If the loss turns non-finite the weights of the last finite epoch are
/// written to `checkpoint` (when given) and a numerical error is returned.
pub fn train_encoder(
    samples: &[TransitionSample],
    cfg: &EncoderConfig,
    seed: u64,
    checkpoint: Option<&Path>,
) -> Result<(TrajectoryEncoder, EncoderReport)> {
    let classes: std::collections::BTreeSet<_> = samples.iter().map(TransitionSample::class).collect();
    if classes.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "encoder needs at least 2 reward classes, got {}",
            classes.len()
        )));
    }
    if cfg.minibatch == 0 || !(0.0..1.0).contains(&cfg.holdout) {
        return Err(Error::Config(format!("invalid encoder settings {cfg:?}")));
    }
    let first = &samples[0].frames[0];
    let look_back = samples[0].frames.len();
    let mut enc = TrajectoryEncoder::new(first.channels * look_back, first.height, first.width, cfg, seed);
    let n_hold = ((samples.len() as f64) * cfg.holdout).round() as usize;
    let (train, hold) = samples.split_at(samples.len() - n_hold);
    let inputs: Vec<Vec<f32>> = train.iter().map(TransitionSample::stacked).collect();
    let targets: Vec<(f32, f32)> = train.iter().map(|s| (s.reward.0 as f32, s.reward.1 as f32)).collect();
    let w = (cfg.weight_self, cfg.weight_opponent);

    let mut opt = Optimizer::new(OptimizerKind::Adam { lr: cfg.lr }, enc.params.len());
    let mut grad = vec![0.0; enc.params.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let last_good = enc.params.clone();
        order.shuffle(&mut rng::stream(seed, "encoder-shuffle", epoch as u64));
        let mut total = 0.0f64;
        for chunk in order.chunks(cfg.minibatch) {
            grad.fill(0.0);
            let scale = 1.0 / chunk.len() as f32;
            for &i in chunk {
                total += f64::from(enc.accumulate(&inputs[i], targets[i], w, scale, &mut grad)?);
            }
            opt.step(&mut enc.params, &grad);
        }
        let mean = total / train.len() as f64;
        if !mean.is_finite() || enc.params.iter().any(|p| !p.is_finite()) {
            enc.params = last_good;
            let saved = match checkpoint {
                Some(path) => {
                    enc.save(path)?;
                    format!("last finite weights saved to {}", path.display())
                }
                None => "no checkpoint path configured".to_string(),
            };
            return Err(Error::numerical(
                format!("encoder training epoch {epoch}"),
                format!("loss {mean}; {saved}"),
            ));
        }
        log::debug!("encoder epoch {epoch}: loss {mean:.5}");
        train_loss.push(mean);
    }

    let report = evaluate(&enc, train, hold, w, train_loss)?;
    Ok((enc, report))
}

fn evaluate(
    enc: &TrajectoryEncoder,
    train: &[TransitionSample],
    hold: &[TransitionSample],
    w: (f32, f32),
    train_loss: Vec<f64>,
) -> Result<EncoderReport> {
    let n = train.len() as f64;
    let mean_s = train.iter().map(|s| s.reward.0).sum::<f64>() / n;
    let mean_o = train.iter().map(|s| s.reward.1).sum::<f64>() / n;
    let (w_s, w_o) = (f64::from(w.0), f64::from(w.1));
    let (mut mae_s, mut mae_o, mut loss, mut base) = (0.0, 0.0, 0.0, 0.0);
    for s in hold {
        let (ps, po) = enc.predict(s)?;
        let (ds, dopp) = (f64::from(ps) - s.reward.0, f64::from(po) - s.reward.1);
        mae_s += ds.abs();
        mae_o += dopp.abs();
        loss += w_s * ds * ds + w_o * dopp * dopp;
        base += w_s * (mean_s - s.reward.0).powi(2) + w_o * (mean_o - s.reward.1).powi(2);
    }
    let m = hold.len().max(1) as f64;
    Ok(EncoderReport {
        train_loss,
        holdout_size: hold.len(),
        holdout_mae_self: mae_s / m,
        holdout_mae_opponent: mae_o / m,
        holdout_loss: loss / m,
        constant_baseline_loss: base / m,
    })
}
