//! Reduction of a visual two-agent game to a 2x2 meta-game: random-play
//! windows ending in rewards are embedded by a reward-predicting encoder,
//! split into two clusters, and one oracle is cloned from each cluster.

pub mod cluster;
pub mod collect;
pub mod encoder;
pub mod meta;
pub mod oracle;
pub mod visual;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cluster::{cluster, label_clusters, purity, ClusterLabels, ClusterMethod, ClusterModel};
pub use collect::{collect_data, CollectConfig, TransitionSample};
pub use encoder::{train_encoder, EmbeddingSource, EncoderConfig, EncoderReport, TrajectoryEncoder};
pub use meta::{estimate_meta_payoffs, MetaGame, MetaPayoffs, OraclePair};
pub use oracle::{deduce_move, move_table, train_oracle, GreedyPolicy, Oracle, OracleConfig};
pub use visual::{CoinVisual, StagVisual, VisualGame};

use crate::error::Result;
use crate::rng;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub collect: CollectConfig,
    pub encoder: EncoderConfig,
    pub embedding: EmbeddingSource,
    pub clustering: ClusterMethod,
    pub oracle: OracleConfig,
}

/// Everything produced for one agent.
#[derive(Clone, Debug)]
pub struct Distilled {
    pub samples: Vec<TransitionSample>,
    pub encoder: TrajectoryEncoder,
    pub encoder_report: EncoderReport,
    pub embeddings: Vec<Vec<f64>>,
    pub clusters: ClusterModel,
    pub labels: ClusterLabels,
    pub cooperate: Oracle,
    pub defect: Oracle,
    pub summary: DistillSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillSummary {
    pub agent: usize,
    pub samples: usize,
    /// Agreement of the partition with the sign of the opponent reward.
    pub purity: f64,
    /// Sample count per reward class, for the cooperation and the defection
    /// cluster, keyed `"self,opponent"`.
    pub cooperation_classes: BTreeMap<String, usize>,
    pub defection_classes: BTreeMap<String, usize>,
    pub label_tie: bool,
    pub skipped_transitions: usize,
    pub oracle_loss: [f64; 2],
}

/// Truth labels for purity: 1 when the opponent lost reward.
pub fn opponent_sign_labels(samples: &[TransitionSample]) -> Vec<usize> {
    samples.iter().map(|s| usize::from(s.reward.1 < 0.0)).collect()
}

/// Run the whole reduction from the perspective of `agent`.
pub fn distill_agent<G: VisualGame>(
    game: &G,
    agent: usize,
    cfg: &DistillConfig,
    seed: u64,
    checkpoint: Option<&Path>,
) -> Result<Distilled> {
    let sub = |tag: &str| rng::derive_seed(seed, tag, agent as u64);
    let samples = collect_data(game, agent, &cfg.collect, sub("distill-collect"))?;
    log::info!("agent {agent}: collected {} windows", samples.len());
    let (encoder, encoder_report) = train_encoder(&samples, &cfg.encoder, sub("distill-encoder"), checkpoint)?;
    log::info!(
        "agent {agent}: encoder holdout MAE self {:.3}, opponent {:.3}",
        encoder_report.holdout_mae_self,
        encoder_report.holdout_mae_opponent
    );
    let embeddings: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| encoder.embed(s, cfg.embedding))
        .collect::<Result<_>>()?;
    let clusters = cluster::cluster(&embeddings, 2, cfg.clustering, sub("distill-cluster"))?;
    let opp: Vec<f64> = samples.iter().map(|s| s.reward.1).collect();
    let labels = label_clusters(&clusters, &opp)?;
    let purity = purity(&clusters.assignments, &opponent_sign_labels(&samples));
    log::info!("agent {agent}: cluster sizes {:?}, purity {purity:.4}", clusters.sizes());

    let members = |c: usize| -> Vec<&TransitionSample> {
        samples
            .iter()
            .zip(&clusters.assignments)
            .filter(|(_, &a)| a == c)
            .map(|(s, _)| s)
            .collect()
    };
    let composition = |c: usize| {
        let mut m = BTreeMap::new();
        for s in members(c) {
            let (a, b) = s.class();
            *m.entry(format!("{a},{b}")).or_insert(0) += 1;
        }
        m
    };
    let wall = game.wall_channel();
    let coop_table = move_table(&members(labels.cooperation), wall);
    let defect_table = move_table(&members(labels.defection), wall);
    let (cooperate, coop_loss) = train_oracle(&coop_table, game.n_actions(), &cfg.oracle, sub("distill-oracle-c"))?;
    let (defect, defect_loss) = train_oracle(&defect_table, game.n_actions(), &cfg.oracle, sub("distill-oracle-d"))?;
    let summary = DistillSummary {
        agent,
        samples: samples.len(),
        purity,
        cooperation_classes: composition(labels.cooperation),
        defection_classes: composition(labels.defection),
        label_tie: labels.tie,
        skipped_transitions: coop_table.skipped + defect_table.skipped,
        oracle_loss: [
            coop_loss.last().copied().unwrap_or(f64::NAN),
            defect_loss.last().copied().unwrap_or(f64::NAN),
        ],
    };
    Ok(Distilled {
        samples,
        encoder,
        encoder_report,
        embeddings,
        clusters,
        labels,
        cooperate,
        defect,
        summary,
    })
}
