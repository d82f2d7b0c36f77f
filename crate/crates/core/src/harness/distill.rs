use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distill::cluster::pca_2d;
use crate::distill::collect::save_dataset;
use crate::distill::oracle::{coin_solo_eval, stag_solo_eval, CoinSoloEval, SoloPartner, StagSoloEval};
use crate::distill::{
    distill_agent, ClusterLabels, CoinVisual, DistillConfig, DistillSummary, Distilled, EncoderReport, GreedyPolicy,
    Oracle, OraclePair, VisualGame,
};
use crate::error::{Error, Result};
use crate::harness::experiment::stag_base;
use crate::harness::{default_out_root, ArtifactWriter, RunManifest};
use crate::metrics;
use crate::par::Execution;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillRunConfig {
    pub experiment_id: String,
    /// `coin` or `staghunt`.
    pub game: String,
    pub seed: u64,
    pub out: PathBuf,
    pub distill: DistillConfig,
    pub plots: bool,
    /// Also store the collected windows (a few MB).
    pub save_dataset: bool,
    pub execution: Execution,
}

impl Default for DistillRunConfig {
    fn default() -> Self {
        Self {
            experiment_id: String::new(),
            game: "coin".into(),
            seed: 0,
            out: default_out_root(),
            distill: DistillConfig::default(),
            plots: false,
            save_dataset: false,
            execution: Execution::Parallel,
        }
    }
}

impl DistillRunConfig {
    pub fn id(&self) -> String {
        if self.experiment_id.is_empty() {
            format!("distill-{}-seed{}", self.game, self.seed)
        } else {
            self.experiment_id.clone()
        }
    }

    pub fn dir(&self) -> PathBuf {
        self.out.join(self.id())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ClusterReport {
    summary: DistillSummary,
    sizes: Vec<usize>,
    labels: ClusterLabels,
    encoder: EncoderReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DistillIndex {
    game: String,
    seed: u64,
}

const INDEX: &str = "distill.json";

pub struct DistillOutcome {
    pub manifest: RunManifest,
    pub summaries: Vec<DistillSummary>,
    pub agents: Vec<Distilled>,
}

fn oracle_file(agent: usize, which: &str) -> String {
    format!("agent{agent}/{which}.json")
}

fn distill_with<G: VisualGame>(game: &G, cfg: &DistillRunConfig) -> Result<DistillOutcome> {
    let dir = cfg.dir();
    let agents = cfg.execution.try_map(2, |agent| {
        let ckpt = dir.join(format!("agent{agent}/encoder.checkpoint.json"));
        distill_agent(game, agent, &cfg.distill, cfg.seed, Some(&ckpt))
    })?;
    let mut w = ArtifactWriter::new(&dir);
    w.write_json(
        INDEX,
        &DistillIndex {
            game: cfg.game.clone(),
            seed: cfg.seed,
        },
    )?;
    for (agent, d) in agents.iter().enumerate() {
        for (name, oracle) in [("cooperate", &d.cooperate), ("defect", &d.defect)] {
            let rel = oracle_file(agent, name);
            oracle.save(&w.path(&rel))?;
            w.track(&rel)?;
        }
        let rel = format!("agent{agent}/encoder.json");
        d.encoder.save(&w.path(&rel))?;
        w.track(&rel)?;
        if cfg.save_dataset {
            let rel = format!("agent{agent}/dataset.json");
            save_dataset(&w.path(&rel), game.name(), &d.samples)?;
            w.track(&rel)?;
        }
        w.write_json(
            &format!("agent{agent}/cluster_report.json"),
            &ClusterReport {
                summary: d.summary.clone(),
                sizes: d.clusters.sizes(),
                labels: d.labels,
                encoder: d.encoder_report.clone(),
            },
        )?;
        if cfg.plots {
            let groups: Vec<usize> = d
                .clusters
                .assignments
                .iter()
                .map(|&a| usize::from(a == d.labels.defection))
                .collect();
            let svg = metrics::scatter_svg(
                &format!("agent {agent}: embeddings (cooperation blue, defection red)"),
                &pca_2d(&d.embeddings),
                &groups,
            );
            w.write(&format!("plots/agent{agent}_pca.svg"), svg.as_bytes())?;
        }
    }
    let notes = agents
        .iter()
        .map(|d| {
            format!(
                "agent {}: {} windows, cluster sizes {:?}, purity {:.4}",
                d.summary.agent,
                d.summary.samples,
                d.clusters.sizes(),
                d.summary.purity
            )
        })
        .collect();
    let manifest = w.finish("distill", &cfg.id(), cfg, Some(cfg.distill.encoder.epochs), notes)?;
    Ok(DistillOutcome {
        manifest,
        summaries: agents.iter().map(|d| d.summary.clone()).collect(),
        agents,
    })
}

/// Collect, encode, cluster, label and clone oracles for both agents
/// independently, then write the oracles, encoders and cluster reports.
pub fn run_distill(cfg: &DistillRunConfig) -> Result<DistillOutcome> {
    match cfg.game.as_str() {
        "coin" => distill_with(&CoinVisual::default(), cfg),
        "staghunt" => distill_with(&stag_base(), cfg),
        other => Err(Error::Config(format!("distill needs a grid game (coin, staghunt), got {other:?}"))),
    }
}

fn read_index(dir: &Path) -> Result<DistillIndex> {
    let p = dir.join(INDEX);
    if !p.exists() {
        return Err(Error::MissingArtifact(p));
    }
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn load_pair(dir: &Path, agent: usize, observations: &[crate::envs::grid::Observation]) -> Result<OraclePair> {
    let load = |which: &str| -> Result<GreedyPolicy> {
        let p = dir.join(oracle_file(agent, which));
        if !p.exists() {
            return Err(Error::MissingArtifact(p));
        }
        GreedyPolicy::new(Oracle::load(&p)?, observations)
    };
    Ok(OraclePair {
        cooperate: load("cooperate")?,
        defect: load("defect")?,
    })
}

/// Load both agents' oracles from a distill directory for `meta_game`
/// (`coin-meta` or `stag-meta`).
pub fn load_oracle_pairs(dir: &Path, meta_game: &str) -> Result<[OraclePair; 2]> {
    let index = read_index(dir)?;
    let (expected, observations) = match meta_game {
        "coin-meta" => ("coin", CoinVisual::default().all_observations()),
        "stag-meta" => ("staghunt", stag_base().all_observations()),
        other => return Err(Error::Config(format!("{other:?} is not a meta game"))),
    };
    if index.game != expected {
        return Err(Error::Config(format!(
            "{} holds {} oracles, {meta_game} needs {expected}",
            dir.display(),
            index.game
        )));
    }
    Ok([load_pair(dir, 0, &observations)?, load_pair(dir, 1, &observations)?])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEval {
    pub agent: usize,
    pub oracle: String,
    pub coin: Option<CoinSoloEval>,
    /// Share of picks that took the other agent's coin.
    pub other_fraction: Option<f64>,
    pub stag: Option<StagSoloEval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEvalReport {
    pub game: String,
    pub partner: SoloPartner,
    pub episodes: usize,
    pub steps: usize,
    pub evals: Vec<OracleEval>,
}

impl OracleEvalReport {
    pub fn get(&self, agent: usize, oracle: &str) -> Option<&OracleEval> {
        self.evals.iter().find(|e| e.agent == agent && e.oracle == oracle)
    }
}

/// Solo evaluation of every oracle in a distill directory. Results go to
/// `<dir>/eval/` with their own manifest.
pub fn eval_oracle(
    dir: &Path,
    partner: SoloPartner,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Result<(RunManifest, OracleEvalReport)> {
    let index = read_index(dir)?;
    let meta = if index.game == "coin" { "coin-meta" } else { "stag-meta" };
    let pairs = load_oracle_pairs(dir, meta)?;
    let mut evals = Vec::new();
    for (agent, pair) in pairs.iter().enumerate() {
        for (name, policy) in [("cooperate", &pair.cooperate), ("defect", &pair.defect)] {
            let mut e = OracleEval {
                agent,
                oracle: name.into(),
                coin: None,
                other_fraction: None,
                stag: None,
            };
            if index.game == "coin" {
                // observations are perspective-relative, so either agent's
                // oracle can drive the evaluated seat
                let c = coin_solo_eval(policy, partner, episodes, steps, seed)?;
                e.other_fraction = c.other_fraction();
                e.coin = Some(c);
            } else {
                e.stag = Some(stag_solo_eval(policy, &stag_base(), agent, episodes, steps, seed)?);
            }
            evals.push(e);
        }
    }
    let report = OracleEvalReport {
        game: index.game,
        partner,
        episodes,
        steps,
        evals,
    };
    let mut w = ArtifactWriter::new(dir.join("eval"));
    w.write_json("oracle_eval.json", &report)?;
    let config = serde_json::json!({
        "oracles": dir, "partner": partner, "episodes": episodes, "steps": steps, "seed": seed
    });
    let manifest = w.finish("eval-oracle", "oracle-eval", &config, None, vec![])?;
    Ok((manifest, report))
}
