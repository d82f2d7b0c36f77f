//! Experiment orchestration: configs, runs, manifests and reports.
//!
//! Every run writes into its own directory. Files are written through
//! [`ArtifactWriter`], which renames complete temporary files into place and
//! records a SHA-256 checksum for each; `manifest.json` lists them.

mod distill;
mod experiment;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::matrix::PayoffMatrix;
use crate::envs::BraessObservation;
use crate::error::{Error, Result};
use crate::learner::{AgentSpec, EpochRecord, LearnerConfig};
use crate::par::Execution;

pub use distill::{eval_oracle, load_oracle_pairs, run_distill, DistillOutcome, DistillRunConfig, OracleEvalReport};
pub use experiment::{
    final_per_seed, run_experiment, run_exploitability, run_sweep, AgentSummary, ExperimentOutcome, ExperimentSummary,
    ExploitReport, ExploitRow, Pairing, Stat, SweepGrid, SweepPoint, SweepReport,
};
pub use report::{write_report, CITED_CONSTANTS};

/// Name of the environment variable holding the default output root.
pub const OUT_ENV: &str = "SQLAB_OUT";

/// Output root used when a config does not name one.
pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// What drives one agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerKind {
    /// Selfish learner: the status-quo weight is forced to zero.
    Sl,
    Sql,
    AlwaysCooperate,
    AlwaysDefect,
}

impl LearnerKind {
    pub fn label(self) -> &'static str {
        match self {
            LearnerKind::Sl => "sl",
            LearnerKind::Sql => "sql",
            LearnerKind::AlwaysCooperate => "always-cooperate",
            LearnerKind::AlwaysDefect => "always-defect",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sl" => Ok(LearnerKind::Sl),
            "sql" => Ok(LearnerKind::Sql),
            "always-cooperate" | "fixed:always-cooperate" => Ok(LearnerKind::AlwaysCooperate),
            "always-defect" | "fixed:always-defect" => Ok(LearnerKind::AlwaysDefect),
            other => Err(Error::Config(format!("unknown learner {other:?}"))),
        }
    }

    pub fn spec(self, base: &LearnerConfig) -> AgentSpec {
        match self {
            LearnerKind::Sl => AgentSpec::Learner(LearnerConfig {
                beta: 0.0,
                ..base.clone()
            }),
            LearnerKind::Sql => AgentSpec::Learner(base.clone()),
            LearnerKind::AlwaysCooperate => AgentSpec::Fixed { action: 0 },
            LearnerKind::AlwaysDefect => AgentSpec::Fixed { action: 1 },
        }
    }
}

/// A per-epoch scalar tracked by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ndr,
    PCooperation,
    POwnCoin,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ndr, Metric::PCooperation, Metric::POwnCoin];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ndr => "ndr",
            Metric::PCooperation => "p_cooperation",
            Metric::POwnCoin => "p_own_coin",
        }
    }

    pub fn of(self, r: &EpochRecord) -> Option<f64> {
        match self {
            Metric::Ndr => Some(r.ndr),
            Metric::PCooperation => Some(r.p_cooperation),
            Metric::POwnCoin => r.p_own_coin,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    AtLeast(f64),
    AtMost(f64),
    AbsAtMost(f64),
}

impl Rule {
    pub fn holds(self, v: f64) -> bool {
        match self {
            Rule::AtLeast(t) => v >= t,
            Rule::AtMost(t) => v <= t,
            Rule::AbsAtMost(t) => v.abs() <= t,
        }
    }
}

/// The metric, condition and run length that define convergence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTarget {
    pub metric: Metric,
    pub rule: Rule,
    pub sustain: usize,
}

impl ConvergenceTarget {
    /// NDR within 0.1 of the cooperative optimum, or the relevant probability
    /// at 0.9 or more, held for 10 epochs.
    pub fn default_for(game: &str) -> Self {
        let (metric, rule) = match game {
            "ipd" => (Metric::Ndr, Rule::AtLeast(-1.1)),
            "imp" => (Metric::Ndr, Rule::AbsAtMost(0.1)),
            "coin-meta" => (Metric::POwnCoin, Rule::AtLeast(0.9)),
            _ => (Metric::PCooperation, Rule::AtLeast(0.9)),
        };
        Self {
            metric,
            rule,
            sustain: 10,
        }
    }
}

/// Discount used for `game` unless configured: 0.9 for Matching Pennies,
/// 0.96 elsewhere.
pub fn default_gamma(game: &str) -> f64 {
    if game == "imp" {
        0.9
    } else {
        0.96
    }
}

pub const META_GAMES: [&str; 2] = ["coin-meta", "stag-meta"];

/// One matrix-game or Braess training experiment over several seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    /// `ipd`, `imp`, `ish`, `icg`, `braess`, `coin-meta` or `stag-meta`.
    pub game: String,
    /// Braess population size.
    pub agents: usize,
    pub braess_observation: BraessObservation,
    /// One entry per agent; a single entry is used for every agent.
    pub learners: Vec<LearnerKind>,
    pub learner: LearnerConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Directory written by a distill run; required by the meta games.
    pub oracles: Option<PathBuf>,
    pub plots: bool,
    pub execution: Execution,
    pub target: Option<ConvergenceTarget>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment_id: String::new(),
            game: "ipd".into(),
            agents: 4,
            braess_observation: BraessObservation::FullProfile,
            learners: vec![LearnerKind::Sql],
            learner: LearnerConfig::sql(),
            seeds: (0..20).collect(),
            out: default_out_root(),
            oracles: None,
            plots: false,
            execution: Execution::Parallel,
            target: None,
        }
    }
}

impl ExperimentConfig {
    /// Defaults for `game`, including its discount.
    pub fn new(game: &str, learners: &[LearnerKind]) -> Self {
        Self {
            game: game.into(),
            learners: learners.to_vec(),
            learner: LearnerConfig {
                gamma: default_gamma(game),
                ..LearnerConfig::sql()
            },
            ..Self::default()
        }
    }

    pub fn n_agents(&self) -> usize {
        if self.game == "braess" {
            self.agents
        } else {
            2
        }
    }

    /// The id used for the output directory: the configured one or one
    /// derived from game and learners.
    pub fn id(&self) -> String {
        if !self.experiment_id.is_empty() {
            return self.experiment_id.clone();
        }
        let mut labels: Vec<&str> = self.learners.iter().map(|l| l.label()).collect();
        labels.dedup();
        format!("{}-{}", self.game, labels.join("-"))
    }

    pub fn dir(&self) -> PathBuf {
        self.out.join(self.id())
    }

    pub fn target(&self) -> ConvergenceTarget {
        self.target.unwrap_or_else(|| ConvergenceTarget::default_for(&self.game))
    }

    pub fn agent_kinds(&self) -> Vec<LearnerKind> {
        if self.learners.len() == 1 {
            vec![self.learners[0]; self.n_agents()]
        } else {
            self.learners.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let known = PayoffMatrix::is_builtin(&self.game) || self.game == "braess" || META_GAMES.contains(&self.game.as_str());
        if !known {
            return Err(Error::Config(format!("unknown game {:?}", self.game)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        let n = self.n_agents();
        if self.learners.len() != 1 && self.learners.len() != n {
            return Err(Error::Config(format!(
                "{} learners given for {n} agents",
                self.learners.len()
            )));
        }
        if !self.learners.iter().any(|l| matches!(l, LearnerKind::Sl | LearnerKind::Sql)) {
            return Err(Error::Config("at least one agent must learn".into()));
        }
        let id = self.id();
        if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
            return Err(Error::Config(format!("invalid experiment id {id:?}")));
        }
        if META_GAMES.contains(&self.game.as_str()) && self.oracles.is_none() {
            return Err(Error::Config(format!("{} needs an oracle directory", self.game)));
        }
        self.learner.validate()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Record of one run: what was asked for and what was written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    pub experiment_id: String,
    pub config: serde_json::Value,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Training epochs per seed, when the run trains learners.
    pub epoch_budget: Option<usize>,
    pub notes: Vec<String>,
    /// Relative path to SHA-256 hex digest. The manifest itself is not listed.
    pub artifacts: BTreeMap<String, String>,
}

pub const MANIFEST: &str = "manifest.json";

/// Writes files under one run directory and tracks their checksums.
#[derive(Debug)]
pub struct ArtifactWriter {
    root: PathBuf,
    started: u64,
    artifacts: BTreeMap<String, String>,
}

impl ArtifactWriter {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            started: unix_now(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(rel), bytes)?;
        self.artifacts.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    /// Hash a file some other routine already wrote under the root.
    pub fn track(&mut self, rel: &str) -> Result<()> {
        let p = self.path(rel);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        self.artifacts.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn finish<C: Serialize>(
        self,
        kind: &str,
        experiment_id: &str,
        config: &C,
        epoch_budget: Option<usize>,
        notes: Vec<String>,
    ) -> Result<RunManifest> {
        let manifest = RunManifest {
            kind: kind.into(),
            experiment_id: experiment_id.into(),
            config: serde_json::to_value(config)?,
            code_version: env!("CARGO_PKG_VERSION").into(),
            started_unix: self.started,
            finished_unix: unix_now(),
            epoch_budget,
            notes,
            artifacts: self.artifacts,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&self.root.join(MANIFEST), &bytes)?;
        Ok(manifest)
    }
}

/// Re-hash every artifact listed in `dir/manifest.json`; returns the paths
/// whose contents no longer match (missing files included).
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let p = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    Ok(manifest
        .artifacts
        .iter()
        .filter(|(rel, hash)| std::fs::read(dir.join(rel)).map_or(true, |b| &sha256_hex(&b) != *hash))
        .map(|(rel, _)| rel.clone())
        .collect())
}

/// Write `bytes` to a sibling temporary file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
