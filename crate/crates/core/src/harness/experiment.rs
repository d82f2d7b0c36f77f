use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::distill::meta::{estimate_meta_payoffs, MetaGame, MetaPayoffs, OraclePair};
use crate::distill::visual::{CoinVisual, StagVisual};
use crate::envs::staghunt::Layout;
use crate::envs::BraessConfig;
use crate::error::{Error, Result};
use crate::harness::distill::load_oracle_pairs;
use crate::harness::{ArtifactWriter, ConvergenceTarget, ExperimentConfig, LearnerKind, Metric, RunManifest};
use crate::learner::{train, AgentSpec, BraessGame, MatrixGame, TrainingHistory};
use crate::metrics::{self, AggregateBand, Band, MetricSeries};
use crate::par::Execution;
use crate::rng;

/// Mean and population standard deviation across seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.max(0.0).sqrt(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub agent: usize,
    pub learner: LearnerKind,
    /// Per-seed means over the final window, then across seeds.
    pub final_ndr: Stat,
    pub final_p_cooperation: Stat,
    pub final_p_own_coin: Option<Stat>,
    /// First epoch of the cross-seed mean curve from which the target holds.
    pub convergence_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment_id: String,
    pub game: String,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    /// Number of trailing epochs averaged for the `final_*` statistics.
    pub final_window: usize,
    pub target: ConvergenceTarget,
    pub agents: Vec<AgentSummary>,
    pub meta_payoffs: Option<MetaPayoffs>,
}

impl ExperimentSummary {
    /// Latest convergence epoch over the learning agents; `None` unless all
    /// of them converged.
    pub fn joint_convergence(&self) -> Option<usize> {
        self.agents
            .iter()
            .filter(|a| matches!(a.learner, LearnerKind::Sl | LearnerKind::Sql))
            .map(|a| a.convergence_epoch)
            .try_fold(0, |acc, e| e.map(|e| acc.max(e)))
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub manifest: RunManifest,
    pub summary: ExperimentSummary,
    /// One history per configured seed, in configuration order.
    pub histories: Vec<TrainingHistory>,
}

const CSV_HEADER: &str = "experiment_id,game,learner,seed,agent,epoch,metric,value\n";

fn train_seed(
    cfg: &ExperimentConfig,
    specs: &[AgentSpec],
    seed: u64,
    oracles: Option<&Arc<[OraclePair; 2]>>,
) -> Result<TrainingHistory> {
    let horizon = cfg.learner.horizon;
    let exec = Execution::Sequential;
    match (cfg.game.as_str(), oracles) {
        ("braess", _) => {
            let bc = BraessConfig {
                agents: cfg.agents,
                horizon,
                observation: cfg.braess_observation,
            };
            bc.validate()?;
            train(|| BraessGame::new(bc.clone()), specs, seed, exec)
        }
        ("coin-meta", Some(o)) => train(|| Ok(MetaGame::new(CoinVisual::default(), o.clone())), specs, seed, exec),
        ("stag-meta", Some(o)) => {
            let base = stag_base();
            train(|| Ok(MetaGame::new(base.clone(), o.clone())), specs, seed, exec)
        }
        (game, _) => train(|| MatrixGame::by_name(game, horizon), specs, seed, exec),
    }
}

/// Stag Hunt on the default layout; positions are redrawn on every reset.
pub(crate) fn stag_base() -> StagVisual {
    StagVisual::new(Layout::default_layout(), &mut rng::stream(0, "stag-base", 0))
}

fn final_window(epochs: usize) -> usize {
    (epochs / 10).max(1)
}

fn seed_order(histories: &[TrainingHistory]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..histories.len()).collect();
    idx.sort_by_key(|&i| histories[i].seed);
    idx
}

/// Cross-seed band for one agent and metric, with seeds in ascending order
/// so the result does not depend on the order of the seed list.
fn band(histories: &[TrainingHistory], agent: usize, metric: Metric) -> Result<Option<AggregateBand>> {
    let mut series = Vec::new();
    for i in seed_order(histories) {
        let h = &histories[i];
        let pts = h.series(agent, |r| metric.of(r));
        if pts.is_empty() {
            return Ok(None);
        }
        series.push(MetricSeries::new(metric.name(), h.seed, agent, pts)?);
    }
    match metrics::aggregate(&series) {
        Ok(b) => Ok(Some(b)),
        // Coin-pick rates are missing in epochs without picks.
        Err(e) if metric == Metric::POwnCoin => {
            log::warn!("no aggregate for {} of agent {agent}: {e}", metric.name());
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn final_stat(histories: &[TrainingHistory], agent: usize, metric: Metric, window: usize) -> Result<Option<Stat>> {
    let mut per_seed = Vec::new();
    for i in seed_order(histories) {
        let values: Vec<f64> = histories[i].series(agent, |r| metric.of(r)).into_iter().map(|p| p.1).collect();
        if values.is_empty() {
            continue;
        }
        per_seed.push(metrics::window_mean(&values, window)?);
    }
    Ok(Stat::of(&per_seed))
}

/// Per-seed final-window mean of `metric` for `agent`, in configuration order.
pub fn final_per_seed(histories: &[TrainingHistory], agent: usize, metric: Metric, window: usize) -> Result<Vec<f64>> {
    histories
        .iter()
        .map(|h| {
            let values: Vec<f64> = h.series(agent, |r| metric.of(r)).into_iter().map(|p| p.1).collect();
            metrics::window_mean(&values, window)
        })
        .collect()
}

/// Train every seed, aggregate, and write `results.csv`, `aggregate.csv`,
/// `summary.json`, optional SVG plots and the manifest.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let id = cfg.id();
    let kinds = cfg.agent_kinds();
    let specs: Vec<AgentSpec> = kinds.iter().map(|k| k.spec(&cfg.learner)).collect();
    let oracles = match cfg.game.as_str() {
        "coin-meta" | "stag-meta" => {
            let dir = cfg.oracles.as_deref().ok_or_else(|| Error::Config("oracle directory missing".into()))?;
            Some(Arc::new(load_oracle_pairs(dir, &cfg.game)?))
        }
        _ => None,
    };
    log::info!("{id}: {} seeds x {} epochs", cfg.seeds.len(), cfg.learner.epochs);
    let histories = cfg
        .execution
        .try_map(cfg.seeds.len(), |i| train_seed(cfg, &specs, cfg.seeds[i], oracles.as_ref()))?;

    let mut w = ArtifactWriter::new(cfg.dir());
    let mut csv = String::from(CSV_HEADER);
    for h in &histories {
        for (epoch, agent, metric, value) in h.rows() {
            let _ = writeln!(
                csv,
                "{id},{},{},{},{agent},{epoch},{metric},{value}",
                cfg.game,
                kinds[agent].label(),
                h.seed
            );
        }
    }
    w.write("results.csv", csv.as_bytes())?;

    let window = final_window(cfg.learner.epochs);
    let target = cfg.target();
    let mut agg = String::from("experiment_id,game,learner,agent,epoch,metric,mean,std\n");
    let mut bands: BTreeMap<Metric, Vec<(String, AggregateBand)>> = BTreeMap::new();
    let mut agents = Vec::new();
    for (agent, kind) in kinds.iter().enumerate() {
        let mut convergence_epoch = None;
        for metric in Metric::ALL {
            let Some(b) = band(&histories, agent, metric)? else { continue };
            for ((e, m), s) in b.epochs.iter().zip(&b.mean).zip(&b.std) {
                let _ = writeln!(agg, "{id},{},{},{agent},{e},{},{m},{s}", cfg.game, kind.label(), metric.name());
            }
            if metric == target.metric {
                convergence_epoch = metrics::convergence_epoch(&b.epochs, &b.mean, target.sustain, |v| target.rule.holds(v));
            }
            bands.entry(metric).or_default().push((format!("agent {agent} ({})", kind.label()), b));
        }
        let stat = |m| final_stat(&histories, agent, m, window);
        agents.push(AgentSummary {
            agent,
            learner: *kind,
            final_ndr: stat(Metric::Ndr)?.expect("every record has an NDR"),
            final_p_cooperation: stat(Metric::PCooperation)?.expect("every record has P(C)"),
            final_p_own_coin: stat(Metric::POwnCoin)?,
            convergence_epoch,
        });
    }
    w.write("aggregate.csv", agg.as_bytes())?;

    let mut notes = Vec::new();
    let meta_payoffs = match (&oracles, cfg.game.as_str()) {
        (Some(o), "coin-meta") => Some(estimate_meta_payoffs(
            &MetaGame::new(CoinVisual::default(), o.clone()),
            50,
            50,
            cfg.seeds[0],
        )?),
        (Some(o), _) => Some(estimate_meta_payoffs(&MetaGame::new(stag_base(), o.clone()), 50, 50, cfg.seeds[0])?),
        (None, _) => None,
    };
    if let Some(p) = &meta_payoffs {
        notes.push(format!("estimated meta-game payoffs for agent 0 (row [own][other]): {:?}, {:?}", p.row, p.dilemma));
    }
    if cfg.game == "braess" {
        let bc = BraessConfig::new(cfg.agents, cfg.learner.horizon)?;
        notes.push(format!("braess: {} agents, cooperating route cost includes R0 = {}", cfg.agents, bc.base_reward()));
    }

    let summary = ExperimentSummary {
        experiment_id: id.clone(),
        game: cfg.game.clone(),
        epochs: cfg.learner.epochs,
        seeds: cfg.seeds.clone(),
        final_window: window,
        target,
        agents,
        meta_payoffs,
    };
    w.write_json("summary.json", &summary)?;

    if cfg.plots {
        for (metric, list) in &bands {
            let refs: Vec<Band<'_>> = list.iter().map(|(l, b)| Band { label: l, band: b }).collect();
            let svg = metrics::line_chart_svg(&format!("{id}: {}", metric.name()), metric.name(), &refs);
            w.write(&format!("plots/{}.svg", metric.name()), svg.as_bytes())?;
        }
    }
    let manifest = w.finish("experiment", &id, cfg, Some(cfg.learner.epochs), notes)?;
    Ok(ExperimentOutcome {
        manifest,
        summary,
        histories,
    })
}

/// Values each swept key takes; an empty list keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub z: Vec<usize>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub experiment_id: String,
    pub z: usize,
    pub beta: f64,
    pub gamma: f64,
    /// Latest per-agent convergence epoch; `None` when some learner never
    /// converged within the budget.
    pub convergence_epoch: Option<usize>,
    pub final_ndr: f64,
    pub final_p_cooperation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub experiment_id: String,
    pub game: String,
    pub epochs: usize,
    pub target: ConvergenceTarget,
    pub points: Vec<SweepPoint>,
}

fn mean_over_learners(summary: &ExperimentSummary, f: impl Fn(&AgentSummary) -> f64) -> f64 {
    let xs: Vec<f64> = summary
        .agents
        .iter()
        .filter(|a| matches!(a.learner, LearnerKind::Sl | LearnerKind::Sql))
        .map(f)
        .collect();
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// One experiment per grid point under `<base dir>/<point id>`, plus a
/// summary table of convergence epochs.
pub fn run_sweep(base: &ExperimentConfig, grid: &SweepGrid) -> Result<(RunManifest, SweepReport)> {
    base.validate()?;
    let or_base = |v: &Vec<f64>, b: f64| if v.is_empty() { vec![b] } else { v.clone() };
    let zs = if grid.z.is_empty() { vec![base.learner.z] } else { grid.z.clone() };
    let betas = or_base(&grid.beta, base.learner.beta);
    let gammas = or_base(&grid.gamma, base.learner.gamma);
    let dir = base.dir();
    let mut points = Vec::new();
    for &z in &zs {
        for &beta in &betas {
            for &gamma in &gammas {
                let mut cfg = base.clone();
                cfg.experiment_id = format!("z{z}-beta{beta}-gamma{gamma}");
                cfg.out = dir.clone();
                cfg.learner.z = z;
                cfg.learner.beta = beta;
                cfg.learner.gamma = gamma;
                let out = run_experiment(&cfg)?;
                points.push(SweepPoint {
                    experiment_id: cfg.experiment_id.clone(),
                    z,
                    beta,
                    gamma,
                    convergence_epoch: out.summary.joint_convergence(),
                    final_ndr: mean_over_learners(&out.summary, |a| a.final_ndr.mean),
                    final_p_cooperation: mean_over_learners(&out.summary, |a| a.final_p_cooperation.mean),
                });
            }
        }
    }
    let report = SweepReport {
        experiment_id: base.id(),
        game: base.game.clone(),
        epochs: base.learner.epochs,
        target: base.target(),
        points,
    };
    let mut w = ArtifactWriter::new(&dir);
    let mut csv = String::from("experiment_id,z,beta,gamma,convergence_epoch,final_ndr,final_p_cooperation\n");
    for p in &report.points {
        let conv = p.convergence_epoch.map_or_else(String::new, |e| e.to_string());
        let _ = writeln!(
            csv,
            "{},{},{},{},{conv},{},{}",
            p.experiment_id, p.z, p.beta, p.gamma, p.final_ndr, p.final_p_cooperation
        );
    }
    w.write("sweep.csv", csv.as_bytes())?;
    w.write_json("sweep.json", &report)?;
    let manifest = w.finish(
        "sweep",
        &report.experiment_id,
        &serde_json::json!({ "base": base, "grid": grid }),
        Some(base.learner.epochs),
        vec!["per-point outputs and manifests live in the point subdirectories".into()],
    )?;
    Ok((manifest, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    VsAlwaysDefect,
    VsAlwaysCooperate,
    SelfPlay,
}

impl Pairing {
    pub const ALL: [Pairing; 3] = [Pairing::VsAlwaysDefect, Pairing::VsAlwaysCooperate, Pairing::SelfPlay];

    fn id(self) -> &'static str {
        match self {
            Pairing::VsAlwaysDefect => "vs-always-defect",
            Pairing::VsAlwaysCooperate => "vs-always-cooperate",
            Pairing::SelfPlay => "self-play",
        }
    }

    fn opponent(self) -> LearnerKind {
        match self {
            Pairing::VsAlwaysDefect => LearnerKind::AlwaysDefect,
            Pairing::VsAlwaysCooperate => LearnerKind::AlwaysCooperate,
            Pairing::SelfPlay => LearnerKind::Sql,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploitRow {
    pub pairing: Pairing,
    /// Share of defect actions played by the status-quo learner (agent 0)
    /// over the final window.
    pub defection_rate: Stat,
    pub final_ndr: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploitReport {
    pub experiment_id: String,
    pub game: String,
    pub rows: Vec<ExploitRow>,
}

impl ExploitReport {
    pub fn row(&self, pairing: Pairing) -> Option<&ExploitRow> {
        self.rows.iter().find(|r| r.pairing == pairing)
    }
}

/// Train a status-quo learner against always-defect, always-cooperate and a
/// copy of itself.
pub fn run_exploitability(base: &ExperimentConfig) -> Result<(RunManifest, ExploitReport)> {
    if base.n_agents() != 2 {
        return Err(Error::Config("exploitability needs a two-agent game".into()));
    }
    let dir = base.dir();
    let mut rows = Vec::new();
    for pairing in Pairing::ALL {
        let mut cfg = base.clone();
        cfg.experiment_id = pairing.id().into();
        cfg.out = dir.clone();
        cfg.learners = vec![LearnerKind::Sql, pairing.opponent()];
        let out = run_experiment(&cfg)?;
        let window = out.summary.final_window;
        let coop = final_per_seed(&out.histories, 0, Metric::PCooperation, window)?;
        let defect: Vec<f64> = coop.iter().map(|c| 1.0 - c).collect();
        rows.push(ExploitRow {
            pairing,
            defection_rate: Stat::of(&defect).expect("seeds are non-empty"),
            final_ndr: out.summary.agents[0].final_ndr,
        });
    }
    let report = ExploitReport {
        experiment_id: base.id(),
        game: base.game.clone(),
        rows,
    };
    let mut w = ArtifactWriter::new(&dir);
    let mut csv = String::from("pairing,defection_rate_mean,defection_rate_std,final_ndr_mean\n");
    for r in &report.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            r.pairing.id(),
            r.defection_rate.mean,
            r.defection_rate.std,
            r.final_ndr.mean
        );
    }
    w.write("exploit.csv", csv.as_bytes())?;
    w.write_json("exploit.json", &report)?;
    let manifest = w.finish("exploit", &report.experiment_id, base, Some(base.learner.epochs), vec![])?;
    Ok((manifest, report))
}
