use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use sqlab::distill::oracle::SoloPartner;
use sqlab::envs::matrix::PayoffMatrix;
use sqlab::harness::{
    self, DistillRunConfig, ExperimentConfig, ExperimentSummary, LearnerKind, SweepGrid, OUT_ENV,
};
use sqlab::Execution;

/// Status-quo policy-gradient experiments on iterated social dilemmas.
#[derive(Parser)]
#[command(name = "sqlab", version)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Train learners on an iterated matrix game (ipd, imp, ish, icg).
    RunMatrix(ExperimentArgs),
    /// Train learners on the Braess congestion game.
    RunBraess {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Number of agents (even).
        #[arg(long)]
        agents: Option<usize>,
    },
    /// Distill cooperation and defection oracles from a grid game.
    Distill(DistillArgs),
    /// Train learners on the meta-game built from distilled oracles.
    RunVisual {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Directory written by `distill`.
        #[arg(long)]
        oracles: Option<PathBuf>,
    },
    /// Solo-evaluate the oracles of a distill run.
    EvalOracle(EvalArgs),
    /// Run one experiment per grid point and tabulate convergence epochs.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Values of z, e.g. `1,3,10`.
        #[arg(long, value_delimiter = ',')]
        sweep_z: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        sweep_beta: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        sweep_gamma: Vec<f64>,
    },
    /// Train a status-quo learner against fixed always-defect and
    /// always-cooperate partners.
    Exploit(ExperimentArgs),
    /// Summarize every run under the output root into report.md.
    Report {
        #[arg(long, env = OUT_ENV, default_value = "runs")]
        out: PathBuf,
    },
}

#[derive(Args, Clone, Default)]
struct ExperimentArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    game: Option<String>,
    /// A count `N` (seeds 0..N), a range `a..b`, or a list `a,b,c`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    z: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    /// Episode length.
    #[arg(long)]
    horizon: Option<usize>,
    /// Learner per agent, e.g. `sql,sl` or `sql,always-defect`.
    #[arg(long, value_delimiter = ',')]
    learners: Vec<String>,
    /// Output root (defaults to $SQLAB_OUT, then ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    id: Option<String>,
    /// Also write SVG plots.
    #[arg(long)]
    plots: bool,
    /// Run seeds one after another instead of on the thread pool.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct DistillArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// `coin` or `staghunt`.
    #[arg(long)]
    game: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    id: Option<String>,
    #[arg(long)]
    plots: bool,
    #[arg(long)]
    save_dataset: bool,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory written by `distill`.
    #[arg(long)]
    oracles: PathBuf,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Share the grid with a random partner instead of playing alone.
    #[arg(long)]
    random_partner: bool,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        return Ok((a.trim().parse()?..b.trim().parse()?).collect());
    }
    if s.contains(',') {
        return s.split(',').map(|x| Ok(x.trim().parse()?)).collect();
    }
    let n: u64 = s.trim().parse().with_context(|| format!("bad --seeds value {s:?}"))?;
    Ok((0..n).collect())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| sqlab::Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| sqlab::Error::Config(format!("{}: {e}", path.display())).into())
}

impl ExperimentArgs {
    fn build(&self, default_game: &str) -> Result<ExperimentConfig> {
        let (mut cfg, gamma_given) = match &self.config {
            Some(p) => {
                let v: serde_json::Value = read_json(p)?;
                let given = v.pointer("/learner/gamma").is_some();
                let cfg: ExperimentConfig =
                    serde_json::from_value(v).map_err(|e| sqlab::Error::Config(format!("{}: {e}", p.display())))?;
                (cfg, given)
            }
            None => (
                ExperimentConfig {
                    game: default_game.into(),
                    ..ExperimentConfig::default()
                },
                false,
            ),
        };
        if let Some(g) = &self.game {
            cfg.game = g.clone();
        }
        if !gamma_given {
            cfg.learner.gamma = harness::default_gamma(&cfg.game);
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = parse_seeds(s).map_err(|e| sqlab::Error::Config(e.to_string()))?;
        }
        if let Some(e) = self.epochs {
            cfg.learner.epochs = e;
        }
        if let Some(z) = self.z {
            cfg.learner.z = z;
        }
        if let Some(b) = self.beta {
            cfg.learner.beta = b;
        }
        if let Some(h) = self.horizon {
            cfg.learner.horizon = h;
        }
        if !self.learners.is_empty() {
            cfg.learners = self.learners.iter().map(|l| LearnerKind::parse(l)).collect::<sqlab::Result<_>>()?;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(id) = &self.id {
            cfg.experiment_id = id.clone();
        }
        cfg.plots |= self.plots;
        if self.sequential {
            cfg.execution = Execution::Sequential;
        }
        Ok(cfg)
    }
}

fn print_summary(s: &ExperimentSummary, dir: &Path) {
    println!("{} ({}, {} seeds, {} epochs) -> {}", s.experiment_id, s.game, s.seeds.len(), s.epochs, dir.display());
    for a in &s.agents {
        let coin = a.final_p_own_coin.map_or_else(String::new, |c| format!("  own-coin {:.3}", c.mean));
        let conv = a.convergence_epoch.map_or_else(|| "not converged".to_string(), |e| format!("converged at {e}"));
        println!(
            "  agent {} {:<16} NDR {:.3} ± {:.3}  P(C) {:.3} ± {:.3}{coin}  {conv}",
            a.agent,
            a.learner.label(),
            a.final_ndr.mean,
            a.final_ndr.std,
            a.final_p_cooperation.mean,
            a.final_p_cooperation.std
        );
    }
}

fn run_and_print(cfg: &ExperimentConfig) -> Result<()> {
    let out = harness::run_experiment(cfg)?;
    print_summary(&out.summary, &cfg.dir());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.verb {
        Verb::RunMatrix(args) => {
            let cfg = args.build("ipd")?;
            if !PayoffMatrix::is_builtin(&cfg.game) {
                bail!(sqlab::Error::Config(format!("{:?} is not a matrix game", cfg.game)));
            }
            run_and_print(&cfg)
        }
        Verb::RunBraess { exp, agents } => {
            let mut cfg = exp.build("braess")?;
            if cfg.game != "braess" {
                bail!(sqlab::Error::Config("run-braess only runs the braess game".into()));
            }
            if let Some(n) = agents {
                cfg.agents = n;
            }
            run_and_print(&cfg)
        }
        Verb::RunVisual { exp, oracles } => {
            let mut cfg = exp.build("coin-meta")?;
            if !harness::META_GAMES.contains(&cfg.game.as_str()) {
                bail!(sqlab::Error::Config(format!("{:?} is not a meta game", cfg.game)));
            }
            if oracles.is_some() {
                cfg.oracles = oracles;
            }
            run_and_print(&cfg)
        }
        Verb::Distill(a) => {
            let mut cfg: DistillRunConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => DistillRunConfig::default(),
            };
            if let Some(g) = a.game {
                cfg.game = g;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(o) = a.out {
                cfg.out = o;
            }
            if let Some(id) = a.id {
                cfg.experiment_id = id;
            }
            cfg.plots |= a.plots;
            cfg.save_dataset |= a.save_dataset;
            if a.sequential {
                cfg.execution = Execution::Sequential;
            }
            let out = harness::run_distill(&cfg)?;
            println!("oracles -> {}", cfg.dir().display());
            for s in &out.summaries {
                println!(
                    "  agent {}: {} windows, purity {:.4}, cooperation {:?}, defection {:?}",
                    s.agent, s.samples, s.purity, s.cooperation_classes, s.defection_classes
                );
            }
            Ok(())
        }
        Verb::EvalOracle(a) => {
            let partner = if a.random_partner { SoloPartner::Random } else { SoloPartner::Absent };
            let (_, report) = harness::eval_oracle(&a.oracles, partner, a.episodes, a.steps, a.seed)?;
            for e in &report.evals {
                match (&e.other_fraction, &e.stag) {
                    (Some(f), _) => println!("  agent {} {:<9} other-colored picks {f:.3}", e.agent, e.oracle),
                    (None, Some(s)) => println!("  agent {} {:<9} reached {:?}", e.agent, e.oracle, s.reached),
                    (None, None) => println!("  agent {} {:<9} no picks", e.agent, e.oracle),
                }
            }
            Ok(())
        }
        Verb::Sweep {
            exp,
            sweep_z,
            sweep_beta,
            sweep_gamma,
        } => {
            let cfg = exp.build("ipd")?;
            let grid = SweepGrid {
                z: sweep_z,
                beta: sweep_beta,
                gamma: sweep_gamma,
            };
            let (_, report) = harness::run_sweep(&cfg, &grid)?;
            println!("sweep {} -> {}", report.experiment_id, cfg.dir().display());
            for p in &report.points {
                let conv = p.convergence_epoch.map_or_else(|| "-".to_string(), |e| e.to_string());
                println!(
                    "  z {:<3} beta {:<5} gamma {:<5} converged at {conv:<6} NDR {:.3} P(C) {:.3}",
                    p.z, p.beta, p.gamma, p.final_ndr, p.final_p_cooperation
                );
            }
            Ok(())
        }
        Verb::Exploit(args) => {
            let cfg = args.build("ipd")?;
            let (_, report) = harness::run_exploitability(&cfg)?;
            for r in &report.rows {
                println!(
                    "  {:?}: defection rate {:.3} ± {:.3}",
                    r.pairing, r.defection_rate.mean, r.defection_rate.std
                );
            }
            Ok(())
        }
        Verb::Report { out } => {
            let (path, _) = harness::write_report(&out)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<sqlab::Error>() {
        return e.exit_code() as u8;
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
