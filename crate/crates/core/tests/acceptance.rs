//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Failing criteria are reported but do not fail the process unless
//! `SQLAB_ACCEPTANCE_STRICT` is set. Run outputs go to a temporary directory,
//! or to `SQLAB_ACCEPTANCE_OUT` when set.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqlab::distill::cluster::{cluster, purity};
use sqlab::distill::oracle::SoloPartner;
use sqlab::distill::{collect_data, opponent_sign_labels, ClusterMethod, EmbeddingSource};
use sqlab::envs::matrix::{MatrixState, PayoffMatrix};
use sqlab::harness::{
    eval_oracle, run_distill, run_experiment, run_exploitability, run_sweep, DistillRunConfig, ExperimentConfig,
    ExperimentOutcome, LearnerKind, Metric, Pairing, SweepGrid,
};
use sqlab::learner::{discounted_returns, imagined_return, lemma_q_values, BaselineWeighting, TrainingHistory};
use sqlab::policy::{finite_diff_objective_grad, LayeredNet, PolicyParams, StateInput};
use sqlab::{rng, Execution, Result};

use LearnerKind::{AlwaysCooperate, Sl, Sql};

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

struct Suite {
    root: PathBuf,
    verdicts: Vec<Verdict>,
    ipd_sql: Option<ExperimentOutcome>,
    distill_dir: Option<PathBuf>,
}

impl Suite {
    fn record(&mut self, id: u32, name: &'static str, started: Instant, result: Result<(bool, String)>) {
        let (pass, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
        println!(
            "[{}] {id:>2}. {name}: {detail} ({:.0} s)",
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
        for n in NOTES.with(|n| std::mem::take(&mut *n.borrow_mut())) {
            println!("        note: {n}");
        }
        self.verdicts.push(Verdict { id, name, pass, detail });
    }
}

thread_local! {
    static NOTES: std::cell::RefCell<Vec<String>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Extra context printed under the next verdict line.
fn note(s: impl Into<String>) {
    NOTES.with(|n| n.borrow_mut().push(s.into()));
}

fn config(game: &str, learners: &[LearnerKind], seeds: u64, epochs: usize, root: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(game, learners);
    cfg.seeds = (0..seeds).collect();
    cfg.learner.epochs = epochs;
    cfg.out = root.to_path_buf();
    cfg
}

/// Cross-seed mean of `metric` for `agent` at every epoch of the final 10%.
fn final_window_curve(histories: &[TrainingHistory], agent: usize, metric: Metric, epochs: usize) -> Vec<f64> {
    let start = epochs - (epochs / 10).max(1);
    (start..epochs)
        .map(|e| {
            let vals: Vec<f64> = histories
                .iter()
                .filter_map(|h| h.records.iter().find(|r| r.epoch == e && r.agent == agent).and_then(|r| metric.of(r)))
                .collect();
            vals.iter().sum::<f64>() / vals.len().max(1) as f64
        })
        .collect()
}

fn range(xs: &[f64]) -> (f64, f64) {
    xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

/// Policy probability of cooperating in `state` after the last update.
fn final_pi_c(h: &TrainingHistory, agent: usize, state: MatrixState) -> f64 {
    h.agent_records(agent).last().expect("trained").coop_prob[state.index()]
}

fn c1_ipd(s: &mut Suite) -> Result<(bool, String)> {
    let sql = run_experiment(&config("ipd", &[Sql], 20, 1000, &s.root))?;
    let sl = run_experiment(&config("ipd", &[Sl], 20, 1000, &s.root))?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (label, out, lo, hi) in [("SQL", &sql, -1.10, -1.00), ("SL", &sl, -2.05, -1.90)] {
        for agent in 0..2 {
            let curve = final_window_curve(&out.histories, agent, Metric::Ndr, 1000);
            let (mn, mx) = range(&curve);
            ok &= mn >= lo && mx <= hi;
            parts.push(format!("{label} agent {agent} final-window NDR in [{mn:.3}, {mx:.3}] (band [{lo}, {hi}])"));
        }
    }
    s.ipd_sql = Some(sql);
    Ok((ok, parts.join("; ")))
}

fn c2_imp(s: &mut Suite) -> Result<(bool, String)> {
    let out = run_experiment(&config("imp", &[Sql], 20, 300, &s.root))?;
    let mut ok = true;
    let mut parts = Vec::new();
    for a in &out.summary.agents {
        ok &= a.final_ndr.mean.abs() <= 0.10 && a.final_ndr.std <= 0.1;
        parts.push(format!("agent {} NDR {:.4} ± {:.4}", a.agent, a.final_ndr.mean, a.final_ndr.std));
    }
    Ok((ok, parts.join("; ")))
}

fn c3_chicken(s: &mut Suite) -> Result<(bool, String)> {
    let out = run_experiment(&config("icg", &[Sql], 20, 300, &s.root))?;
    let ok = out.summary.agents.iter().all(|a| a.final_p_cooperation.mean >= 0.9);
    let parts: Vec<String> = out
        .summary
        .agents
        .iter()
        .map(|a| format!("agent {} P(C) {:.3}", a.agent, a.final_p_cooperation.mean))
        .collect();
    Ok((ok, parts.join("; ")))
}

fn lemma3_orderings(h: &TrainingHistory, agent: usize) -> [bool; 4] {
    use MatrixState::Joint;
    [
        final_pi_c(h, agent, Joint(0, 0)) < 0.5,
        final_pi_c(h, agent, Joint(0, 1)) < 0.5,
        final_pi_c(h, agent, Joint(1, 0)) < 0.5,
        final_pi_c(h, agent, Joint(1, 1)) > 0.5,
    ]
}

fn beta_only(root: &Path, seeds: u64, weighting: BaselineWeighting, id: &str) -> Result<ExperimentOutcome> {
    let mut cfg = config("ipd", &[Sql], seeds, 1000, root);
    cfg.experiment_id = id.into();
    cfg.learner.alpha = 0.0;
    cfg.learner.baseline_weighting = weighting;
    run_experiment(&cfg)
}

fn c4_lemmas(s: &mut Suite) -> Result<(bool, String)> {
    // Q(D|s) - Q(C|s) = 1 under uniform play, for any discount
    let pd = PayoffMatrix::prisoners_dilemma();
    let mut runner = TestRunner::new(PropConfig {
        cases: 64,
        ..PropConfig::default()
    });
    let q_ok = runner
        .run(&(0.0f64..0.99), |gamma| {
            let lv = lemma_q_values(&pd, gamma).unwrap();
            for q in &lv.q {
                proptest::prop_assert!((q[1] - q[0] - 1.0).abs() <= 1e-8, "gamma {gamma}: {q:?}");
            }
            Ok(())
        })
        .is_ok();
    let lv = lemma_q_values(&pd, 0.96)?;
    let max_dev = lv.q.iter().map(|q| (q[1] - q[0] - 1.0).abs()).fold(0.0, f64::max);

    let beta = beta_only(&s.root, 20, BaselineWeighting::Discounted, "ipd-beta-only")?;
    let mut per_ordering = [0usize; 4];
    let mut all_four = 0;
    for h in &beta.histories {
        let o: Vec<[bool; 4]> = (0..2).map(|a| lemma3_orderings(h, a)).collect();
        for k in 0..4 {
            per_ordering[k] += usize::from(o[0][k] && o[1][k]);
        }
        all_four += usize::from(o.iter().all(|x| x.iter().all(|&b| b)));
    }
    let combined = s.ipd_sql.as_ref().expect("criterion 1 ran first");
    let cc = MatrixState::Joint(0, 0);
    let lemma4 = combined
        .histories
        .iter()
        .filter(|h| (0..2).all(|a| final_pi_c(h, a, cc) > 0.5))
        .count();
    let ok = q_ok && max_dev <= 1e-8 && all_four == 20 && lemma4 >= 18;
    let detail = format!(
        "Q gap property {} (max |gap - 1| {max_dev:.1e} at gamma 0.96); beta-only seeds with all four orderings {all_four}/20 \
         [D|CC {}, D|CD {}, D|DC {}, C|DD {}]; combined pi(C|CC) > pi(D|CC) on {lemma4}/20",
        if q_ok { "holds" } else { "violated" },
        per_ordering[0],
        per_ordering[1],
        per_ordering[2],
        per_ordering[3]
    );
    let mean_cc: f64 = beta.histories.iter().map(|h| final_pi_c(h, 0, cc)).sum::<f64>() / 20.0;
    note(format!("beta-only mean pi(C|CC) of agent 0 with the discounted baseline: {mean_cc:.3}"));
    let uni = beta_only(&s.root, 5, BaselineWeighting::Uniform, "ipd-beta-only-uniform")?;
    let uni_all = uni
        .histories
        .iter()
        .filter(|h| (0..2).all(|a| lemma3_orderings(h, a).iter().all(|&b| b)))
        .count();
    note(format!("beta-only with the per-visit (uniform) baseline: all four orderings on {uni_all}/5 seeds"));
    Ok((ok, detail))
}

fn c5_estimator(_: &mut Suite) -> Result<(bool, String)> {
    let rows = common::estimator_fidelity(100_000, 1);
    let worst_z = rows
        .iter()
        .map(|r| (r.estimate - r.exact).abs() / r.std_err)
        .fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_rel: f64 = 0.0;
    let mut checked = 0;
    let mut check = |policy: &PolicyParams, state: StateInput<'_>, action: usize| -> Result<()> {
        let g = policy.log_prob_grad(state, action)?;
        let fd = finite_diff_objective_grad(
            |th| {
                let mut p = policy.clone();
                p.theta_mut().copy_from_slice(th);
                p.action_probs(state).unwrap()[action].ln()
            },
            policy.theta(),
        )?;
        for (a, b) in g.as_slice().iter().zip(fd.as_slice()) {
            let scale = a.abs().max(b.abs());
            if scale > 1e-9 {
                worst_rel = worst_rel.max((a - b).abs() / scale);
            }
        }
        checked += 1;
        Ok(())
    };
    for _ in 0..20 {
        let logits: Vec<f64> = (0..10).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let p = PolicyParams::tabular_from_logits(5, 2, logits)?;
        for s in 0..5 {
            for a in 0..2 {
                check(&p, StateInput::Index(s), a)?;
            }
        }
    }
    for _ in 0..5 {
        let p = PolicyParams::LayeredNet(LayeredNet::random(vec![5, 8, 3], &mut rng)?);
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for a in 0..3 {
            check(&p, StateInput::Features(&x), a)?;
        }
    }
    let ok = worst_z <= 3.0 && worst_rel <= 1e-5;
    Ok((
        ok,
        format!(
            "REINFORCE worst |z| {worst_z:.2} over {} coordinates (1e5 episodes); log-prob gradient worst relative error {worst_rel:.1e} over {checked} cases",
            rows.len()
        ),
    ))
}

fn c6_imagined(_: &mut Suite) -> Result<(bool, String)> {
    let mut rng = rng::stream(6, "acceptance-eq5", 0);
    let mut identity_ok = true;
    let mut steps = 0;
    for _ in 0..1000 {
        let len = rng.gen_range(2..60);
        let gamma: f64 = rng.gen_range(0.0..1.0);
        let rewards: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let returns = discounted_returns(&rewards, gamma);
        for t in 1..len {
            identity_ok &= imagined_return(&rewards, &returns, t, 1, gamma)? == rewards[t - 1] + gamma * returns[t];
            steps += 1;
        }
    }
    let mut mono_ok = true;
    for _ in 0..10_000 {
        let gamma: f64 = rng.gen_range(0.0..1.0);
        let kappa = rng.gen_range(1..=20);
        let rt: f64 = rng.gen_range(-50.0..50.0);
        let (r1, r2): (f64, f64) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let (lo, hi) = (r1.min(r2), r1.max(r2));
        let a = imagined_return(&[lo, 0.0], &[0.0, rt], 1, kappa, gamma)?;
        let b = imagined_return(&[hi, 0.0], &[0.0, rt], 1, kappa, gamma)?;
        mono_ok &= a <= b;
    }
    Ok((
        identity_ok && mono_ok,
        format!(
            "kappa = 1 identity exact on 1000 trajectories ({steps} steps): {identity_ok}; monotone in r(t-1) on 10000 probes: {mono_ok}"
        ),
    ))
}

fn c7_distill(s: &mut Suite) -> Result<(bool, String)> {
    let cfg = DistillRunConfig {
        out: s.root.clone(),
        plots: true,
        ..Default::default()
    };
    let out = run_distill(&cfg)?;
    s.distill_dir = Some(cfg.dir());
    let d = &out.agents[0];
    // determinism: same seed, same windows and same partition
    let again = collect_data(
        &sqlab::distill::CoinVisual::default(),
        0,
        &cfg.distill.collect,
        rng::derive_seed(cfg.seed, "distill-collect", 0),
    )?;
    let reclustered = cluster(
        &d.embeddings,
        2,
        cfg.distill.clustering,
        rng::derive_seed(cfg.seed, "distill-cluster", 0),
    )?;
    let deterministic = again == d.samples && reclustered.assignments == d.clusters.assignments;
    let ok = out.summaries.iter().all(|s| s.purity >= 0.95) && deterministic;
    for a in &out.agents {
        note(format!(
            "agent {}: sizes {:?}, cooperation cluster {:?}, defection cluster {:?}",
            a.summary.agent,
            a.clusters.sizes(),
            a.summary.cooperation_classes,
            a.summary.defection_classes
        ));
    }
    let self_emb: Vec<Vec<f64>> = d
        .samples
        .iter()
        .map(|x| d.encoder.embed(x, EmbeddingSource::SelfBranch))
        .collect::<Result<_>>()?;
    let self_model = cluster(&self_emb, 2, ClusterMethod::Ward, 0)?;
    note(format!(
        "self-reward branch embedding instead: purity {:.3}",
        purity(&self_model.assignments, &opponent_sign_labels(&d.samples))
    ));
    Ok((
        ok,
        format!(
            "{} windows per agent; purity agent 0 {:.4}, agent 1 {:.4}; deterministic rerun: {deterministic}",
            d.samples.len(),
            out.summaries[0].purity,
            out.summaries[1].purity
        ),
    ))
}

fn c8_oracles(s: &mut Suite) -> Result<(bool, String)> {
    let dir = s.distill_dir.clone().expect("criterion 7 ran first");
    let (_, report) = eval_oracle(&dir, SoloPartner::Absent, 100, 100, 0)?;
    let frac = |agent, which| report.get(agent, which).and_then(|e| e.other_fraction);
    let mut ok = true;
    let mut parts = Vec::new();
    for agent in 0..2 {
        let (c, d) = (frac(agent, "cooperate"), frac(agent, "defect"));
        ok &= c.is_some_and(|c| c <= 0.15) && d.is_some_and(|d| d >= 0.9);
        parts.push(format!(
            "agent {agent}: cooperation oracle other-colored {}, defection oracle {}",
            c.map_or("no picks".into(), |c| format!("{:.1}%", 100.0 * c)),
            d.map_or("no picks".into(), |d| format!("{:.1}%", 100.0 * d))
        ));
    }
    let rnd = sqlab::distill::oracle::coin_solo_eval(
        &sqlab::harness::load_oracle_pairs(&dir, "coin-meta")?[0].defect,
        SoloPartner::Random,
        100,
        100,
        0,
    )?;
    note(format!(
        "agent 0 defection oracle next to a random partner: {:.1}% other-colored",
        100.0 * rnd.other_fraction().unwrap_or(f64::NAN)
    ));
    Ok((ok, parts.join("; ")))
}

fn c9_meta(s: &mut Suite) -> Result<(bool, String)> {
    let dir = s.distill_dir.clone().expect("criterion 7 ran first");
    let run = |kind| {
        let mut cfg = config("coin-meta", &[kind], 5, 2000, &s.root);
        cfg.learner.horizon = 50;
        cfg.oracles = Some(dir.clone());
        run_experiment(&cfg)
    };
    let sql = run(Sql)?;
    let sl = run(Sl)?;
    let own = |o: &ExperimentOutcome| -> Vec<f64> {
        o.summary
            .agents
            .iter()
            .map(|a| a.final_p_own_coin.map_or(f64::NAN, |c| c.mean))
            .collect()
    };
    let (a, b) = (own(&sql), own(&sl));
    let ok = a.iter().all(|&v| v >= 0.9) && b.iter().all(|&v| v <= 0.6);
    if let Some(p) = &sql.summary.meta_payoffs {
        note(format!(
            "estimated meta payoffs of agent 0 (CC, CD, DC, DD): {:.3}, {:.3}, {:.3}, {:.3}; dilemma: {}",
            p.row[0][0], p.row[0][1], p.row[1][0], p.row[1][1], p.dilemma.is_dilemma
        ));
    }
    Ok((
        ok,
        format!(
            "own-coin pick probability SQL [{:.3}, {:.3}] (need >= 0.9), SL [{:.3}, {:.3}] (need <= 0.6); 5 seeds x 2000 epochs, horizon 50",
            a[0], a[1], b[0], b[1]
        ),
    ))
}

fn braess_pc(root: &Path, agents: usize, kind: LearnerKind, seeds: u64) -> Result<Vec<f64>> {
    let mut cfg = config("braess", &[kind], seeds, 1000, root);
    cfg.agents = agents;
    cfg.experiment_id = format!("braess{agents}-{}", kind.label());
    let out = run_experiment(&cfg)?;
    Ok(out.summary.agents.iter().map(|a| a.final_p_cooperation.mean).collect())
}

fn fmt(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ")
}

fn c10_braess(s: &mut Suite) -> Result<(bool, String)> {
    let sql4 = braess_pc(&s.root, 4, Sql, 5)?;
    let sl4 = braess_pc(&s.root, 4, Sl, 5)?;
    let sql6 = braess_pc(&s.root, 6, Sql, 3)?;
    let sl6 = braess_pc(&s.root, 6, Sl, 3)?;
    let split = |c: &[f64], d: &[f64]| c.iter().all(|&v| v >= 0.9) && d.iter().all(|&v| v <= 0.1);
    let ok = split(&sql4, &sl4) && split(&sql6, &sl6);
    Ok((
        ok,
        format!(
            "late P(C) per agent: 4 SQL [{}], 4 SL [{}]; 6 SQL [{}], 6 SL [{}]",
            fmt(&sql4),
            fmt(&sl4),
            fmt(&sql6),
            fmt(&sl6)
        ),
    ))
}

fn c11_exploit(s: &mut Suite) -> Result<(bool, String)> {
    let mut cfg = config("ipd", &[Sql], 10, 500, &s.root);
    cfg.experiment_id = "ipd-exploit".into();
    let (_, report) = run_exploitability(&cfg)?;
    let rate = |p| report.row(p).map_or(f64::NAN, |r| r.defection_rate.mean);
    let (ad, ac, own) = (
        rate(Pairing::VsAlwaysDefect),
        rate(Pairing::VsAlwaysCooperate),
        rate(Pairing::SelfPlay),
    );
    note(format!("self-play defection rate {own:.3}"));
    Ok((
        ad >= 0.9 && ac >= 0.9,
        format!("SQL defection rate vs always-defect {ad:.3}, vs always-cooperate {ac:.3} (10 seeds x 500 epochs)"),
    ))
}

fn c12_zsweep(s: &mut Suite) -> Result<(bool, String)> {
    let mut base = config("ipd", &[Sql], 5, 1000, &s.root);
    base.experiment_id = "ipd-z-sweep".into();
    let (_, report) = run_sweep(
        &base,
        &SweepGrid {
            z: vec![1, 3, 10],
            ..Default::default()
        },
    )?;
    let conv: Vec<Option<usize>> = report.points.iter().map(|p| p.convergence_epoch).collect();
    let key = |c: Option<usize>| c.unwrap_or(usize::MAX);
    let non_increasing = conv.windows(2).all(|w| key(w[0]) >= key(w[1]));
    let z1_fails = conv[0].is_none();
    // with no grid point converging the ordering is empty, not evidence
    let informative = conv[2].is_some();
    let parts: Vec<String> = report
        .points
        .iter()
        .map(|p| {
            format!(
                "z={} converged at {} (final NDR {:.3})",
                p.z,
                p.convergence_epoch.map_or("never".into(), |e| e.to_string()),
                p.final_ndr
            )
        })
        .collect();
    let mut detail = parts.join("; ");
    if !informative {
        detail.push_str("; z=10 never reached the target, so the ordering check is vacuous");
    }
    Ok((non_increasing && z1_fails && informative, detail))
}

fn c13_determinism(s: &mut Suite) -> Result<(bool, String)> {
    let mut same = true;
    let mut checked = Vec::new();
    for (game, learners) in [("ipd", vec![Sql, AlwaysCooperate]), ("braess", vec![Sl])] {
        let mut csv = Vec::new();
        for (i, exec) in [Execution::Parallel, Execution::Sequential, Execution::Parallel].into_iter().enumerate() {
            let mut cfg = config(game, &learners, 3, 60, &s.root.join(format!("determinism{i}")));
            cfg.execution = exec;
            run_experiment(&cfg)?;
            csv.push(std::fs::read(cfg.dir().join("results.csv")).map_err(|e| sqlab::Error::io(cfg.dir(), e))?);
        }
        same &= csv.windows(2).all(|w| w[0] == w[1]);
        checked.push(format!("{game} ({} bytes)", csv[0].len()));
    }
    Ok((same, format!("three reruns byte-identical for {}", checked.join(", "))))
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored
    let keep = std::env::var_os("SQLAB_ACCEPTANCE_OUT").map(PathBuf::from);
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = keep.unwrap_or_else(|| tmp.path().to_path_buf());
    println!("acceptance runs under {}", root.display());
    let mut suite = Suite {
        root,
        verdicts: Vec::new(),
        ipd_sql: None,
        distill_dir: None,
    };
    type Check = fn(&mut Suite) -> Result<(bool, String)>;
    let checks: [(u32, &str, Check); 13] = [
        (5, "Estimator fidelity", c5_estimator),
        (6, "Imagined-return properties", c6_imagined),
        (13, "Determinism", c13_determinism),
        (1, "IPD convergence", c1_ipd),
        (4, "Lemma suite", c4_lemmas),
        (2, "IMP convergence", c2_imp),
        (3, "Chicken Game", c3_chicken),
        (11, "Exploitability", c11_exploit),
        (12, "z-sweep", c12_zsweep),
        (10, "Braess", c10_braess),
        (7, "GameDistill clustering", c7_distill),
        (8, "Oracle quality", c8_oracles),
        (9, "Reduced Coin Game", c9_meta),
    ];
    for (id, name, f) in checks {
        let t = Instant::now();
        let r = f(&mut suite);
        suite.record(id, name, t, r);
    }
    suite.verdicts.sort_by_key(|v| v.id);
    println!("\nsummary");
    for v in &suite.verdicts {
        println!("[{}] {:>2}. {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.name, v.detail);
    }
    let failed = suite.verdicts.iter().filter(|v| !v.pass).count();
    println!("{}/{} criteria passed", suite.verdicts.len() - failed, suite.verdicts.len());
    if failed > 0 && std::env::var_os("SQLAB_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
