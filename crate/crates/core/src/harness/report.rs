use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::harness::distill::OracleEvalReport;
use crate::harness::experiment::{ExperimentSummary, ExploitReport, SweepReport};
use crate::harness::write_atomic;

/// Published numbers for a baseline this crate does not implement. They are
/// printed for comparison only and are never produced by a run.
pub const CITED_CONSTANTS: [(&str, &str, f64); 2] = [
    ("Lola-PG", "IPD final NDR", -1.2),
    ("Lola-PG", "Coin Game own-coin pick rate", 0.8),
];

fn find(root: &Path, name: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find(&p, name, out)?;
        } else if p.file_name().is_some_and(|f| f == name) {
            out.push(p);
        }
    }
    Ok(())
}

fn load_all<T: DeserializeOwned>(root: &Path, name: &str) -> Result<Vec<(PathBuf, T)>> {
    let mut paths = Vec::new();
    find(root, name, &mut paths)?;
    paths
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let v = serde_json::from_str(&text)?;
            Ok((p, v))
        })
        .collect()
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

/// Summarize every run found under `root` into `root/report.md`.
pub fn write_report(root: &Path) -> Result<(PathBuf, String)> {
    let mut md = String::from("# sqlab report\n\n");
    let rel = |p: &Path| p.parent().and_then(|d| d.strip_prefix(root).ok()).map_or_else(String::new, |d| d.display().to_string());

    let experiments: Vec<(PathBuf, ExperimentSummary)> = load_all(root, "summary.json")?;
    if !experiments.is_empty() {
        md.push_str("## Training runs\n\nFinal-window means across seeds (± population std).\n\n");
        md.push_str("| run | game | agent | learner | seeds | epochs | NDR | P(C) | own coin | converged at |\n");
        md.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
        for (p, s) in &experiments {
            for a in &s.agents {
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} | {} | {} | {:.3} ± {:.3} | {:.3} ± {:.3} | {} | {} |",
                    rel(p),
                    s.game,
                    a.agent,
                    a.learner.label(),
                    s.seeds.len(),
                    s.epochs,
                    a.final_ndr.mean,
                    a.final_ndr.std,
                    a.final_p_cooperation.mean,
                    a.final_p_cooperation.std,
                    opt(a.final_p_own_coin.map(|c| format!("{:.3}", c.mean))),
                    opt(a.convergence_epoch)
                );
            }
        }
        md.push('\n');
    }

    for (p, s) in load_all::<SweepReport>(root, "sweep.json")? {
        let _ = writeln!(md, "## Sweep `{}` ({}, {} epochs)\n", rel(&p), s.game, s.epochs);
        md.push_str("| z | beta | gamma | converged at | final NDR | final P(C) |\n|---|---|---|---|---|---|\n");
        for pt in &s.points {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {:.3} | {:.3} |",
                pt.z,
                pt.beta,
                pt.gamma,
                opt(pt.convergence_epoch),
                pt.final_ndr,
                pt.final_p_cooperation
            );
        }
        md.push('\n');
    }

    for (p, e) in load_all::<ExploitReport>(root, "exploit.json")? {
        let _ = writeln!(md, "## Exploitability `{}` ({})\n", rel(&p), e.game);
        md.push_str("| pairing | defection rate | final NDR |\n|---|---|---|\n");
        for r in &e.rows {
            let _ = writeln!(
                md,
                "| {:?} | {:.3} ± {:.3} | {:.3} |",
                r.pairing, r.defection_rate.mean, r.defection_rate.std, r.final_ndr.mean
            );
        }
        md.push('\n');
    }

    for (p, o) in load_all::<OracleEvalReport>(root, "oracle_eval.json")? {
        let _ = writeln!(md, "## Oracle evaluation `{}` ({}, {:?} partner)\n", rel(&p), o.game, o.partner);
        md.push_str("| agent | oracle | other-colored picks | stag | hare |\n|---|---|---|---|---|\n");
        for e in &o.evals {
            let stag = |k: &str| opt(e.stag.as_ref().map(|s| format!("{:.3}", s.reached.get(k).copied().unwrap_or(0) as f64 / s.episodes.max(1) as f64)));
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} |",
                e.agent,
                e.oracle,
                opt(e.other_fraction.map(|f| format!("{f:.3}"))),
                stag("stag"),
                stag("hare")
            );
        }
        md.push('\n');
    }

    md.push_str("## Cited constants (not reproduced)\n\n");
    md.push_str("These values are quoted from the literature for comparison. No run in this report produced them.\n\n");
    md.push_str("| method | quantity | cited value |\n|---|---|---|\n");
    for (method, what, v) in CITED_CONSTANTS {
        let _ = writeln!(md, "| {method} (cited) | {what} | {v} |");
    }
    let path = root.join("report.md");
    write_atomic(&path, md.as_bytes())?;
    Ok((path, md))
}
