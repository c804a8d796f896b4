//! Post-hoc checks over a finished run directory.
//!
//! Everything is recomputed from the files `run` wrote: the elliptical
//! potential bound from the audit log and the sidecar's `c_g`, the Gram
//! inverse drift from the audited rounds, and the reverse-Lipschitz
//! inequality by fresh fuzzing.

use std::fmt::Write as _;
use std::path::Path;

use mnl_lab::analysis::{check_elliptical_potential, check_inverse_drift, check_reverse_lipschitz, LemmaCheckResult};
use mnl_lab::experiment::ExperimentConfig;
use mnl_lab::{Error, Result};
use serde::Serialize;

use crate::output::{audit_path, read_audit_csv, read_trace_csv, trace_path};

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub checks: Vec<CheckLine>,
    /// `(policy, seed, fraction)`; informational.
    pub optimism: Vec<(String, u64, f64)>,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# Audit\n\n| check | result | detail |\n|---|---|---|\n");
        for c in &self.checks {
            let _ = writeln!(s, "| {} | {} | {} |", c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail);
        }
        if !self.optimism.is_empty() {
            s.push_str("\n## Optimism rate\n\n| policy | seed | fraction |\n|---|---|---|\n");
            for (p, seed, f) in &self.optimism {
                let _ = writeln!(s, "| {p} | {seed} | {f:.4} |");
            }
        }
        s
    }
}

fn line(name: String, r: &LemmaCheckResult) -> CheckLine {
    let detail = match (&r.witness, r.pass) {
        (Some((_, w)), false) => w.clone(),
        _ => format!(
            "{} instances, worst margin {:.3e}",
            r.margins.len(),
            r.worst_margin().unwrap_or(f64::INFINITY)
        ),
    };
    CheckLine { name, pass: r.pass, detail }
}

fn sidecar_c_g(path: &Path) -> Result<f64> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| Error::MissingDiagnostics(format!("{} not found", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    v.pointer("/schedule/c_g")
        .and_then(serde_json::Value::as_f64)
        .ok_or_else(|| Error::MissingDiagnostics(format!("{}: schedule.c_g", path.display())))
}

pub fn run_audit(cfg: &ExperimentConfig, dir: &Path) -> Result<Report> {
    let mut checks = Vec::new();
    let mut optimism = Vec::new();
    for spec in &cfg.policies {
        let label = spec.label();
        for &seed in &cfg.seeds {
            let trace_file = trace_path(dir, label, seed);
            if !trace_file.exists() {
                return Err(Error::MissingDiagnostics(format!("{} not found", trace_file.display())));
            }
            let trace = read_trace_csv(&trace_file)?;
            let fractions: Vec<f64> = trace.iter().filter_map(|r| r.2).collect();
            if !fractions.is_empty() {
                optimism.push((label.to_string(), seed, fractions.iter().sum::<f64>() / fractions.len() as f64));
            }
            if spec.name != "onl-mnl" {
                continue;
            }
            let audit_file = audit_path(dir, label, seed);
            if !audit_file.exists() {
                return Err(Error::MissingDiagnostics(format!("{} not found", audit_file.display())));
            }
            let rows = read_audit_csv(&audit_file)?;
            let schedule = cfg.onl_mnl_config(spec)?.schedule();
            let c_g = sidecar_c_g(&trace_file.with_extension("json"))?;
            let mut prev = 0.0;
            let potentials: Vec<f64> = rows
                .iter()
                .map(|r| {
                    let x = r.lhs - prev;
                    prev = r.lhs;
                    x
                })
                .collect();
            let ep = check_elliptical_potential(&potentials, &schedule, schedule.lambda(), c_g);
            checks.push(line(format!("elliptical potential [{label}, seed {seed}]"), &ep));

            let drift: Vec<(usize, f64)> = rows.iter().filter_map(|r| r.inv_drift.map(|d| (r.round, d))).collect();
            let dr = check_inverse_drift(&drift, cfg.audit.drift_tolerance);
            checks.push(line(format!("inverse drift [{label}, seed {seed}]"), &dr));
            let eig_ok = rows.iter().filter_map(|r| r.min_eig).all(|e| e >= schedule.lambda() * (1.0 - 1e-9));
            checks.push(CheckLine {
                name: format!("min eigenvalue >= lambda [{label}, seed {seed}]"),
                pass: eig_ok,
                detail: format!("{} audited rounds", drift.len()),
            });
        }
    }
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    for &dim in &cfg.audit.reverse_lipschitz_dims {
        for &cap in &cfg.audit.reverse_lipschitz_caps {
            let r = check_reverse_lipschitz(dim, cap, cfg.audit.reverse_lipschitz_pairs, seed);
            checks.push(line(format!("reverse Lipschitz [dim {dim}, cap {cap}]"), &r));
        }
    }
    Ok(Report { checks, optimism })
}
