//! CSV and JSON files written by `run` and `grid`, and their readers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mnl_lab::analysis::check_elliptical_potential;
use mnl_lab::confidence::elliptical_potential_rows;
use mnl_lab::experiment::{ExperimentConfig, ExperimentOutcome, GridOutcome, RunOutput};
use mnl_lab::simulator::RunTrace;
use mnl_lab::{Error, Result};
use serde_json::json;

pub const TRACE_HEADER: &str = "round,regret_inst,regret_cum,assortment,chosen,beta_t,optimism_frac";
pub const AUDIT_HEADER: &str = "round,min_eig,inv_drift,beta_t,lhs_potential,rhs_potential";

/// File-name-safe form of a policy label.
pub fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

pub fn trace_path(dir: &Path, label: &str, seed: u64) -> PathBuf {
    dir.join(format!("trace_{}_{}.csv", sanitize(label), seed))
}

pub fn audit_path(dir: &Path, label: &str, seed: u64) -> PathBuf {
    dir.join(format!("audit_{}_{}.csv", sanitize(label), seed))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn trace_csv(trace: &RunTrace) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in &trace.rounds {
        let items: Vec<String> = r.assortment.iter().map(usize::to_string).collect();
        let chosen = r.chosen.map_or(0, |i| i + 1);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.round,
            r.regret_inst,
            r.regret_cum,
            items.join(" "),
            chosen,
            opt(r.beta),
            opt(r.optimism_frac)
        );
    }
    s
}

/// One line of the per-run audit log.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub round: usize,
    pub min_eig: Option<f64>,
    pub inv_drift: Option<f64>,
    pub beta: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

/// Audit rows for the optimistic rounds of an ONL-MNL trace; `None` when
/// the trace carries no potentials.
pub fn audit_rows(cfg: &ExperimentConfig, run: &RunOutput) -> Result<Option<Vec<AuditRow>>> {
    let Some(spec) = cfg.policies.iter().find(|p| p.label() == run.label && p.name == "onl-mnl") else {
        return Ok(None);
    };
    let schedule = cfg.onl_mnl_config(spec)?.schedule();
    let potentials = run.trace.potentials();
    let Some(c_g) = run.trace.max_grad_norm() else {
        return Ok(None);
    };
    let bounds = elliptical_potential_rows(&potentials, &schedule, schedule.lambda(), c_g);
    let phase_two = run.trace.rounds.iter().filter(|r| r.potential.is_some());
    Ok(Some(
        phase_two
            .zip(bounds)
            .map(|(r, b)| AuditRow {
                round: r.round,
                min_eig: r.min_eig,
                inv_drift: r.inv_drift,
                beta: r.beta,
                lhs: b.lhs,
                rhs: b.rhs,
            })
            .collect(),
    ))
}

pub fn audit_csv(rows: &[AuditRow]) -> String {
    let mut s = String::from(AUDIT_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.round,
            opt(r.min_eig),
            opt(r.inv_drift),
            opt(r.beta),
            r.lhs,
            r.rhs
        );
    }
    s
}

fn parse_opt(field: &str, path: &Path, line: usize) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field.parse().map(Some).map_err(|_| Error::MalformedCsv {
        row: line,
        column: 0,
        message: format!("{}: not a number `{field}`", path.display()),
    })
}

fn rows_of<'a>(text: &'a str, header: &str, path: &Path) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)>> {
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(Error::MalformedCsv {
            row: 1,
            column: 1,
            message: format!("{}: unexpected header", path.display()),
        });
    }
    Ok(lines.enumerate().map(|(i, l)| (i + 2, l.split(',').collect())))
}

pub fn read_audit_csv(path: &Path) -> Result<Vec<AuditRow>> {
    let text = std::fs::read_to_string(path)?;
    let rows: Result<Vec<_>> = rows_of(&text, AUDIT_HEADER, path)?
        .map(|(line, f)| {
            if f.len() != 6 {
                return Err(Error::MalformedCsv {
                    row: line,
                    column: f.len() + 1,
                    message: format!("{}: expected 6 columns", path.display()),
                });
            }
            let num = |s: &str| parse_opt(s, path, line)?.ok_or_else(|| Error::MissingDiagnostics(format!("{}: row {line}", path.display())));
            Ok(AuditRow {
                round: num(f[0])? as usize,
                min_eig: parse_opt(f[1], path, line)?,
                inv_drift: parse_opt(f[2], path, line)?,
                beta: parse_opt(f[3], path, line)?,
                lhs: num(f[4])?,
                rhs: num(f[5])?,
            })
        })
        .collect();
    rows
}

/// `(regret_cum, assortment size, optimism_frac)` per round of a trace file.
pub fn read_trace_csv(path: &Path) -> Result<Vec<(f64, usize, Option<f64>)>> {
    let text = std::fs::read_to_string(path)?;
    let rows: Result<Vec<_>> = rows_of(&text, TRACE_HEADER, path)?
        .map(|(line, f)| {
            if f.len() != 7 {
                return Err(Error::MalformedCsv {
                    row: line,
                    column: f.len() + 1,
                    message: format!("{}: expected 7 columns", path.display()),
                });
            }
            let cum = parse_opt(f[2], path, line)?.unwrap_or(f64::NAN);
            Ok((cum, f[3].split_whitespace().count(), parse_opt(f[6], path, line)?))
        })
        .collect();
    rows
}

pub fn write_run(dir: &Path, cfg: &ExperimentConfig, outcome: &ExperimentOutcome) -> Result<()> {
    let config_echo = serde_json::to_value(cfg)?;
    for run in &outcome.runs {
        std::fs::write(trace_path(dir, &run.label, run.trace.seed), trace_csv(&run.trace))?;
        let mut sidecar = json!({
            "policy": run.label,
            "seed": run.trace.seed,
            "rounds": run.trace.rounds.len(),
            "final_regret": run.trace.final_regret(),
            "wall_clock_secs": run.wall_clock_secs,
            "optimism_fraction": run.trace.optimism_fraction(),
            "config": config_echo,
        });
        if let Some(rows) = audit_rows(cfg, run)? {
            std::fs::write(audit_path(dir, &run.label, run.trace.seed), audit_csv(&rows))?;
            let spec = cfg.policies.iter().find(|p| p.label() == run.label).expect("label from config");
            let schedule = cfg.onl_mnl_config(spec)?.schedule();
            let c_g = run.trace.max_grad_norm().unwrap_or(0.0);
            let check = check_elliptical_potential(&run.trace.potentials(), &schedule, schedule.lambda(), c_g);
            sidecar["schedule"] = json!({
                "t0": schedule.t0,
                "lambda": schedule.lambda(),
                "d_w": schedule.d_w,
                "c_g": c_g,
                "potential_bound_holds": check.pass,
            });
        }
        let sidecar_path = trace_path(dir, &run.label, run.trace.seed).with_extension("json");
        std::fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
    }

    let mut agg = String::from("policy,round,mean_regret,std_regret\n");
    for p in &outcome.aggregate.policies {
        for (t, (m, s)) in p.mean.iter().zip(&p.std).enumerate() {
            let _ = writeln!(agg, "{},{},{},{}", p.label, t + 1, m, s);
        }
    }
    std::fs::write(dir.join("aggregate.csv"), agg)?;
    std::fs::write(dir.join("aggregate.json"), serde_json::to_string_pretty(&outcome.aggregate)?)?;
    Ok(())
}

pub fn write_grid(path: &Path, outcome: &GridOutcome) -> Result<()> {
    let mut s = String::from("c_lambda,c_beta,mean_final_regret,std_final_regret\n");
    for r in &outcome.rows {
        let _ = writeln!(s, "{},{},{},{}", r.c_lambda, r.c_beta, r.mean_final_regret, r.std_final_regret);
    }
    std::fs::write(path, s)?;
    Ok(())
}
