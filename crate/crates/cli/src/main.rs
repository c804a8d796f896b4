//! `mnl-lab`: run experiment sweeps, audit their traces, and grid-search the
//! ONL-MNL schedule constants.

mod audit;
mod output;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use mnl_lab::experiment::{grid_search, run_experiment, ExperimentConfig};
use mnl_lab::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "mnl-lab", version, about = "Contextual MNL bandit experiments")]
struct Cli {
    /// Worker threads for the (policy, seed) pool.
    #[arg(long, global = true, env = "MNL_LAB_THREADS")]
    threads: Option<usize>,
    /// Output directory (overrides the config's `output`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override, `dotted.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seeds `a..b` (end exclusive), replacing the config's list.
    #[arg(long, global = true, value_name = "A..B")]
    seed_range: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every (policy, seed) pair and write traces, aggregates and a plot.
    Run { config: PathBuf },
    /// Check a finished run directory and write `audit.md` / `audit.json`.
    Audit { config: PathBuf, dir: PathBuf },
    /// Grid-search `c_lambda` x `c_beta` for the ONL-MNL policy.
    Grid { config: PathBuf },
}

fn parse_seed_range(spec: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("seed range `{spec}` must look like a..b with a < b"));
    let (a, b) = spec.split_once("..").ok_or_else(bad)?;
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    if a >= b {
        return Err(bad());
    }
    Ok((a..b).collect())
}

fn load_config(cli: &Cli, path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path, &cli.overrides)?;
    if let Some(range) = &cli.seed_range {
        cfg.seeds = parse_seed_range(range)?;
        cfg.grid.seeds = cfg.seeds.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(if cfg.name.is_empty() { "run" } else { &cfg.name }))
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = load_config(cli, config)?;
            let dir = out_dir(cli, &cfg);
            std::fs::create_dir_all(&dir)?;
            let start = Instant::now();
            let outcome = run_experiment(&cfg, cli.threads)?;
            output::write_run(&dir, &cfg, &outcome)?;
            std::fs::write(dir.join("regret.svg"), plot::regret_svg(&outcome.aggregate))?;
            for p in &outcome.aggregate.policies {
                println!("{:<20} final regret {:>10.4} ± {:.4}", p.label, p.final_mean, p.final_std);
            }
            println!(
                "{} runs in {:.1}s -> {}",
                outcome.runs.len(),
                start.elapsed().as_secs_f64(),
                dir.display()
            );
            Ok(())
        }
        Command::Audit { config, dir } => {
            let cfg = load_config(cli, config)?;
            let report = audit::run_audit(&cfg, dir)?;
            let target = cli.out.clone().unwrap_or_else(|| dir.clone());
            std::fs::create_dir_all(&target)?;
            std::fs::write(target.join("audit.md"), report.to_markdown())?;
            std::fs::write(target.join("audit.json"), serde_json::to_string_pretty(&report)?)?;
            for check in &report.checks {
                println!("{} {}", if check.pass { "PASS" } else { "FAIL" }, check.name);
            }
            if report.all_pass() {
                Ok(())
            } else {
                Err(Error::Config("audit found failing checks".into()))
            }
        }
        Command::Grid { config } => {
            let cfg = load_config(cli, config)?;
            let dir = out_dir(cli, &cfg);
            std::fs::create_dir_all(&dir)?;
            let outcome = grid_search(&cfg, cli.threads)?;
            output::write_grid(&dir.join("grid.csv"), &outcome)?;
            println!(
                "best c_lambda = {}, c_beta = {} (mean final regret {:.4})",
                outcome.best.c_lambda, outcome.best.c_beta, outcome.best.mean_final_regret
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seed_range("0..3").unwrap(), vec![0, 1, 2]);
        assert!(parse_seed_range("3..3").is_err());
        assert!(parse_seed_range("x..3").is_err());
    }
}
