//! Executable checks of the structural lemmas, shared by the test suite and
//! the `audit` command.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::choice::{choice_probabilities, mnl_map, reverse_lipschitz_constant, sample_choice};
use crate::confidence::{elliptical_potential_rows, Schedule};
use crate::error::Result;
use crate::estimation::{fit_pilot, OptimizerConfig, PilotLoss};
use crate::model::{uniform_assortment_sample, ChoiceRecord, ContextSet, ParamVector};
use crate::rng::{substream, Stream};
use crate::simulator::RunTrace;
use crate::utility::{ModelKind, UtilityModel};

/// Outcome of one lemma check. A margin is `lhs - rhs` oriented so that the
/// inequality holds iff `margin >= -tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheckResult {
    pub lemma: String,
    pub margins: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
    /// Index of the worst instance and a description of it.
    pub witness: Option<(usize, String)>,
}

impl LemmaCheckResult {
    fn from_margins(lemma: &str, margins: Vec<f64>, tolerance: f64, describe: impl Fn(usize) -> String) -> Self {
        let worst = margins
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i);
        let pass = margins.iter().all(|&m| m >= -tolerance);
        Self {
            lemma: lemma.to_string(),
            tolerance,
            pass,
            witness: worst.map(|i| (i, describe(i))),
            margins,
        }
    }

    pub fn worst_margin(&self) -> Option<f64> {
        self.margins.iter().copied().reduce(f64::min)
    }
}

fn sample_ball<R: Rng + ?Sized>(dim: usize, cap: f64, rng: &mut R) -> Vec<f64> {
    let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let radius = cap * rng.random::<f64>().powf(1.0 / dim as f64);
    dir.into_iter().map(|v| v * radius / norm).collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Default grid resolution for the reverse-Lipschitz constant at a dimension.
pub fn reverse_lipschitz_resolution(dim: usize) -> usize {
    match dim {
        0..=1 => 2001,
        2 => 201,
        3 => 41,
        4 => 17,
        _ => 9,
    }
}

/// Checks `||h(a) - h(b)|| >= kappa0 ||a - b||` on random pairs from the
/// ball of radius `cap`, with `kappa0` computed on the ball.
pub fn check_reverse_lipschitz(dim: usize, cap: f64, n_pairs: usize, seed: u64) -> LemmaCheckResult {
    let kappa0 = reverse_lipschitz_constant(dim, cap, reverse_lipschitz_resolution(dim));
    check_reverse_lipschitz_with(dim, cap, n_pairs, seed, kappa0)
}

/// Same check with an explicit constant, so a deliberately wrong one can be
/// shown to fail.
pub fn check_reverse_lipschitz_with(dim: usize, cap: f64, n_pairs: usize, seed: u64, kappa0: f64) -> LemmaCheckResult {
    let mut rng = substream(seed, Stream::Audit, dim as u32);
    let mut pairs = Vec::with_capacity(n_pairs);
    let margins = (0..n_pairs)
        .map(|_| {
            let a = sample_ball(dim, cap, &mut rng);
            let b = sample_ball(dim, cap, &mut rng);
            let m = distance(&mnl_map(&a), &mnl_map(&b)) - kappa0 * distance(&a, &b);
            pairs.push((a, b));
            m
        })
        .collect();
    LemmaCheckResult::from_margins(
        &format!("reverse-lipschitz(dim={dim}, cap={cap}, kappa0={kappa0:.6e})"),
        margins,
        1e-12,
        |i| format!("a = {:?}, b = {:?}", pairs[i].0, pairs[i].1),
    )
}

/// Elliptical potential bound at every prefix of a run's potentials.
pub fn check_elliptical_potential(potentials: &[f64], schedule: &Schedule, lambda: f64, c_g: f64) -> LemmaCheckResult {
    let rows = elliptical_potential_rows(potentials, schedule, lambda, c_g);
    let margins = rows.iter().map(|r| r.rhs - r.lhs).collect();
    LemmaCheckResult::from_margins("elliptical-potential", margins, 1e-9, |i| {
        format!("round {}: lhs {:.6}, rhs {:.6}", rows[i].round, rows[i].lhs, rows[i].rhs)
    })
}

/// Flags the first audited round whose inverse drift exceeds `tolerance`.
/// `rows` holds `(round, drift)` pairs.
pub fn check_inverse_drift(rows: &[(usize, f64)], tolerance: f64) -> LemmaCheckResult {
    let margins: Vec<f64> = rows
        .iter()
        .map(|&(_, d)| if d.is_finite() { tolerance - d } else { f64::NEG_INFINITY })
        .collect();
    let mut result = LemmaCheckResult::from_margins("gram-inverse-drift", margins, 0.0, |i| {
        format!("round {}: drift {:.3e}", rows[i].0, rows[i].1)
    });
    if let Some(first) = result.margins.iter().position(|&m| m < 0.0) {
        result.witness = Some((first, format!("first bad round {}: drift {:.3e}", rows[first].0, rows[first].1)));
    }
    result
}

/// Learned model class used by the pilot-convergence check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotClass {
    TwoLayer { hidden: usize },
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotConvergenceConfig {
    pub dim: usize,
    pub class: PilotClass,
    pub n_items: usize,
    pub capacity: usize,
    pub t0_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub eval_samples: usize,
    pub optimizer: OptimizerConfig,
    /// Initialize every fit at the truth instead of a random point.
    pub truth_init: bool,
}

impl Default for PilotConvergenceConfig {
    fn default() -> Self {
        Self {
            dim: 3,
            class: PilotClass::TwoLayer { hidden: 3 },
            n_items: 100,
            capacity: 5,
            t0_grid: vec![100, 200, 400, 800],
            seeds: (0..10).collect(),
            eval_samples: 10_000,
            optimizer: OptimizerConfig {
                learning_rate: 1e-2,
                iterations: 3000,
                restarts: 2,
                ..OptimizerConfig::default()
            },
            truth_init: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotErrorRow {
    pub seed: u64,
    pub t0: usize,
    pub function_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotConvergenceTable {
    pub rows: Vec<PilotErrorRow>,
    /// Per consecutive grid pair `(t0, 2 t0)`: median over seeds of the error ratio.
    pub median_ratios: Vec<(usize, usize, f64)>,
}

impl PilotConvergenceTable {
    pub fn passes(&self, threshold: f64) -> bool {
        !self.median_ratios.is_empty() && self.median_ratios.iter().all(|r| r.2 <= threshold)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn gaussian_context<R: Rng + ?Sized>(n: usize, dim: usize, round: usize, rng: &mut R) -> ContextSet {
    let features = (0..n * dim).map(|_| StandardNormal.sample(rng)).collect();
    ContextSet::from_flat(features, dim, round).expect("well-formed context")
}

/// Squared utility error summed over the offered items, averaged over fresh
/// Gaussian contexts and uniform assortments.
pub fn function_error(
    model: &dyn UtilityModel,
    estimate: &ParamVector,
    truth: &ParamVector,
    n_items: usize,
    capacity: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = substream(seed, Stream::Audit, 1000);
    let dim = model.input_dim();
    let mut total = 0.0;
    for s in 0..samples {
        let ctx = gaussian_context(n_items, dim, s, &mut rng);
        let a = uniform_assortment_sample(n_items, capacity, &mut rng)?;
        for &i in a.items() {
            let x = ctx.item(i);
            total += (model.eval(estimate.as_slice(), x) - model.eval(truth.as_slice(), x)).powi(2);
        }
    }
    Ok(total / samples as f64)
}

/// Fits the pilot estimator on uniform-exploration data of each length in
/// the grid and measures its function error. Datasets for one seed are
/// nested prefixes of a single stream.
pub fn check_pilot_convergence(cfg: &PilotConvergenceConfig) -> Result<PilotConvergenceTable> {
    let model: Arc<dyn UtilityModel> = match cfg.class {
        PilotClass::TwoLayer { hidden } => ModelKind::TwoLayer {
            input_dim: cfg.dim,
            hidden,
        },
        PilotClass::Linear => ModelKind::Linear { dim: cfg.dim },
    }
    .build();
    let max_t0 = cfg.t0_grid.iter().copied().max().unwrap_or(0);
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let mut truth_rng = substream(seed, Stream::Truth, 7);
        let truth = ParamVector((0..model.param_dim()).map(|_| truth_rng.random_range(-1.0..=1.0)).collect());
        let mut data_rng = substream(seed, Stream::Contexts, 7);
        let mut records = Vec::with_capacity(max_t0);
        for t in 0..max_t0 {
            let ctx = Arc::new(gaussian_context(cfg.n_items, cfg.dim, t + 1, &mut data_rng));
            let a = uniform_assortment_sample(cfg.n_items, cfg.capacity, &mut data_rng)?;
            let u: Vec<f64> = a.items().iter().map(|&i| model.eval(truth.as_slice(), ctx.item(i))).collect();
            let pos = sample_choice(&choice_probabilities(&u)?, &mut data_rng);
            let chosen = pos.map(|p| a.items()[p]);
            records.push(ChoiceRecord::new(ctx, a, chosen)?);
        }
        for &t0 in &cfg.t0_grid {
            let mut init_rng = substream(seed, Stream::Init, t0 as u32);
            let init = if cfg.truth_init {
                truth.clone()
            } else {
                model.init_params(&mut init_rng)
            };
            let loss = PilotLoss::new(&records[..t0], model.as_ref());
            let fit = fit_pilot(&loss, &init, &cfg.optimizer, &mut init_rng)?;
            let err = function_error(
                model.as_ref(),
                &fit.params,
                &truth,
                cfg.n_items,
                cfg.capacity,
                cfg.eval_samples,
                seed,
            )?;
            rows.push(PilotErrorRow {
                seed,
                t0,
                function_error: err,
            });
        }
    }
    let mut grid = cfg.t0_grid.clone();
    grid.sort_unstable();
    let median_ratios = grid
        .windows(2)
        .map(|w| {
            let mut ratios: Vec<f64> = cfg
                .seeds
                .iter()
                .map(|&s| {
                    let at = |t0| {
                        rows.iter()
                            .find(|r| r.seed == s && r.t0 == t0)
                            .map_or(f64::NAN, |r| r.function_error)
                    };
                    at(w[1]) / at(w[0])
                })
                .collect();
            (w[0], w[1], median(&mut ratios))
        })
        .collect();
    Ok(PilotConvergenceTable { rows, median_ratios })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimismSummary {
    /// `(policy, seed, fraction)` per run that reported optimistic utilities.
    pub per_run: Vec<(String, u64, f64)>,
    pub mean: Option<f64>,
}

/// Fraction of offered items whose optimistic utility dominated the truth,
/// per run. Informational only.
pub fn check_optimism_rate(traces: &[RunTrace]) -> OptimismSummary {
    let per_run: Vec<(String, u64, f64)> = traces
        .iter()
        .filter_map(|t| t.optimism_fraction().map(|f| (t.policy.clone(), t.seed, f)))
        .collect();
    let mean = (!per_run.is_empty()).then(|| per_run.iter().map(|r| r.2).sum::<f64>() / per_run.len() as f64);
    OptimismSummary { per_run, mean }
}
