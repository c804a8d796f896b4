//! Synthetic environments, the interaction loop and regret accounting.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::assortment::oracle_optimal_reward;
use crate::choice::{choice_probabilities, expected_reward_unchecked, sample_choice};
use crate::error::{Error, Result};
use crate::model::{Assortment, ChoiceRecord, ContextSet, ParamVector, RevenueVector};
use crate::policy::Policy;
use crate::rng::{stream, Stream, StreamRng};
use crate::utility::{ModelKind, UtilityModel};

/// Precomputed item features loaded from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    features: Vec<f64>,
    pub dim: usize,
    pub labels: Option<Vec<f64>>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Parses `id,f0,...,f{d-1}[,label]`.
pub fn parse_feature_csv(text: &str) -> Result<FeatureTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::MalformedCsv {
        row: 1,
        column: 1,
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"id") {
        return Err(Error::MalformedCsv {
            row: 1,
            column: 1,
            message: "first column must be `id`".into(),
        });
    }
    let has_label = cols.last() == Some(&"label");
    let dim = cols.len() - 1 - usize::from(has_label);
    if dim == 0 {
        return Err(Error::MalformedCsv {
            row: 1,
            column: 2,
            message: "no feature columns".into(),
        });
    }
    for (j, c) in cols[1..1 + dim].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(Error::MalformedCsv {
                row: 1,
                column: j + 2,
                message: format!("expected header `f{j}`, found `{c}`"),
            });
        }
    }
    let mut ids = Vec::new();
    let mut features = Vec::new();
    let mut labels = has_label.then(Vec::new);
    for (line_no, line) in lines {
        let row = line_no + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::MalformedCsv {
                row,
                column: fields.len().min(cols.len()) + 1,
                message: format!("expected {} columns, found {}", cols.len(), fields.len()),
            });
        }
        ids.push(fields[0].to_string());
        for (j, f) in fields[1..1 + dim].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| Error::MalformedCsv {
                row,
                column: j + 2,
                message: format!("not a number: `{f}`"),
            })?;
            features.push(v);
        }
        if let Some(labels) = labels.as_mut() {
            let f = fields[cols.len() - 1];
            labels.push(f.parse().map_err(|_| Error::MalformedCsv {
                row,
                column: cols.len(),
                message: format!("not a number: `{f}`"),
            })?);
        }
    }
    if ids.is_empty() {
        return Err(Error::MalformedCsv {
            row: 2,
            column: 1,
            message: "no data rows".into(),
        });
    }
    Ok(FeatureTable {
        ids,
        features,
        dim,
        labels,
    })
}

pub fn load_feature_file(path: &Path) -> Result<FeatureTable> {
    parse_feature_csv(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone)]
pub enum ContextSource {
    Gaussian,
    UniformBox { low: f64, high: f64 },
    Features(Arc<FeatureTable>),
}

/// A fixed true utility `f(w*, .)` under some model class.
#[derive(Debug, Clone)]
pub struct Truth {
    pub model: Arc<dyn UtilityModel>,
    pub params: ParamVector,
}

impl Truth {
    pub fn utility(&self, x: &[f64]) -> f64 {
        self.model.eval(self.params.as_slice(), x)
    }
}

/// Saved true-utility model: `{"model": {...}, "params": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthFile {
    pub model: ModelKind,
    pub params: ParamVector,
}

impl TruthFile {
    pub fn load(path: &Path) -> Result<Truth> {
        let file: TruthFile = serde_json::from_slice(&std::fs::read(path)?)?;
        let model = file.model.build();
        crate::error::check_dim(model.param_dim(), file.params.len())?;
        Ok(Truth {
            model,
            params: file.params,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Environment {
    pub source: ContextSource,
    pub truth: Truth,
    pub revenues: RevenueVector,
    pub n_items: usize,
    pub capacity: usize,
    pub dim: usize,
    pub horizon: usize,
    pub enforce_unit_ball: bool,
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        let mismatch = |m: String| Err(Error::ConfigMismatch(m));
        if self.truth.model.input_dim() != self.dim {
            return mismatch(format!("truth input dim {} != d {}", self.truth.model.input_dim(), self.dim));
        }
        if self.revenues.len() != self.n_items {
            return mismatch(format!("{} revenues for {} items", self.revenues.len(), self.n_items));
        }
        if self.capacity == 0 || self.capacity > self.n_items {
            return mismatch(format!("capacity {} invalid for N = {}", self.capacity, self.n_items));
        }
        if let ContextSource::Features(table) = &self.source {
            if table.dim != self.dim {
                return mismatch(format!("feature file has d = {}, expected {}", table.dim, self.dim));
            }
            if table.len() < self.n_items {
                return mismatch(format!("feature file has {} rows, need N = {}", table.len(), self.n_items));
            }
        }
        Ok(())
    }

    pub fn draw_context<R: Rng + ?Sized>(&self, round: usize, rng: &mut R) -> Result<ContextSet> {
        let n = self.n_items;
        let d = self.dim;
        let features: Vec<f64> = match &self.source {
            ContextSource::Gaussian => (0..n * d).map(|_| StandardNormal.sample(rng)).collect(),
            ContextSource::UniformBox { low, high } => (0..n * d).map(|_| rng.random_range(*low..*high)).collect(),
            ContextSource::Features(table) => rand::seq::index::sample(rng, table.len(), n)
                .into_iter()
                .flat_map(|i| table.row(i).to_vec())
                .collect(),
        };
        let ctx = ContextSet::from_flat(features, d, round)?;
        if self.enforce_unit_ball {
            ctx.check_unit_ball()?;
        }
        Ok(ctx)
    }
}

/// Two-layer sigmoid network truth with i.i.d. `Unif[-1, 1]` parameters.
pub fn realizable_truth(dim: usize, hidden: usize, seed: u64) -> Truth {
    let model = ModelKind::TwoLayer { input_dim: dim, hidden }.build();
    let mut rng = stream(seed, Stream::Truth);
    let params = ParamVector((0..model.param_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect());
    Truth { model, params }
}

/// `cos(2 pi x^T w*) - x^T w* / 2` with `w*` i.i.d. `Unif[-1, 1]`.
pub fn misspecified_truth(dim: usize, seed: u64) -> Truth {
    let model = ModelKind::Cosine { dim }.build();
    let mut rng = stream(seed, Stream::Truth);
    let params = ParamVector((0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect());
    Truth { model, params }
}

/// Realizable Gaussian-context environment with the usual experiment sizes
/// (`N = 100`, `K = 5`, `T = 1000`, unit revenues).
pub fn make_realizable_env(dim: usize, hidden: usize, seed: u64) -> Result<Environment> {
    if dim == 0 || hidden == 0 {
        return Err(Error::InvalidValue("d and m must be >= 1".into()));
    }
    Ok(Environment {
        source: ContextSource::Gaussian,
        truth: realizable_truth(dim, hidden, seed),
        revenues: RevenueVector::uniform(100, 1.0)?,
        n_items: 100,
        capacity: 5,
        dim,
        horizon: 1000,
        enforce_unit_ball: false,
    })
}

/// Per-round log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub assortment: Vec<usize>,
    /// `None` = outside option.
    pub chosen: Option<usize>,
    pub regret_inst: f64,
    pub regret_cum: f64,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub potential: Option<f64>,
    pub max_grad_norm: Option<f64>,
    /// Fraction of offered items whose optimistic utility is at least the true one.
    pub optimism_frac: Option<f64>,
    /// Smallest eigenvalue of `V` when the policy audited it this round.
    pub min_eig: Option<f64>,
    /// `max |V V^{-1} - I|` of the incrementally maintained inverse, same rounds.
    pub inv_drift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub policy: String,
    pub seed: u64,
    pub rounds: Vec<RoundLog>,
}

impl RunTrace {
    pub fn cumulative_regret(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.regret_cum).collect()
    }

    pub fn final_regret(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.regret_cum)
    }

    /// Regret accumulated at the end of round `t` (1-based).
    pub fn regret_at(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.rounds[t - 1].regret_cum
        }
    }

    /// Per-round potentials of every round that reported one.
    pub fn potentials(&self) -> Vec<f64> {
        self.rounds.iter().filter_map(|r| r.potential).collect()
    }

    pub fn max_grad_norm(&self) -> Option<f64> {
        self.rounds.iter().filter_map(|r| r.max_grad_norm).reduce(f64::max)
    }

    /// Pooled optimism fraction over all rounds that reported one.
    pub fn optimism_fraction(&self) -> Option<f64> {
        let vals: Vec<(f64, usize)> = self
            .rounds
            .iter()
            .filter_map(|r| r.optimism_frac.map(|f| (f, r.assortment.len())))
            .collect();
        let total: usize = vals.iter().map(|v| v.1).sum();
        (total > 0).then(|| vals.iter().map(|(f, k)| f * *k as f64).sum::<f64>() / total as f64)
    }
}

/// Plays `env.horizon` rounds of `policy`. Randomness comes from the named
/// streams of `seed`, so the contexts and choice draws are identical across
/// policies run with the same seed.
pub fn run_episode(env: &Environment, policy: &mut dyn Policy, seed: u64) -> Result<RunTrace> {
    env.validate()?;
    let mut context_rng = stream(seed, Stream::Contexts);
    let mut choice_rng = stream(seed, Stream::Choices);
    let mut policy_rng: StreamRng = stream(seed, Stream::Policy);
    let revenues = env.revenues.as_slice();
    let mut rounds = Vec::with_capacity(env.horizon);
    let mut cum = 0.0;
    let mut offered_utils = Vec::with_capacity(env.capacity);
    let mut offered_rev = Vec::with_capacity(env.capacity);
    for t in 1..=env.horizon {
        let context = Arc::new(env.draw_context(t, &mut context_rng)?);
        let true_utils: Vec<f64> = context.items().map(|x| env.truth.utility(x)).collect();
        let optimum = oracle_optimal_reward(&true_utils, &env.revenues, env.capacity, 20)?;

        let assortment = policy.choose(&context, &env.revenues, &mut policy_rng)?;
        if assortment.len() > env.capacity || assortment.items().iter().any(|&i| i >= env.n_items) {
            return Err(Error::ConfigMismatch(format!("policy offered an invalid assortment {:?}", assortment.items())));
        }
        let diag = policy.diagnostics();

        offered_utils.clear();
        offered_rev.clear();
        for &i in assortment.items() {
            offered_utils.push(true_utils[i]);
            offered_rev.push(revenues[i]);
        }
        let reward = expected_reward_unchecked(&offered_utils, &offered_rev);
        let dist = choice_probabilities(&offered_utils)?;
        let chosen = sample_choice(&dist, &mut choice_rng).map(|pos| assortment.items()[pos]);

        let regret_inst = optimum - reward;
        cum += regret_inst;
        let optimism_frac = diag.optimistic_utilities.as_ref().map(|z| {
            let hits = assortment.items().iter().filter(|&&i| z[i] >= true_utils[i]).count();
            hits as f64 / assortment.len() as f64
        });
        rounds.push(RoundLog {
            round: t,
            assortment: assortment.items().to_vec(),
            chosen,
            regret_inst,
            regret_cum: cum,
            beta: diag.beta,
            lambda: diag.lambda,
            potential: diag.potential,
            max_grad_norm: diag.max_grad_norm,
            optimism_frac,
            min_eig: None,
            inv_drift: None,
        });
        let record = ChoiceRecord::new(context, assortment, chosen)?;
        policy.update(&record, &mut policy_rng)?;
        if let Some(audit) = policy.gram_audit() {
            let log = rounds.last_mut().expect("just pushed");
            log.min_eig = Some(audit.min_eig);
            log.inv_drift = Some(audit.inv_drift);
        }
    }
    Ok(RunTrace {
        policy: policy.name().to_string(),
        seed,
        rounds,
    })
}

/// Knows the true utilities and always offers the optimal assortment.
/// Only meaningful in simulation, as a zero-regret reference.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    truth: Truth,
    capacity: usize,
}

impl OraclePolicy {
    pub fn new(truth: Truth, capacity: usize) -> Self {
        Self { truth, capacity }
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> &str {
        "oracle"
    }

    fn choose(&mut self, context: &ContextSet, revenues: &RevenueVector, _rng: &mut StreamRng) -> Result<Assortment> {
        let u: Vec<f64> = context.items().map(|x| self.truth.utility(x)).collect();
        let solver = crate::assortment::AssortmentSolver {
            method: if revenues.is_uniform() {
                crate::assortment::SolverMethod::TopKUniform
            } else {
                crate::assortment::SolverMethod::BruteForce
            },
            brute_force_limit: 20,
        };
        Ok(crate::assortment::best_assortment(&u, revenues, self.capacity, &solver)?.assortment)
    }

    fn update(&mut self, _record: &ChoiceRecord, _rng: &mut StreamRng) -> Result<()> {
        Ok(())
    }
}
