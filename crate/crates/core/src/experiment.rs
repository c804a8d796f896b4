//! Declarative experiment configuration, parallel seed sweeps, aggregation
//! and grid search over the schedule constants.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::confidence::BetaMode;
use crate::error::{Error, Result};
use crate::model::RevenueVector;
use crate::policy::{
    EpsGreedyConfig, EpsGreedyMnl, LinearBaselineConfig, LinearExploration, LinearMnl, OnlMnl, OnlMnlConfig, Policy,
    UniformPolicy,
};
use crate::simulator::{
    load_feature_file, misspecified_truth, realizable_truth, run_episode, ContextSource, Environment, RunTrace,
    TruthFile,
};
use crate::utility::ModelKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthSpec {
    /// Two-layer sigmoid network with `hidden` units.
    Realizable { hidden: usize },
    /// Cosine mixture of a random direction.
    Misspecified,
    /// Model and parameters read from a JSON file.
    Checkpoint { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContextSpec {
    Gaussian,
    Uniform { low: f64, high: f64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub truth: TruthSpec,
    pub context: ContextSpec,
    pub dim: usize,
    pub n_items: usize,
    pub capacity: usize,
    pub horizon: usize,
    #[serde(default = "one")]
    pub revenue: f64,
    #[serde(default)]
    pub revenues: Option<Vec<f64>>,
    #[serde(default)]
    pub enforce_unit_ball: bool,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub name: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default = "empty_object")]
    pub params: Value,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

impl PolicySpec {
    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.name)
    }
}

/// Overrides applied to every `onl-mnl` policy after its own params.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleOverrides {
    pub kappa: Option<f64>,
    pub mu: Option<f64>,
    pub c_lambda: Option<f64>,
    pub c_beta: Option<f64>,
    pub t0: Option<usize>,
    pub beta_mode: Option<BetaMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub reverse_lipschitz_pairs: usize,
    pub reverse_lipschitz_dims: Vec<usize>,
    pub reverse_lipschitz_caps: Vec<f64>,
    pub grid_resolution: usize,
    pub drift_tolerance: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            reverse_lipschitz_pairs: 10_000,
            reverse_lipschitz_dims: vec![1, 2, 3],
            reverse_lipschitz_caps: vec![0.5, 1.0, 3.0],
            grid_resolution: 41,
            drift_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub c_lambda: Vec<f64>,
    pub c_beta: Vec<f64>,
    pub seeds: Vec<u64>,
    pub horizon: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            c_lambda: vec![1e-3, 1e-2, 1e-1, 1.0],
            c_beta: vec![1e-4, 1e-3, 1e-2, 1e-1],
            seeds: vec![0, 1, 2],
            horizon: Some(500),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (0..30).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub environment: EnvironmentConfig,
    pub policies: Vec<PolicySpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub schedule: ScheduleOverrides,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub grid: GridConfig,
}

/// Config text format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Json,
    Toml,
}

impl ConfigFormat {
    pub fn detect(path: Option<&Path>, text: &str) -> Self {
        match path.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
            Some("json") => ConfigFormat::Json,
            Some("toml") => ConfigFormat::Toml,
            _ if text.trim_start().starts_with('{') => ConfigFormat::Json,
            _ => ConfigFormat::Toml,
        }
    }
}

/// Parses config text into a generic value tree.
pub fn parse_config_value(text: &str, format: ConfigFormat) -> Result<Value> {
    match format {
        ConfigFormat::Json => serde_json::from_str(text).map_err(|e| Error::Config(e.to_string())),
        ConfigFormat::Toml => {
            let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
            serde_json::to_value(table).map_err(|e| Error::Config(e.to_string()))
        }
    }
}

/// Applies a `key.path=value` override. Numeric segments index arrays; the
/// value is read as JSON when it parses, otherwise as a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let segments: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        node = match node {
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| Error::Config(format!("`{seg}` in `{key}` must index an array")))?;
                items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("index {idx} out of range in `{key}`")))?
            }
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                map.entry(seg.to_string()).or_insert_with(empty_object)
            }
            _ => return Err(Error::Config(format!("cannot descend into `{seg}` of `{key}`"))),
        };
        if last {
            *node = value;
            return Ok(());
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_str(text: &str, format: ConfigFormat) -> Result<Self> {
        Self::from_value(parse_config_value(text, format)?)
    }

    /// Reads a config file and applies `--set` style overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut value = parse_config_value(&text, ConfigFormat::detect(Some(path), &text))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    /// Checks every policy and the environment without running anything.
    pub fn validate(&self) -> Result<()> {
        let env = &self.environment;
        if env.dim == 0 || env.n_items == 0 || env.capacity == 0 || env.capacity > env.n_items || env.horizon == 0 {
            return Err(Error::Config(format!(
                "environment needs d, N, T >= 1 and 1 <= K <= N (d = {}, N = {}, K = {}, T = {})",
                env.dim, env.n_items, env.capacity, env.horizon
            )));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("at least one policy is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.revenues()?;
        let mut labels = std::collections::HashSet::new();
        for p in &self.policies {
            if !labels.insert(p.label().to_string()) {
                return Err(Error::Config(format!("duplicate policy label `{}`", p.label())));
            }
            self.build_policy(p)?;
        }
        Ok(())
    }

    pub fn revenues(&self) -> Result<RevenueVector> {
        let env = &self.environment;
        let r = match &env.revenues {
            Some(r) if r.len() != env.n_items => {
                return Err(Error::Config(format!("{} revenues given for N = {}", r.len(), env.n_items)))
            }
            Some(r) => RevenueVector::new(r.clone()),
            None => RevenueVector::uniform(env.n_items, env.revenue),
        };
        r.map_err(|e| Error::Config(e.to_string()))
    }

    /// Default learned model class: the truth's architecture when realizable,
    /// otherwise a 15-unit network.
    pub fn default_estimator(&self) -> ModelKind {
        let env = &self.environment;
        match &env.truth {
            TruthSpec::Realizable { hidden } => ModelKind::TwoLayer {
                input_dim: env.dim,
                hidden: *hidden,
            },
            _ => ModelKind::TwoLayer {
                input_dim: env.dim,
                hidden: 15,
            },
        }
    }

    pub fn onl_mnl_config(&self, spec: &PolicySpec) -> Result<OnlMnlConfig> {
        let env = &self.environment;
        let base = OnlMnlConfig {
            model: self.default_estimator(),
            capacity: env.capacity,
            horizon: env.horizon,
            ..OnlMnlConfig::default()
        };
        let mut cfg: OnlMnlConfig = merge_params(&base, &spec.params)?;
        let o = &self.schedule;
        cfg.kappa = o.kappa.unwrap_or(cfg.kappa);
        cfg.mu = o.mu.unwrap_or(cfg.mu);
        cfg.c_lambda = o.c_lambda.unwrap_or(cfg.c_lambda);
        cfg.c_beta = o.c_beta.unwrap_or(cfg.c_beta);
        cfg.t0 = o.t0.or(cfg.t0);
        cfg.beta_mode = o.beta_mode.unwrap_or(cfg.beta_mode);
        Ok(cfg)
    }

    pub fn build_policy(&self, spec: &PolicySpec) -> Result<Box<dyn Policy>> {
        let env = &self.environment;
        let config_err = |e: Error| Error::Config(format!("policy `{}`: {e}", spec.label()));
        let label = spec.label().to_string();
        let policy: Box<dyn Policy> = match spec.name.as_str() {
            "onl-mnl" => {
                let cfg = self.onl_mnl_config(spec).map_err(config_err)?;
                check_model_dim(&cfg.model, env.dim).map_err(config_err)?;
                Box::new(OnlMnl::new(cfg).map_err(config_err)?.with_name(label))
            }
            "eps-greedy-mnl" => {
                let base = EpsGreedyConfig {
                    model: self.default_estimator(),
                    capacity: env.capacity,
                    ..EpsGreedyConfig::default()
                };
                let cfg: EpsGreedyConfig = merge_params(&base, &spec.params).map_err(config_err)?;
                check_model_dim(&cfg.model, env.dim).map_err(config_err)?;
                Box::new(EpsGreedyMnl::new(cfg).map_err(config_err)?.with_name(label))
            }
            "ucb-mnl" | "ts-mnl" => {
                let base = LinearBaselineConfig {
                    dim: env.dim,
                    capacity: env.capacity,
                    ..LinearBaselineConfig::default()
                };
                let cfg: LinearBaselineConfig = merge_params(&base, &spec.params).map_err(config_err)?;
                if cfg.dim != env.dim {
                    return Err(Error::Config(format!("policy `{label}`: dim {} != d {}", cfg.dim, env.dim)));
                }
                let kind = if spec.name == "ucb-mnl" {
                    LinearExploration::Ucb
                } else {
                    LinearExploration::Thompson
                };
                Box::new(LinearMnl::new(kind, cfg).map_err(config_err)?.with_name(label))
            }
            "uniform" => Box::new(UniformPolicy::new(env.capacity)),
            other => return Err(Error::Config(format!("unknown policy `{other}`"))),
        };
        Ok(policy)
    }

    /// Environment for one seed; the truth is drawn from that seed.
    pub fn environment_for_seed(&self, seed: u64, features: Option<&Arc<crate::simulator::FeatureTable>>) -> Result<Environment> {
        let env = &self.environment;
        let truth = match &env.truth {
            TruthSpec::Realizable { hidden } => realizable_truth(env.dim, *hidden, seed),
            TruthSpec::Misspecified => misspecified_truth(env.dim, seed),
            TruthSpec::Checkpoint { path } => TruthFile::load(path)?,
        };
        let source = match &env.context {
            ContextSpec::Gaussian => ContextSource::Gaussian,
            ContextSpec::Uniform { low, high } => ContextSource::UniformBox { low: *low, high: *high },
            ContextSpec::File { path } => match features {
                Some(t) => ContextSource::Features(t.clone()),
                None => ContextSource::Features(Arc::new(load_feature_file(path)?)),
            },
        };
        Ok(Environment {
            source,
            truth,
            revenues: self.revenues()?,
            n_items: env.n_items,
            capacity: env.capacity,
            dim: env.dim,
            horizon: env.horizon,
            enforce_unit_ball: env.enforce_unit_ball,
        })
    }

    fn feature_table(&self) -> Result<Option<Arc<crate::simulator::FeatureTable>>> {
        match &self.environment.context {
            ContextSpec::File { path } => Ok(Some(Arc::new(load_feature_file(path)?))),
            _ => Ok(None),
        }
    }
}

fn check_model_dim(model: &ModelKind, dim: usize) -> Result<()> {
    let got = model.build().input_dim();
    if got != dim {
        return Err(Error::ConfigMismatch(format!("model input dim {got} != d {dim}")));
    }
    Ok(())
}

fn merge_json(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_json(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn merge_params<T: Serialize + serde::de::DeserializeOwned>(base: &T, params: &Value) -> Result<T> {
    if !params.is_object() {
        return Err(Error::Config("`params` must be a table".into()));
    }
    let mut value = serde_json::to_value(base)?;
    // tagged model kinds are replaced whole, not merged
    if let (Some(Value::Object(b)), Some(m)) = (value.get_mut("model"), params.get("model")) {
        *b = m.as_object().cloned().unwrap_or_default();
    }
    merge_json(&mut value, params);
    serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
}

/// Mean and population standard deviation of the per-seed cumulative
/// regret curves of one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyAggregate {
    pub label: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub final_mean: f64,
    pub final_std: f64,
    pub seeds: Vec<u64>,
    pub wall_clock_mean_secs: f64,
    pub wall_clock_max_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub policies: Vec<PolicyAggregate>,
}

impl AggregateResult {
    pub fn get(&self, label: &str) -> Option<&PolicyAggregate> {
        self.policies.iter().find(|p| p.label == label)
    }
}

/// Arithmetic mean and population std of equal-length curves, per index.
pub fn mean_std(curves: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let len = curves.first().map_or(0, Vec::len);
    let n = curves.len() as f64;
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for t in 0..len {
        let m = curves.iter().map(|c| c[t]).sum::<f64>() / n;
        let var = curves.iter().map(|c| (c[t] - m).powi(2)).sum::<f64>() / n;
        mean[t] = m;
        std[t] = var.sqrt();
    }
    (mean, std)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub label: String,
    pub trace: RunTrace,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    /// Ordered by policy (config order), then seed (config order).
    pub runs: Vec<RunOutput>,
    pub aggregate: AggregateResult,
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Runs every (policy, seed) pair in parallel and aggregates the results.
/// Outputs do not depend on the thread count.
pub fn run_experiment(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let features = cfg.feature_table()?;
    let tasks: Vec<(usize, u64)> = (0..cfg.policies.len())
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let runs: Vec<RunOutput> = with_threads(threads, || {
        tasks
            .par_iter()
            .map(|&(p, seed)| {
                let spec = &cfg.policies[p];
                let env = cfg.environment_for_seed(seed, features.as_ref())?;
                let mut policy = cfg.build_policy(spec)?;
                let start = Instant::now();
                let trace = run_episode(&env, policy.as_mut(), seed)?;
                Ok(RunOutput {
                    label: spec.label().to_string(),
                    trace,
                    wall_clock_secs: start.elapsed().as_secs_f64(),
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let aggregate = aggregate_runs(cfg, &runs);
    Ok(ExperimentOutcome { runs, aggregate })
}

pub fn aggregate_runs(cfg: &ExperimentConfig, runs: &[RunOutput]) -> AggregateResult {
    let policies = cfg
        .policies
        .iter()
        .map(|spec| {
            let mine: Vec<&RunOutput> = runs.iter().filter(|r| r.label == spec.label()).collect();
            let curves: Vec<Vec<f64>> = mine.iter().map(|r| r.trace.cumulative_regret()).collect();
            let (mean, std) = mean_std(&curves);
            let times: Vec<f64> = mine.iter().map(|r| r.wall_clock_secs).collect();
            PolicyAggregate {
                label: spec.label().to_string(),
                final_mean: mean.last().copied().unwrap_or(0.0),
                final_std: std.last().copied().unwrap_or(0.0),
                mean,
                std,
                seeds: mine.iter().map(|r| r.trace.seed).collect(),
                wall_clock_mean_secs: times.iter().sum::<f64>() / times.len().max(1) as f64,
                wall_clock_max_secs: times.iter().copied().fold(0.0, f64::max),
            }
        })
        .collect();
    AggregateResult { policies }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub c_lambda: f64,
    pub c_beta: f64,
    pub mean_final_regret: f64,
    pub std_final_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub rows: Vec<GridRow>,
    pub best: GridRow,
}

/// Evaluates the first `onl-mnl` policy of the config at every
/// `(c_lambda, c_beta)` grid point and returns the lowest mean final regret
/// (first in grid order on ties).
pub fn grid_search(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<GridOutcome> {
    let spec = cfg
        .policies
        .iter()
        .find(|p| p.name == "onl-mnl")
        .cloned()
        .unwrap_or(PolicySpec {
            name: "onl-mnl".into(),
            label: None,
            params: empty_object(),
        });
    let grid = &cfg.grid;
    if grid.c_lambda.is_empty() || grid.c_beta.is_empty() || grid.seeds.is_empty() {
        return Err(Error::Config("grid needs at least one c_lambda, c_beta and seed".into()));
    }
    let mut rows = Vec::new();
    for &c_lambda in &grid.c_lambda {
        for &c_beta in &grid.c_beta {
            let mut point = cfg.clone();
            point.policies = vec![spec.clone()];
            point.seeds = grid.seeds.clone();
            if let Some(h) = grid.horizon {
                point.environment.horizon = h;
            }
            point.schedule.c_lambda = Some(c_lambda);
            point.schedule.c_beta = Some(c_beta);
            let outcome = run_experiment(&point, threads)?;
            let finals: Vec<Vec<f64>> = outcome.runs.iter().map(|r| vec![r.trace.final_regret()]).collect();
            let (m, s) = mean_std(&finals);
            rows.push(GridRow {
                c_lambda,
                c_beta,
                mean_final_regret: m[0],
                std_final_regret: s[0],
            });
        }
    }
    let best = rows
        .iter()
        .fold(None::<&GridRow>, |best, r| match best {
            Some(b) if b.mean_final_regret <= r.mean_final_regret => Some(b),
            _ => Some(r),
        })
        .cloned()
        .expect("grid is non-empty");
    Ok(GridOutcome { rows, best })
}
