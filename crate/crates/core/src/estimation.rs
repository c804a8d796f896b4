//! Likelihood losses and their minimization.
//!
//! Two objectives are provided: the exploration-phase negative log-likelihood
//! of observed choices, and the regularized negative log-likelihood of a
//! linearized MNL model whose utilities are first-order expansions frozen at
//! the estimate in force when each round was played. Both include the outside
//! option term, so the gradient is `sum_i (p_i - y_i) grad_i`.

use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::choice::{log_normalizer, probabilities_into};
use crate::error::{check_dim, Error, Result};
use crate::model::{ChoiceRecord, ContextSet, Assortment, ParamVector};
use crate::utility::UtilityModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub warm_start: bool,
    pub per_round_iterations: usize,
    /// Step size for per-round refits; falls back to `learning_rate`.
    pub round_learning_rate: Option<f64>,
    /// Extra random restarts for the exploration-phase fit.
    pub restarts: usize,
    /// Euclidean ball radius applied after every step; `None` = unconstrained.
    pub projection_radius: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            iterations: 2000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            warm_start: true,
            per_round_iterations: 50,
            round_learning_rate: None,
            restarts: 0,
            projection_radius: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.iterations == 0 {
            return Err(Error::InvalidValue(
                "optimizer needs learning_rate > 0 and iterations >= 1".into(),
            ));
        }
        if let Some(lr) = self.round_learning_rate {
            if !(lr > 0.0) {
                return Err(Error::InvalidValue("round_learning_rate must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn round_rate(&self) -> f64 {
        self.round_learning_rate.unwrap_or(self.learning_rate)
    }
}

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    state: AdamState,
}

impl Adam {
    pub fn new(dim: usize, lr: f64, cfg: &OptimizerConfig) -> Self {
        Self {
            lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            state: AdamState {
                m: vec![0.0; dim],
                v: vec![0.0; dim],
                step: 0,
            },
        }
    }

    pub fn step(&mut self, w: &mut [f64], grad: &[f64]) {
        let s = &mut self.state;
        s.step += 1;
        let bc1 = 1.0 - self.beta1.powi(s.step as i32);
        let bc2 = 1.0 - self.beta2.powi(s.step as i32);
        for i in 0..w.len() {
            s.m[i] = self.beta1 * s.m[i] + (1.0 - self.beta1) * grad[i];
            s.v[i] = self.beta2 * s.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = s.m[i] / bc1;
            let v_hat = s.v[i] / bc2;
            w[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }
}

/// Result of a minimization run; `params` is the best iterate seen.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub params: ParamVector,
    pub loss: f64,
    pub initial_loss: f64,
    pub moments: AdamState,
}

/// Adam with best-iterate tracking. `objective` writes the gradient and
/// returns the loss.
pub fn minimize<F>(
    mut objective: F,
    init: &ParamVector,
    lr: f64,
    iterations: usize,
    cfg: &OptimizerConfig,
) -> Fit
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = init.len();
    let mut w = init.0.clone();
    let mut g = vec![0.0; dim];
    let mut adam = Adam::new(dim, lr, cfg);
    let initial_loss = objective(&w, &mut g);
    let mut best = (initial_loss, w.clone());
    for it in 0..iterations {
        if it > 0 {
            let loss = objective(&w, &mut g);
            if loss < best.0 {
                best = (loss, w.clone());
            }
        }
        adam.step(&mut w, &g);
        if let Some(radius) = cfg.projection_radius {
            let mut p = ParamVector(std::mem::take(&mut w));
            p.project_onto_ball(radius);
            w = p.0;
        }
    }
    let last = objective(&w, &mut g);
    if last < best.0 {
        best = (last, w);
    }
    Fit {
        params: ParamVector(best.1),
        loss: best.0,
        initial_loss,
        moments: adam.state().clone(),
    }
}

/// Negative log-likelihood of exploration-phase choices.
pub struct PilotLoss<'a> {
    pub records: &'a [ChoiceRecord],
    pub model: &'a dyn UtilityModel,
}

impl<'a> PilotLoss<'a> {
    pub fn new(records: &'a [ChoiceRecord], model: &'a dyn UtilityModel) -> Self {
        Self { records, model }
    }

    pub fn value_and_grad(&self, w: &ParamVector) -> Result<(f64, ParamVector)> {
        check_dim(self.model.param_dim(), w.len())?;
        for r in self.records {
            check_dim(self.model.input_dim(), r.context.dim())?;
        }
        let mut g = vec![0.0; w.len()];
        let v = self.eval(w.as_slice(), &mut g);
        Ok((v, ParamVector(g)))
    }

    pub fn value(&self, w: &ParamVector) -> Result<f64> {
        self.value_and_grad(w).map(|(v, _)| v)
    }

    pub(crate) fn eval(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let dw = self.model.param_dim();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let mut grads: Vec<f64> = Vec::new();
        let mut utils: Vec<f64> = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        for rec in self.records {
            let k = rec.assortment.len();
            grads.resize(k * dw, 0.0);
            utils.resize(k, 0.0);
            probs.resize(k, 0.0);
            for (pos, &item) in rec.assortment.items().iter().enumerate() {
                utils[pos] =
                    self.model
                        .eval_grad(w, rec.context.item(item), &mut grads[pos * dw..(pos + 1) * dw]);
            }
            let chosen = rec.chosen_position();
            loss += log_normalizer(&utils) - chosen.map_or(0.0, |c| utils[c]);
            probabilities_into(&utils, &mut probs);
            for pos in 0..k {
                let coef = probs[pos] - if chosen == Some(pos) { 1.0 } else { 0.0 };
                for (g, gi) in grad.iter_mut().zip(&grads[pos * dw..(pos + 1) * dw]) {
                    *g += coef * gi;
                }
            }
        }
        loss
    }
}

/// Utility values and gradients at the estimate used when a round was
/// played, for each offered item in assortment order. Frozen once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub point: ParamVector,
    pub values: Vec<f64>,
    /// `len * d_w` row-major gradients.
    pub grads: Vec<f64>,
}

impl Anchor {
    pub fn compute(
        model: &dyn UtilityModel,
        point: &ParamVector,
        context: &ContextSet,
        assortment: &Assortment,
    ) -> Result<Self> {
        check_dim(model.param_dim(), point.len())?;
        check_dim(model.input_dim(), context.dim())?;
        let dw = model.param_dim();
        let mut grads = vec![0.0; assortment.len() * dw];
        let values = assortment
            .items()
            .iter()
            .enumerate()
            .map(|(pos, &i)| model.eval_grad(point.as_slice(), context.item(i), &mut grads[pos * dw..(pos + 1) * dw]))
            .collect();
        Ok(Self {
            point: point.clone(),
            values,
            grads,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grad(&self, pos: usize) -> &[f64] {
        let dw = self.point.len();
        &self.grads[pos * dw..(pos + 1) * dw]
    }
}

#[derive(Debug, Clone)]
struct LinearizedEntry {
    /// `f(w_s) - grad^T w_s` per offered item
    offsets: Vec<f64>,
    grads: Vec<f64>,
    chosen: Option<usize>,
}

/// Regularized negative log-likelihood of the linearized MNL model.
#[derive(Debug, Clone)]
pub struct LinearizedLoss {
    entries: Vec<LinearizedEntry>,
    lambda: f64,
    center: ParamVector,
}

impl LinearizedLoss {
    pub fn new(lambda: f64, center: ParamVector) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidValue(format!("lambda must be > 0, got {lambda}")));
        }
        Ok(Self {
            entries: Vec::new(),
            lambda,
            center,
        })
    }

    /// Builds the loss from records and their anchors (one per record).
    pub fn from_parts(
        records: &[ChoiceRecord],
        anchors: &[Anchor],
        lambda: f64,
        center: ParamVector,
    ) -> Result<Self> {
        let mut loss = Self::new(lambda, center)?;
        for (i, rec) in records.iter().enumerate() {
            let anchor = anchors.get(i).ok_or(Error::MissingAnchor(i))?;
            if anchor.len() != rec.assortment.len() {
                return Err(Error::MissingAnchor(i));
            }
            loss.push(anchor, rec.chosen_position())?;
        }
        Ok(loss)
    }

    /// Adds one round. `chosen` is the position inside the assortment.
    pub fn push(&mut self, anchor: &Anchor, chosen: Option<usize>) -> Result<()> {
        let dw = self.center.len();
        check_dim(dw, anchor.point.len())?;
        if chosen.is_some_and(|c| c >= anchor.len()) {
            return Err(Error::InvalidValue("chosen position outside assortment".into()));
        }
        let offsets = (0..anchor.len())
            .map(|pos| {
                anchor.values[pos]
                    - anchor
                        .grad(pos)
                        .iter()
                        .zip(anchor.point.as_slice())
                        .map(|(g, p)| g * p)
                        .sum::<f64>()
            })
            .collect();
        self.entries.push(LinearizedEntry {
            offsets,
            grads: anchor.grads.clone(),
            chosen,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn center(&self) -> &ParamVector {
        &self.center
    }

    pub fn value_and_grad(&self, w: &ParamVector) -> Result<(f64, ParamVector)> {
        check_dim(self.center.len(), w.len())?;
        let mut g = vec![0.0; w.len()];
        let v = self.eval(w.as_slice(), &mut g);
        Ok((v, ParamVector(g)))
    }

    pub fn value(&self, w: &ParamVector) -> Result<f64> {
        self.value_and_grad(w).map(|(v, _)| v)
    }

    pub(crate) fn eval(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let dw = w.len();
        let mut loss = 0.0;
        for ((g, wi), ci) in grad.iter_mut().zip(w).zip(self.center.as_slice()) {
            *g = self.lambda * (wi - ci);
            loss += 0.5 * self.lambda * (wi - ci) * (wi - ci);
        }
        let mut utils: Vec<f64> = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        for e in &self.entries {
            let k = e.offsets.len();
            utils.clear();
            utils.extend((0..k).map(|pos| {
                e.offsets[pos]
                    + e.grads[pos * dw..(pos + 1) * dw]
                        .iter()
                        .zip(w)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            }));
            probs.resize(k, 0.0);
            loss += log_normalizer(&utils) - e.chosen.map_or(0.0, |c| utils[c]);
            probabilities_into(&utils, &mut probs);
            for pos in 0..k {
                let coef = probs[pos] - if e.chosen == Some(pos) { 1.0 } else { 0.0 };
                for (g, gi) in grad.iter_mut().zip(&e.grads[pos * dw..(pos + 1) * dw]) {
                    *g += coef * gi;
                }
            }
        }
        loss
    }
}

/// Minimizes the exploration-phase likelihood from `init`, plus
/// `cfg.restarts` extra random starts, returning the best fit found.
pub fn fit_pilot(
    loss: &PilotLoss<'_>,
    init: &ParamVector,
    cfg: &OptimizerConfig,
    rng: &mut dyn RngCore,
) -> Result<Fit> {
    if loss.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    check_dim(loss.model.param_dim(), init.len())?;
    let run = |start: &ParamVector| {
        minimize(|w, g| loss.eval(w, g), start, cfg.learning_rate, cfg.iterations, cfg)
    };
    let mut best = run(init);
    for _ in 0..cfg.restarts {
        let start = loss.model.init_params(rng);
        let fit = run(&start);
        if fit.loss < best.loss {
            best = fit;
        }
    }
    Ok(best)
}

/// Warm-started refit of the linearized loss for `cfg.per_round_iterations`
/// steps; never returns a point worse than `warm`.
pub fn fit_round(loss: &LinearizedLoss, warm: &ParamVector, cfg: &OptimizerConfig) -> Result<Fit> {
    cfg.validate()?;
    check_dim(loss.center.len(), warm.len())?;
    let start = if cfg.warm_start { warm } else { &loss.center };
    let mut fit = minimize(|w, g| loss.eval(w, g), start, cfg.round_rate(), cfg.per_round_iterations, cfg);
    if !cfg.warm_start {
        // keep the no-worse-than-warm guarantee for cold starts too
        let mut g = vec![0.0; warm.len()];
        let warm_loss = loss.eval(warm.as_slice(), &mut g);
        if warm_loss < fit.loss {
            fit.params = warm.clone();
            fit.loss = warm_loss;
        }
    }
    Ok(fit)
}

/// Resumable snapshot of an estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub round: usize,
    pub w_hat: ParamVector,
    pub w_pilot: ParamVector,
    pub optimizer_moments: Option<AdamState>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
