//! Linear-utility MNL baselines: upper confidence bounds and Thompson
//! sampling around a ridge-regularized maximum-likelihood estimate.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::assortment::{best_assortment, AssortmentSolver};
use crate::choice::probabilities_into;
use crate::error::{Error, Result};
use crate::model::{Assortment, ChoiceRecord, ContextSet, RevenueVector};
use crate::policy::Policy;
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearExploration {
    /// `x^T theta + alpha ||x||_{A^{-1}}`
    Ucb,
    /// `x^T theta_tilde` with `theta_tilde ~ N(theta, scale^2 A^{-1})`
    Thompson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearBaselineConfig {
    pub dim: usize,
    pub capacity: usize,
    pub ridge: f64,
    /// Bonus multiplier (UCB) or posterior standard-deviation scale (TS).
    pub exploration: f64,
    pub newton_steps: usize,
    pub solver: Option<AssortmentSolver>,
}

impl Default for LinearBaselineConfig {
    fn default() -> Self {
        Self {
            dim: 3,
            capacity: 5,
            ridge: 1.0,
            exploration: 1.0,
            newton_steps: 3,
            solver: None,
        }
    }
}

#[derive(Debug)]
pub struct LinearMnl {
    cfg: LinearBaselineConfig,
    kind: LinearExploration,
    design: DMatrix<f64>,
    theta: DVector<f64>,
    /// Offered features and chosen position of every past round.
    history: Vec<(Vec<f64>, Option<usize>)>,
    name: String,
}

impl LinearMnl {
    pub fn new(kind: LinearExploration, cfg: LinearBaselineConfig) -> Result<Self> {
        if !(cfg.ridge > 0.0) || cfg.exploration < 0.0 || cfg.dim == 0 {
            return Err(Error::InvalidValue("linear baseline needs ridge > 0, exploration >= 0, dim >= 1".into()));
        }
        let name = match kind {
            LinearExploration::Ucb => "ucb-mnl",
            LinearExploration::Thompson => "ts-mnl",
        };
        Ok(Self {
            design: DMatrix::identity(cfg.dim, cfg.dim) * cfg.ridge,
            theta: DVector::zeros(cfg.dim),
            history: Vec::new(),
            kind,
            cfg,
            name: name.into(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn theta(&self) -> &[f64] {
        self.theta.as_slice()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// Regularized negative log-likelihood, gradient and Hessian at `theta`.
    fn objective(&self, theta: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let d = self.cfg.dim;
        let mut loss = 0.5 * self.cfg.ridge * theta.norm_squared();
        let mut grad = theta * self.cfg.ridge;
        let mut hess = DMatrix::identity(d, d) * self.cfg.ridge;
        let mut utils = Vec::new();
        let mut probs = Vec::new();
        for (feats, chosen) in &self.history {
            let k = feats.len() / d;
            utils.clear();
            utils.extend(feats.chunks_exact(d).map(|x| x.iter().zip(theta.iter()).map(|(a, b)| a * b).sum::<f64>()));
            probs.resize(k, 0.0);
            loss += crate::choice::log_normalizer(&utils) - chosen.map_or(0.0, |c| utils[c]);
            probabilities_into(&utils, &mut probs);
            let mut mean = DVector::zeros(d);
            for (pos, x) in feats.chunks_exact(d).enumerate() {
                let xv = DVector::from_column_slice(x);
                let y = if *chosen == Some(pos) { 1.0 } else { 0.0 };
                grad.axpy(probs[pos] - y, &xv, 1.0);
                hess.ger(probs[pos], &xv, &xv, 1.0);
                mean.axpy(probs[pos], &xv, 1.0);
            }
            hess.ger(-1.0, &mean, &mean, 1.0);
        }
        (loss, grad, hess)
    }

    fn refit(&mut self) {
        for _ in 0..self.cfg.newton_steps {
            let (loss, grad, hess) = self.objective(&self.theta);
            let Some(chol) = hess.cholesky() else { break };
            let step = chol.solve(&grad);
            let mut t = 1.0;
            loop {
                let candidate = &self.theta - &step * t;
                if self.objective(&candidate).0 <= loss || t < 1e-6 {
                    if t >= 1e-6 {
                        self.theta = candidate;
                    }
                    break;
                }
                t *= 0.5;
            }
            if grad.norm() < 1e-10 {
                break;
            }
        }
    }
}

impl Policy for LinearMnl {
    fn name(&self) -> &str {
        &self.name
    }

    fn choose(&mut self, context: &ContextSet, revenues: &RevenueVector, rng: &mut StreamRng) -> Result<Assortment> {
        crate::error::check_dim(self.cfg.dim, context.dim())?;
        let d = self.cfg.dim;
        let inv = self
            .design
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidValue("design matrix lost positive definiteness".into()))?;
        let theta = match self.kind {
            LinearExploration::Ucb => self.theta.clone(),
            LinearExploration::Thompson => {
                // A^{-1} = L^{-T} L^{-1}: sample via a triangular solve
                let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)));
                let l = inv.l();
                let noise = l.transpose().solve_upper_triangular(&z).expect("triangular factor is invertible");
                &self.theta + noise * self.cfg.exploration
            }
        };
        let utilities: Vec<f64> = context
            .items()
            .map(|x| {
                let xv = DVector::from_column_slice(x);
                let mean = xv.dot(&theta);
                match self.kind {
                    LinearExploration::Ucb if self.cfg.exploration > 0.0 => {
                        mean + self.cfg.exploration * xv.dot(&inv.solve(&xv)).max(0.0).sqrt()
                    }
                    _ => mean,
                }
            })
            .collect();
        let solver = self.cfg.solver.unwrap_or_else(|| AssortmentSolver::auto(revenues));
        Ok(best_assortment(&utilities, revenues, self.cfg.capacity.min(context.n_items()), &solver)?.assortment)
    }

    fn update(&mut self, record: &ChoiceRecord, _rng: &mut StreamRng) -> Result<()> {
        let d = self.cfg.dim;
        let mut feats = Vec::with_capacity(record.assortment.len() * d);
        for &i in record.assortment.items() {
            let x = record.context.item(i);
            let xv = DVector::from_column_slice(x);
            self.design.ger(1.0, &xv, &xv, 1.0);
            feats.extend_from_slice(x);
        }
        self.history.push((feats, record.chosen_position()));
        self.refit();
        Ok(())
    }
}
