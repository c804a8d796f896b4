//! Epsilon-greedy with epoch-doubling refits of a general utility model.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assortment::{best_assortment, AssortmentSolver};
use crate::error::{Error, Result};
use crate::estimation::{minimize, OptimizerConfig, PilotLoss};
use crate::model::{uniform_assortment_sample, Assortment, ChoiceRecord, ContextSet, ParamVector, RevenueVector};
use crate::policy::Policy;
use crate::rng::StreamRng;
use crate::utility::{ModelKind, UtilityModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsGreedyConfig {
    pub model: ModelKind,
    pub capacity: usize,
    pub epsilon: f64,
    pub decay: f64,
    pub floor: f64,
    pub optimizer: OptimizerConfig,
    pub solver: Option<AssortmentSolver>,
}

impl Default for EpsGreedyConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::TwoLayer { input_dim: 3, hidden: 3 },
            capacity: 5,
            epsilon: 0.1,
            decay: 0.995,
            floor: 0.001,
            optimizer: OptimizerConfig::default(),
            solver: None,
        }
    }
}

/// Epoch `k` covers rounds `2^(k-1) ..= 2^k - 1`; at its last round the model
/// is refit on that epoch's observations only.
pub fn is_epoch_end(t: usize) -> bool {
    t >= 1 && (t + 1).is_power_of_two()
}

#[derive(Debug)]
pub struct EpsGreedyMnl {
    cfg: EpsGreedyConfig,
    model: Arc<dyn UtilityModel>,
    params: Option<ParamVector>,
    epoch_records: Vec<ChoiceRecord>,
    epsilon: f64,
    round: usize,
    refits: usize,
    name: String,
}

impl EpsGreedyMnl {
    pub fn new(cfg: EpsGreedyConfig) -> Result<Self> {
        cfg.optimizer.validate()?;
        if !(0.0..=1.0).contains(&cfg.epsilon) || !(0.0..=1.0).contains(&cfg.decay) || cfg.floor < 0.0 {
            return Err(Error::InvalidValue("epsilon, decay in [0, 1] and floor >= 0 required".into()));
        }
        Ok(Self {
            model: cfg.model.build(),
            params: None,
            epoch_records: Vec::new(),
            epsilon: cfg.epsilon,
            round: 0,
            refits: 0,
            name: "eps-greedy-mnl".into(),
            cfg,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Starts from fixed parameters instead of a random initialization.
    pub fn with_params(mut self, params: ParamVector) -> Self {
        self.params = Some(params);
        self
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn refits(&self) -> usize {
        self.refits
    }

    pub fn params(&self) -> Option<&ParamVector> {
        self.params.as_ref()
    }
}

impl Policy for EpsGreedyMnl {
    fn name(&self) -> &str {
        &self.name
    }

    fn choose(&mut self, context: &ContextSet, revenues: &RevenueVector, rng: &mut StreamRng) -> Result<Assortment> {
        if self.params.is_none() {
            self.params = Some(self.model.init_params(rng));
        }
        let coin: f64 = rng.random();
        if coin < self.epsilon {
            return uniform_assortment_sample(context.n_items(), self.cfg.capacity, rng);
        }
        let w = self.params.as_ref().expect("initialized above");
        let utilities: Vec<f64> = context.items().map(|x| self.model.eval(w.as_slice(), x)).collect();
        let solver = self.cfg.solver.unwrap_or_else(|| AssortmentSolver::auto(revenues));
        Ok(best_assortment(&utilities, revenues, self.cfg.capacity.min(context.n_items()), &solver)?.assortment)
    }

    fn update(&mut self, record: &ChoiceRecord, _rng: &mut StreamRng) -> Result<()> {
        self.round += 1;
        self.epoch_records.push(record.clone());
        if is_epoch_end(self.round) {
            let w = self.params.clone().expect("choose precedes update");
            let loss = PilotLoss::new(&self.epoch_records, self.model.as_ref());
            let cfg = &self.cfg.optimizer;
            let fit = minimize(|p, g| loss.eval(p, g), &w, cfg.learning_rate, cfg.iterations, cfg);
            self.params = Some(fit.params);
            self.epoch_records.clear();
            self.refits += 1;
        }
        self.epsilon = (self.epsilon * self.cfg.decay).max(self.cfg.floor);
        Ok(())
    }
}
