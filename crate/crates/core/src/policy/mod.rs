//! Bandit policies behind one interface.
//!
//! A policy sees only the revealed contexts, revenues and choices; it never
//! receives the environment's true parameters.

mod eps_greedy;
mod linear;
mod onl_mnl;

pub use eps_greedy::{EpsGreedyConfig, EpsGreedyMnl};
pub use linear::{LinearBaselineConfig, LinearExploration, LinearMnl};
pub use onl_mnl::{OnlMnl, OnlMnlConfig, Phase};

use crate::confidence::GramAudit;
use crate::error::Result;
use crate::model::{uniform_assortment_sample, Assortment, ChoiceRecord, ContextSet, RevenueVector};
use crate::rng::StreamRng;

/// What a policy reports about the round it just chose for.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundDiagnostics {
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    /// `max_{i in S_t} ||grad_i||^2_{V_t^{-1}}`
    pub potential: Option<f64>,
    /// `max_{i in S_t} ||grad_i||_2`
    pub max_grad_norm: Option<f64>,
    /// Optimistic utilities of every item, when the policy computes them.
    pub optimistic_utilities: Option<Vec<f64>>,
}

pub trait Policy: Send {
    fn name(&self) -> &str;

    fn choose(&mut self, context: &ContextSet, revenues: &RevenueVector, rng: &mut StreamRng) -> Result<Assortment>;

    fn update(&mut self, record: &ChoiceRecord, rng: &mut StreamRng) -> Result<()>;

    fn diagnostics(&self) -> RoundDiagnostics {
        RoundDiagnostics::default()
    }

    /// Gram-matrix audit taken during the latest `update`, if any.
    fn gram_audit(&self) -> Option<GramAudit> {
        None
    }
}

/// Offers a uniformly random assortment every round.
#[derive(Debug, Clone)]
pub struct UniformPolicy {
    capacity: usize,
}

impl UniformPolicy {
    pub fn new(capacity: usize) -> Self {
        Self { capacity }
    }
}

impl Policy for UniformPolicy {
    fn name(&self) -> &str {
        "uniform"
    }

    fn choose(&mut self, context: &ContextSet, _revenues: &RevenueVector, rng: &mut StreamRng) -> Result<Assortment> {
        uniform_assortment_sample(context.n_items(), self.capacity, rng)
    }

    fn update(&mut self, _record: &ChoiceRecord, _rng: &mut StreamRng) -> Result<()> {
        Ok(())
    }
}
