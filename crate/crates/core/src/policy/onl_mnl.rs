//! Optimistic exploration with a non-linear utility model.
//!
//! Rounds `1..=t0` offer uniformly random assortments; at the end of round
//! `t0` the likelihood of those choices is minimized to obtain the pilot
//! estimate and the Gram matrix is reset to `lambda I`. Every later round
//! scores items by the optimistic utility
//! `f(w_t, x) + sqrt(beta_t) ||grad f||_{V_t^{-1}} + beta_t C_h / lambda`,
//! offers the best assortment under those scores, records the utility
//! gradients of the offered items in `V`, and refits the linearized loss.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assortment::{best_assortment, AssortmentSolver};
use crate::confidence::{optimistic_from_parts, BetaMode, GramAudit, GramState, Schedule};
use crate::error::{Error, Result};
use crate::estimation::{fit_pilot, fit_round, Anchor, LinearizedLoss, OptimizerConfig, PilotLoss};
use crate::model::{uniform_assortment_sample, Assortment, ChoiceRecord, ContextSet, ParamVector, RevenueVector};
use crate::policy::{Policy, RoundDiagnostics};
use crate::rng::StreamRng;
use crate::utility::{BoundCaps, ModelKind, UtilityModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlMnlConfig {
    pub model: ModelKind,
    pub capacity: usize,
    pub horizon: usize,
    /// Exploration length; `None` uses `ceil(kappa^{-3/2} d_w sqrt(T))`.
    pub t0: Option<usize>,
    pub kappa: f64,
    pub mu: f64,
    pub c_lambda: f64,
    pub c_beta: f64,
    pub beta_mode: BetaMode,
    pub optimizer: OptimizerConfig,
    /// Refit the linearized loss every this many exploitation rounds.
    pub refit_every: usize,
    /// Caps used for the curvature constant `C_h`.
    pub caps: BoundCaps,
    pub solver: Option<AssortmentSolver>,
    pub gram_refresh_every: usize,
}

impl Default for OnlMnlConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::TwoLayer { input_dim: 3, hidden: 3 },
            capacity: 5,
            horizon: 1000,
            t0: None,
            kappa: 0.1,
            mu: 1.0,
            c_lambda: 1e-3,
            c_beta: 1e-4,
            beta_mode: BetaMode::Linear,
            optimizer: OptimizerConfig::default(),
            refit_every: 1,
            caps: BoundCaps::default(),
            solver: None,
            gram_refresh_every: 100,
        }
    }
}

impl OnlMnlConfig {
    pub fn schedule(&self) -> Schedule {
        let d_w = self.model.build().param_dim();
        Schedule {
            horizon: self.horizon,
            t0: self
                .t0
                .unwrap_or_else(|| Schedule::default_t0(self.kappa, d_w, self.horizon)),
            kappa: self.kappa,
            mu: self.mu,
            c_lambda: self.c_lambda,
            c_beta: self.c_beta,
            d_w,
            beta_mode: self.beta_mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Exploration,
    Optimistic,
}

/// Call counters used to verify the phase structure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OnlMnlCounters {
    pub uniform_offers: usize,
    pub optimistic_offers: usize,
    pub pilot_fits: usize,
    pub round_fits: usize,
}

#[derive(Debug)]
pub struct OnlMnl {
    cfg: OnlMnlConfig,
    model: Arc<dyn UtilityModel>,
    schedule: Schedule,
    lambda: f64,
    c_h: f64,
    round: usize,
    pilot_records: Vec<ChoiceRecord>,
    w_pilot: Option<ParamVector>,
    w_hat: Option<ParamVector>,
    gram: Option<GramState>,
    loss: Option<LinearizedLoss>,
    anchors: Vec<Anchor>,
    pending: Option<(Assortment, Anchor)>,
    diag: RoundDiagnostics,
    last_audit: Option<GramAudit>,
    counters: OnlMnlCounters,
    name: String,
}

impl OnlMnl {
    pub fn new(cfg: OnlMnlConfig) -> Result<Self> {
        cfg.optimizer.validate()?;
        let schedule = cfg.schedule();
        schedule.validate()?;
        if cfg.capacity == 0 {
            return Err(Error::InvalidValue("capacity must be >= 1".into()));
        }
        let model = cfg.model.build();
        let c_h = model.bound_constants(&cfg.caps).c_h;
        Ok(Self {
            lambda: schedule.lambda(),
            schedule,
            c_h,
            model,
            round: 0,
            pilot_records: Vec::new(),
            w_pilot: None,
            w_hat: None,
            gram: None,
            loss: None,
            anchors: Vec::new(),
            pending: None,
            diag: RoundDiagnostics::default(),
            last_audit: None,
            counters: OnlMnlCounters::default(),
            name: "onl-mnl".into(),
            cfg,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn phase(&self) -> Phase {
        if self.round < self.schedule.t0 {
            Phase::Exploration
        } else {
            Phase::Optimistic
        }
    }

    /// Completed rounds.
    pub fn rounds(&self) -> usize {
        self.round
    }

    pub fn pilot(&self) -> Option<&ParamVector> {
        self.w_pilot.as_ref()
    }

    pub fn estimate(&self) -> Option<&ParamVector> {
        self.w_hat.as_ref()
    }

    pub fn gram(&self) -> Option<&GramState> {
        self.gram.as_ref()
    }

    pub fn linearized_loss(&self) -> Option<&LinearizedLoss> {
        self.loss.as_ref()
    }

    /// Anchors cached for every exploitation round so far.
    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn counters(&self) -> OnlMnlCounters {
        self.counters
    }

    pub fn model(&self) -> &Arc<dyn UtilityModel> {
        &self.model
    }

    /// Sets the pilot estimate directly and enters the optimistic phase.
    pub fn start_optimistic_phase(&mut self, pilot: ParamVector) -> Result<()> {
        crate::error::check_dim(self.model.param_dim(), pilot.len())?;
        self.gram = Some(
            GramState::new(self.model.param_dim(), self.lambda)?.with_refresh_every(self.cfg.gram_refresh_every),
        );
        self.loss = Some(LinearizedLoss::new(self.lambda, pilot.clone())?);
        self.w_hat = Some(pilot.clone());
        self.w_pilot = Some(pilot);
        Ok(())
    }

    fn fit_exploration(&mut self, rng: &mut StreamRng) -> Result<()> {
        let init = self.model.init_params(rng);
        let loss = PilotLoss::new(&self.pilot_records, self.model.as_ref());
        let fit = fit_pilot(&loss, &init, &self.cfg.optimizer, rng)?;
        self.counters.pilot_fits += 1;
        self.pilot_records.clear();
        self.start_optimistic_phase(fit.params)
    }

    fn choose_optimistic(&mut self, context: &ContextSet, revenues: &RevenueVector, t: usize) -> Result<Assortment> {
        let w = self.w_hat.as_ref().expect("estimate set in optimistic phase");
        let gram = self.gram.as_ref().expect("gram set in optimistic phase");
        let dw = self.model.param_dim();
        let n = context.n_items();
        let beta = self.schedule.beta(t);
        let mut grads = vec![0.0; n * dw];
        let mut values = vec![0.0; n];
        let mut quad = vec![0.0; n];
        let mut z = vec![0.0; n];
        for i in 0..n {
            let g = &mut grads[i * dw..(i + 1) * dw];
            values[i] = self.model.eval_grad(w.as_slice(), context.item(i), g);
            quad[i] = gram.inv_quadratic_unchecked(g);
            z[i] = optimistic_from_parts(beta, self.lambda, values[i], quad[i].sqrt(), self.c_h);
        }
        let solver = self.cfg.solver.unwrap_or_else(|| AssortmentSolver::auto(revenues));
        let solution = best_assortment(&z, revenues, self.cfg.capacity.min(n), &solver)?;
        let offered = solution.assortment;

        let mut potential = 0.0_f64;
        let mut max_norm = 0.0_f64;
        let mut anchor_grads = Vec::with_capacity(offered.len() * dw);
        let mut anchor_values = Vec::with_capacity(offered.len());
        for &i in offered.items() {
            let g = &grads[i * dw..(i + 1) * dw];
            potential = potential.max(quad[i]);
            max_norm = max_norm.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
            anchor_grads.extend_from_slice(g);
            anchor_values.push(values[i]);
        }
        self.pending = Some((
            offered.clone(),
            Anchor {
                point: w.clone(),
                values: anchor_values,
                grads: anchor_grads,
            },
        ));
        self.diag = RoundDiagnostics {
            beta: Some(beta),
            lambda: Some(self.lambda),
            potential: Some(potential),
            max_grad_norm: Some(max_norm),
            optimistic_utilities: Some(z),
        };
        self.counters.optimistic_offers += 1;
        Ok(offered)
    }
}

impl Policy for OnlMnl {
    fn name(&self) -> &str {
        &self.name
    }

    fn choose(&mut self, context: &ContextSet, revenues: &RevenueVector, rng: &mut StreamRng) -> Result<Assortment> {
        let t = self.round + 1;
        if t <= self.schedule.t0 {
            self.diag = RoundDiagnostics::default();
            self.counters.uniform_offers += 1;
            return uniform_assortment_sample(context.n_items(), self.cfg.capacity, rng);
        }
        if self.w_hat.is_none() {
            // no exploration rounds: start from a random point
            let init = self.model.init_params(rng);
            self.start_optimistic_phase(init)?;
        }
        self.choose_optimistic(context, revenues, t)
    }

    fn update(&mut self, record: &ChoiceRecord, rng: &mut StreamRng) -> Result<()> {
        self.round += 1;
        self.last_audit = None;
        let t = self.round;
        if t <= self.schedule.t0 {
            self.pilot_records.push(record.clone());
            if t == self.schedule.t0 {
                self.fit_exploration(rng)?;
            }
            return Ok(());
        }
        let (offered, anchor) = self
            .pending
            .take()
            .ok_or_else(|| Error::ConfigMismatch("update without a preceding choose".into()))?;
        if offered != record.assortment {
            return Err(Error::ConfigMismatch("record assortment differs from the offered one".into()));
        }
        let dw = self.model.param_dim();
        let gram = self.gram.as_mut().expect("gram set in optimistic phase");
        let grads: Vec<&[f64]> = anchor.grads.chunks_exact(dw).collect();
        let audits_before = gram.audits().len();
        gram.update(&grads)?;
        if gram.audits().len() > audits_before {
            self.last_audit = gram.audits().last().copied();
        }
        let loss = self.loss.as_mut().expect("loss set in optimistic phase");
        loss.push(&anchor, record.chosen_position())?;
        self.anchors.push(anchor);
        let phase_two_rounds = t - self.schedule.t0;
        if phase_two_rounds % self.cfg.refit_every.max(1) == 0 {
            let warm = self.w_hat.as_ref().expect("estimate set");
            let fit = fit_round(loss, warm, &self.cfg.optimizer)?;
            self.counters.round_fits += 1;
            self.w_hat = Some(fit.params);
        }
        Ok(())
    }

    fn diagnostics(&self) -> RoundDiagnostics {
        self.diag.clone()
    }

    fn gram_audit(&self) -> Option<GramAudit> {
        self.last_audit
    }
}
