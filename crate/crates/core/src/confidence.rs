//! Gram matrix with an incrementally maintained inverse, parameter
//! schedules, and optimistic utilities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Drift and spectrum measurement taken at an audit point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramAudit {
    pub update_count: usize,
    pub min_eig: f64,
    /// `max |V V_inv - I|` before the inverse is refreshed.
    pub inv_drift: f64,
}

/// `V = lambda I + sum g g^T` together with `V^{-1}` kept current by
/// Sherman-Morrison updates and re-inverted every `refresh_every` updates.
#[derive(Debug, Clone)]
pub struct GramState {
    v: DMatrix<f64>,
    v_inv: DMatrix<f64>,
    lambda: f64,
    update_count: usize,
    refresh_every: usize,
    audits: Vec<GramAudit>,
}

impl GramState {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || dim == 0 {
            return Err(Error::InvalidValue(format!(
                "gram matrix needs dim >= 1 and lambda > 0 (got {dim}, {lambda})"
            )));
        }
        Ok(Self {
            v: DMatrix::identity(dim, dim) * lambda,
            v_inv: DMatrix::identity(dim, dim) / lambda,
            lambda,
            update_count: 0,
            refresh_every: 100,
            audits: Vec::new(),
        })
    }

    /// Period of the full re-inversion; 0 disables it.
    pub fn with_refresh_every(mut self, every: usize) -> Self {
        self.refresh_every = every;
        self
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn update_count(&self) -> usize {
        self.update_count
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.v_inv
    }

    pub fn audits(&self) -> &[GramAudit] {
        &self.audits
    }

    /// Adds `g g^T` for every gradient, one Sherman-Morrison step each.
    pub fn update<G: AsRef<[f64]>>(&mut self, gradients: &[G]) -> Result<()> {
        let dim = self.dim();
        for g in gradients {
            check_dim(dim, g.as_ref().len())?;
        }
        for g in gradients {
            let g = DVector::from_column_slice(g.as_ref());
            self.v.ger(1.0, &g, &g, 1.0);
            let vg = &self.v_inv * &g;
            let denom = 1.0 + g.dot(&vg);
            self.v_inv.ger(-1.0 / denom, &vg, &vg, 1.0);
            self.update_count += 1;
            if self.refresh_every > 0 && self.update_count % self.refresh_every == 0 {
                let audit = self.audit();
                self.audits.push(audit);
                if let Some(inv) = self.direct_inverse() {
                    self.v_inv = inv;
                }
            }
        }
        Ok(())
    }

    /// Inverse via Cholesky of the accumulated matrix.
    pub fn direct_inverse(&self) -> Option<DMatrix<f64>> {
        self.v.clone().cholesky().map(|c| c.inverse())
    }

    /// `max |V V_inv - I|` of the maintained inverse.
    pub fn inverse_drift(&self) -> f64 {
        let prod = &self.v * &self.v_inv;
        let dim = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..dim {
            for j in 0..dim {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod[(i, j)] - target).abs());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.v
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn audit(&self) -> GramAudit {
        GramAudit {
            update_count: self.update_count,
            min_eig: self.min_eigenvalue(),
            inv_drift: self.inverse_drift(),
        }
    }

    /// `g^T V^{-1} g`.
    pub fn inv_quadratic(&self, g: &[f64]) -> Result<f64> {
        check_dim(self.dim(), g.len())?;
        Ok(self.inv_quadratic_unchecked(g))
    }

    pub(crate) fn inv_quadratic_unchecked(&self, g: &[f64]) -> f64 {
        let dim = g.len();
        let mut total = 0.0;
        for i in 0..dim {
            let col = self.v_inv.column(i);
            let mut s = 0.0;
            for j in 0..dim {
                s += col[j] * g[j];
            }
            total += g[i] * s;
        }
        total.max(0.0)
    }
}

/// Shorthand for [`GramState::update`].
pub fn gram_update<G: AsRef<[f64]>>(state: &mut GramState, gradients: &[G]) -> Result<()> {
    state.update(gradients)
}

/// `||g||_{V^{-1}}`.
pub fn mahalanobis_inv_norm(state: &GramState, g: &[f64]) -> Result<f64> {
    Ok(state.inv_quadratic(g)?.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// `c_beta kappa^-4 d_w t / T`
    Linear,
    /// `c_beta mu^-2 kappa^-4 d_w`, independent of `t`
    Constant,
}

/// Exploration length, regularization and confidence radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub horizon: usize,
    pub t0: usize,
    pub kappa: f64,
    pub mu: f64,
    pub c_lambda: f64,
    pub c_beta: f64,
    pub d_w: usize,
    pub beta_mode: BetaMode,
}

impl Schedule {
    /// `t0 = ceil(kappa^{-3/2} d_w sqrt(T))`.
    pub fn default_t0(kappa: f64, d_w: usize, horizon: usize) -> usize {
        (kappa.powf(-1.5) * d_w as f64 * (horizon as f64).sqrt()).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.horizon >= 1
            && self.kappa > 0.0
            && self.kappa <= 0.25
            && self.mu > 0.0
            && self.c_lambda > 0.0
            && self.c_beta >= 0.0
            && self.d_w >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidValue(format!("invalid schedule {self:?}")))
        }
    }

    /// `c_lambda kappa^{-5/2} d_w sqrt(T)`.
    pub fn lambda(&self) -> f64 {
        self.c_lambda * self.kappa.powf(-2.5) * self.d_w as f64 * (self.horizon as f64).sqrt()
    }

    pub fn beta(&self, t: usize) -> f64 {
        let base = self.c_beta * self.kappa.powi(-4) * self.d_w as f64;
        match self.beta_mode {
            BetaMode::Linear => base * t as f64 / self.horizon as f64,
            BetaMode::Constant => base / (self.mu * self.mu),
        }
    }
}

/// `z = f_hat + sqrt(beta_t) ||g||_{V^{-1}} + beta_t C_h / lambda`.
pub fn optimistic_utility(
    state: &GramState,
    schedule: &Schedule,
    t: usize,
    f_hat: f64,
    g: &[f64],
    c_h: f64,
) -> Result<f64> {
    if t <= schedule.t0 {
        return Err(Error::ScheduleOutOfRange {
            round: t,
            t0: schedule.t0,
        });
    }
    let beta = schedule.beta(t);
    Ok(optimistic_from_parts(beta, state.lambda(), f_hat, mahalanobis_inv_norm(state, g)?, c_h))
}

pub(crate) fn optimistic_from_parts(beta: f64, lambda: f64, f_hat: f64, inv_norm: f64, c_h: f64) -> f64 {
    f_hat + beta.sqrt() * inv_norm + beta * c_h / lambda
}

/// Per-prefix comparison of the summed potential against its bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialRow {
    /// Round `t` at which the prefix `t0+1 .. t-1` is evaluated.
    pub round: usize,
    pub lhs: f64,
    pub rhs: f64,
}

/// Evaluates `sum_{s=t0+1}^{t-1} min(1, x_s) <= 2 d_w log(1 + t C_g^2 / (d_w lambda))`
/// for every `t`, where `potentials[j]` is `max_i ||g||^2_{V^{-1}}` of round `t0 + 1 + j`.
pub fn elliptical_potential_rows(potentials: &[f64], schedule: &Schedule, lambda: f64, c_g: f64) -> Vec<PotentialRow> {
    let dw = schedule.d_w as f64;
    let mut lhs = 0.0;
    let mut rows = Vec::with_capacity(potentials.len());
    for (j, x) in potentials.iter().enumerate() {
        lhs += x.min(1.0);
        let round = schedule.t0 + j + 2;
        let rhs = 2.0 * dw * (1.0 + round as f64 * c_g * c_g / (dw * lambda)).ln();
        rows.push(PotentialRow { round, lhs, rhs });
    }
    rows
}

/// True iff the potential bound holds at every prefix.
pub fn elliptical_potential_check(potentials: &[f64], schedule: &Schedule, lambda: f64, c_g: f64) -> bool {
    elliptical_potential_rows(potentials, schedule, lambda, c_g)
        .iter()
        .all(|r| r.lhs <= r.rhs)
}
