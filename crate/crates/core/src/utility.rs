//! Parametric utility functions `f_w(x)` with hand-derived gradients.

use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};
use crate::model::ParamVector;

/// Norm caps under which bound constants are computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCaps {
    pub param_norm: f64,
    pub feature_norm: f64,
}

impl Default for BoundCaps {
    fn default() -> Self {
        Self {
            param_norm: 1.0,
            feature_norm: 1.0,
        }
    }
}

/// Bounds on `|f|`, `||grad f||` and the Hessian operator norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub c_f: f64,
    pub c_g: f64,
    pub c_h: f64,
}

pub trait UtilityModel: Send + Sync + Debug {
    fn kind(&self) -> ModelKind;

    fn input_dim(&self) -> usize;

    fn param_dim(&self) -> usize;

    /// Unchecked evaluation; callers guarantee dimensions.
    fn eval(&self, w: &[f64], x: &[f64]) -> f64;

    /// Unchecked evaluation writing the parameter gradient into `grad`.
    fn eval_grad(&self, w: &[f64], x: &[f64], grad: &mut [f64]) -> f64;

    fn bound_constants(&self, caps: &BoundCaps) -> BoundConstants;

    /// Random starting point for learning.
    fn init_params(&self, rng: &mut dyn RngCore) -> ParamVector;
}

/// Serializable description of a model class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelKind {
    Linear { dim: usize },
    TwoLayer { input_dim: usize, hidden: usize },
    Cosine { dim: usize },
}

impl ModelKind {
    pub fn build(self) -> Arc<dyn UtilityModel> {
        match self {
            ModelKind::Linear { dim } => Arc::new(LinearUtility::new(dim)),
            ModelKind::TwoLayer { input_dim, hidden } => {
                Arc::new(TwoLayerSigmoidNet::new(input_dim, hidden))
            }
            ModelKind::Cosine { dim } => Arc::new(CosineMixtureUtility::new(dim)),
        }
    }
}

pub fn value(model: &dyn UtilityModel, w: &ParamVector, x: &[f64]) -> Result<f64> {
    check_dim(model.param_dim(), w.len())?;
    check_dim(model.input_dim(), x.len())?;
    Ok(model.eval(w.as_slice(), x))
}

pub fn grad(model: &dyn UtilityModel, w: &ParamVector, x: &[f64]) -> Result<ParamVector> {
    check_dim(model.param_dim(), w.len())?;
    check_dim(model.input_dim(), x.len())?;
    let mut g = vec![0.0; model.param_dim()];
    model.eval_grad(w.as_slice(), x, &mut g);
    Ok(ParamVector(g))
}

pub fn bound_constants(model: &dyn UtilityModel, caps: &BoundCaps) -> BoundConstants {
    model.bound_constants(caps)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `f_w(x) = w^T x`.
#[derive(Debug, Clone, Copy)]
pub struct LinearUtility {
    dim: usize,
}

impl LinearUtility {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl UtilityModel for LinearUtility {
    fn kind(&self) -> ModelKind {
        ModelKind::Linear { dim: self.dim }
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn param_dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, w: &[f64], x: &[f64]) -> f64 {
        dot(w, x)
    }

    fn eval_grad(&self, w: &[f64], x: &[f64], grad: &mut [f64]) -> f64 {
        grad.copy_from_slice(x);
        dot(w, x)
    }

    fn bound_constants(&self, caps: &BoundCaps) -> BoundConstants {
        BoundConstants {
            c_f: caps.param_norm * caps.feature_norm,
            c_g: caps.feature_norm,
            c_h: 0.0,
        }
    }

    fn init_params(&self, _rng: &mut dyn RngCore) -> ParamVector {
        ParamVector::zeros(self.dim)
    }
}

/// `f_w(x) = w2^T sigmoid(W1 x + b1) + b2`.
///
/// Flat layout: `W1` row-major (`hidden x input_dim`), then `b1`, `w2`, `b2`.
#[derive(Debug, Clone, Copy)]
pub struct TwoLayerSigmoidNet {
    input_dim: usize,
    hidden: usize,
}

impl TwoLayerSigmoidNet {
    pub fn new(input_dim: usize, hidden: usize) -> Self {
        Self { input_dim, hidden }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input_dim;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden;
        (b1, w2, b2)
    }

    /// Assembles a flat parameter vector from its blocks.
    pub fn pack(&self, w1: &[f64], b1: &[f64], w2: &[f64], b2: f64) -> ParamVector {
        assert_eq!(w1.len(), self.hidden * self.input_dim);
        assert_eq!(b1.len(), self.hidden);
        assert_eq!(w2.len(), self.hidden);
        let mut v = Vec::with_capacity(self.param_dim());
        v.extend_from_slice(w1);
        v.extend_from_slice(b1);
        v.extend_from_slice(w2);
        v.push(b2);
        ParamVector(v)
    }
}

impl UtilityModel for TwoLayerSigmoidNet {
    fn kind(&self) -> ModelKind {
        ModelKind::TwoLayer {
            input_dim: self.input_dim,
            hidden: self.hidden,
        }
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn param_dim(&self) -> usize {
        self.hidden * self.input_dim + 2 * self.hidden + 1
    }

    fn eval(&self, w: &[f64], x: &[f64]) -> f64 {
        let (ob1, ow2, ob2) = self.offsets();
        let d = self.input_dim;
        let mut out = w[ob2];
        for k in 0..self.hidden {
            let pre = dot(&w[k * d..(k + 1) * d], x) + w[ob1 + k];
            out += w[ow2 + k] * sigmoid(pre);
        }
        out
    }

    fn eval_grad(&self, w: &[f64], x: &[f64], grad: &mut [f64]) -> f64 {
        let (ob1, ow2, ob2) = self.offsets();
        let d = self.input_dim;
        let mut out = w[ob2];
        for k in 0..self.hidden {
            let pre = dot(&w[k * d..(k + 1) * d], x) + w[ob1 + k];
            let s = sigmoid(pre);
            out += w[ow2 + k] * s;
            // d out / d pre_k
            let delta = w[ow2 + k] * s * (1.0 - s);
            for (g, xj) in grad[k * d..(k + 1) * d].iter_mut().zip(x) {
                *g = delta * xj;
            }
            grad[ob1 + k] = delta;
            grad[ow2 + k] = s;
        }
        grad[ob2] = 1.0;
        out
    }

    /// With `||w|| <= P` and `||x|| <= X`:
    /// - `|f| <= ||w2||_1 + |b2| <= sqrt(m + 1) P`;
    /// - `||grad||^2 <= m + 1 + (P^2 / 16)(X^2 + 1)` since `sigmoid' <= 1/4`;
    /// - the Hessian is block-diagonal per neuron over `(W1_k, b1_k, w2_k)`, each
    ///   block bounded by `P |sigmoid''|_max (1 + X^2) + sqrt(1 + X^2) / 4` with
    ///   `|sigmoid''| <= 1 / (6 sqrt 3)`.
    fn bound_constants(&self, caps: &BoundCaps) -> BoundConstants {
        let m = self.hidden as f64;
        let p = caps.param_norm;
        let z2 = 1.0 + caps.feature_norm * caps.feature_norm;
        BoundConstants {
            c_f: (m + 1.0).sqrt() * p,
            c_g: (m + 1.0 + p * p * z2 / 16.0).sqrt(),
            c_h: p * z2 / (6.0 * 3f64.sqrt()) + z2.sqrt() / 4.0,
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per layer.
    fn init_params(&self, rng: &mut dyn RngCore) -> ParamVector {
        let (_, ow2, _) = self.offsets();
        let a1 = 1.0 / (self.input_dim as f64).sqrt();
        let a2 = 1.0 / (self.hidden as f64).sqrt();
        let v = (0..self.param_dim())
            .map(|i| {
                let a = if i < ow2 { a1 } else { a2 };
                rng.random_range(-a..=a)
            })
            .collect();
        ParamVector(v)
    }
}

/// `f_w(x) = cos(2 pi x^T w) - (x^T w) / 2`, the misspecified ground truth.
#[derive(Debug, Clone, Copy)]
pub struct CosineMixtureUtility {
    dim: usize,
}

impl CosineMixtureUtility {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl UtilityModel for CosineMixtureUtility {
    fn kind(&self) -> ModelKind {
        ModelKind::Cosine { dim: self.dim }
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn param_dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, w: &[f64], x: &[f64]) -> f64 {
        let s = dot(w, x);
        (2.0 * PI * s).cos() - 0.5 * s
    }

    fn eval_grad(&self, w: &[f64], x: &[f64], grad: &mut [f64]) -> f64 {
        let s = dot(w, x);
        let ds = -2.0 * PI * (2.0 * PI * s).sin() - 0.5;
        for (g, xj) in grad.iter_mut().zip(x) {
            *g = ds * xj;
        }
        (2.0 * PI * s).cos() - 0.5 * s
    }

    fn bound_constants(&self, caps: &BoundCaps) -> BoundConstants {
        let s = caps.param_norm * caps.feature_norm;
        let x = caps.feature_norm;
        BoundConstants {
            c_f: 1.0 + 0.5 * s,
            c_g: (2.0 * PI + 0.5) * x,
            c_h: 4.0 * PI * PI * x * x,
        }
    }

    fn init_params(&self, rng: &mut dyn RngCore) -> ParamVector {
        ParamVector((0..self.dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
    }
}
