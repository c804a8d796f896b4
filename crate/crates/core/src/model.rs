//! Domain types shared by every module: contexts, assortments, choices,
//! revenues and parameter vectors.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature vectors of the `N` items available in one round, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSet {
    features: Vec<f64>,
    dim: usize,
    round: usize,
}

impl ContextSet {
    pub fn new(items: Vec<Vec<f64>>, round: usize) -> Result<Self> {
        let first = items.first().ok_or(Error::EmptyDataset)?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::InvalidValue("feature dimension must be >= 1".into()));
        }
        let mut features = Vec::with_capacity(dim * items.len());
        for item in &items {
            crate::error::check_dim(dim, item.len())?;
            features.extend_from_slice(item);
        }
        Ok(Self { features, dim, round })
    }

    /// Builds a context set from a flat row-major buffer of `n * dim` values.
    pub fn from_flat(features: Vec<f64>, dim: usize, round: usize) -> Result<Self> {
        if dim == 0 || features.is_empty() || features.len() % dim != 0 {
            return Err(Error::InvalidValue(format!(
                "flat buffer of length {} is not a non-empty multiple of dim {dim}",
                features.len()
            )));
        }
        Ok(Self { features, dim, round })
    }

    pub fn n_items(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn item(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn items(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }

    /// Fails if any item lies outside the closed unit ball (with 1e-9 slack).
    pub fn check_unit_ball(&self) -> Result<()> {
        for (i, x) in self.items().enumerate() {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1.0 + 1e-9 {
                return Err(Error::InvalidValue(format!(
                    "item {i} has norm {norm} > 1 with unit-ball enforcement on"
                )));
            }
        }
        Ok(())
    }
}

/// A canonical (sorted, distinct) set of offered item indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assortment {
    items: Vec<usize>,
    capacity: usize,
}

impl Assortment {
    /// Validates and canonicalizes `indices`.
    pub fn new(indices: &[usize], capacity: usize, n_items: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyAssortment);
        }
        if indices.len() > capacity {
            return Err(Error::CapacityExceeded {
                size: indices.len(),
                capacity,
            });
        }
        let mut items = indices.to_vec();
        items.sort_unstable();
        for w in items.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateIndex(w[0]));
            }
        }
        if let Some(&last) = items.last() {
            if last >= n_items {
                return Err(Error::IndexOutOfRange {
                    index: last,
                    n_items,
                });
            }
        }
        Ok(Self { items, capacity })
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Position of `item` inside the assortment, if offered.
    pub fn position(&self, item: usize) -> Option<usize> {
        self.items.binary_search(&item).ok()
    }
}

/// Shorthand for [`Assortment::new`].
pub fn make_assortment(indices: &[usize], capacity: usize, n_items: usize) -> Result<Assortment> {
    Assortment::new(indices, capacity, n_items)
}

/// Number of assortments of each size `1..=capacity`, as floating weights.
fn size_weights(n_items: usize, capacity: usize) -> Vec<f64> {
    let mut weights = Vec::with_capacity(capacity);
    let mut c = 1.0_f64;
    for k in 1..=capacity.min(n_items) {
        c = c * (n_items + 1 - k) as f64 / k as f64;
        weights.push(c);
    }
    weights
}

/// Draws an assortment uniformly from all non-empty subsets of size at most
/// `capacity`: first the size with probability `C(N,k) / sum_j C(N,j)`, then a
/// uniform subset of that size.
pub fn uniform_assortment_sample<R: Rng + ?Sized>(
    n_items: usize,
    capacity: usize,
    rng: &mut R,
) -> Result<Assortment> {
    if n_items == 0 || capacity == 0 {
        return Err(Error::InvalidK { capacity, n_items });
    }
    let weights = size_weights(n_items, capacity);
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut size = weights.len();
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            size = k + 1;
            break;
        }
        u -= w;
    }
    let picked = rand::seq::index::sample(rng, n_items, size).into_vec();
    Assortment::new(&picked, capacity, n_items)
}

/// One round's observed feedback. `chosen` is `None` for the outside option
/// and `Some(i)` for item index `i` of the context set.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceRecord {
    pub context: Arc<ContextSet>,
    pub assortment: Assortment,
    pub chosen: Option<usize>,
}

impl ChoiceRecord {
    pub fn new(context: Arc<ContextSet>, assortment: Assortment, chosen: Option<usize>) -> Result<Self> {
        if let Some(&last) = assortment.items().last() {
            if last >= context.n_items() {
                return Err(Error::IndexOutOfRange {
                    index: last,
                    n_items: context.n_items(),
                });
            }
        }
        if let Some(i) = chosen {
            if assortment.position(i).is_none() {
                return Err(Error::InvalidValue(format!("chosen item {i} was not offered")));
            }
        }
        Ok(Self {
            context,
            assortment,
            chosen,
        })
    }

    /// Position of the chosen item inside the assortment (`None` = outside).
    pub fn chosen_position(&self) -> Option<usize> {
        self.chosen.and_then(|i| self.assortment.position(i))
    }

    /// One-hot vector over `[outside, assortment...]`.
    pub fn one_hot(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.assortment.len() + 1];
        match self.chosen_position() {
            None => y[0] = 1.0,
            Some(k) => y[k + 1] = 1.0,
        }
        y
    }

    /// External encoding: 0 for the outside option, `i + 1` for item `i`.
    pub fn chosen_code(&self) -> usize {
        self.chosen.map_or(0, |i| i + 1)
    }
}

/// Per-item revenues in `[0, 1]`; the outside option always earns 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueVector(Vec<f64>);

impl RevenueVector {
    pub fn new(revenues: Vec<f64>) -> Result<Self> {
        if let Some(r) = revenues.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidValue(format!("revenue {r} outside [0, 1]")));
        }
        Ok(Self(revenues))
    }

    pub fn uniform(n_items: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n_items])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        self.0.windows(2).all(|w| w[0] == w[1])
    }
}

/// A flat parameter vector of a utility model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Projects onto the Euclidean ball of the given radius (no-op for `inf`).
    pub fn project_onto_ball(&mut self, radius: f64) {
        let norm = self.norm();
        if radius.is_finite() && norm > radius {
            let scale = radius / norm;
            self.0.iter_mut().for_each(|v| *v *= scale);
        }
    }

    /// Little-endian `f64` encoding, 8 bytes per entry.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.0.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 8 != 0 {
            return Err(Error::InvalidValue(format!(
                "byte length {} is not a multiple of 8",
                bytes.len()
            )));
        }
        Ok(Self(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        ))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}
