//! Expected-reward maximization over assortments of size at most `K`.

use serde::{Deserialize, Serialize};

use crate::choice::expected_reward_unchecked;
use crate::error::{Error, Result};
use crate::model::{Assortment, RevenueVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    BruteForce,
    TopKUniform,
    RevenueOrdered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssortmentSolver {
    pub method: SolverMethod,
    pub brute_force_limit: usize,
}

impl Default for AssortmentSolver {
    fn default() -> Self {
        Self {
            method: SolverMethod::TopKUniform,
            brute_force_limit: 20,
        }
    }
}

impl AssortmentSolver {
    pub fn new(method: SolverMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    /// Top-K when revenues are uniform, brute force when small, otherwise the
    /// revenue-ordered heuristic.
    pub fn auto(revenues: &RevenueVector) -> Self {
        let method = if revenues.is_uniform() {
            SolverMethod::TopKUniform
        } else if revenues.len() <= Self::default().brute_force_limit {
            SolverMethod::BruteForce
        } else {
            SolverMethod::RevenueOrdered
        };
        Self::new(method)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub assortment: Assortment,
    pub reward: f64,
    /// Whether the result is a proven optimum.
    pub certified: bool,
}

fn reward_of(items: &[usize], utilities: &[f64], revenues: &[f64], buf: &mut (Vec<f64>, Vec<f64>)) -> f64 {
    buf.0.clear();
    buf.1.clear();
    for &i in items {
        buf.0.push(utilities[i]);
        buf.1.push(revenues[i]);
    }
    expected_reward_unchecked(&buf.0, &buf.1)
}

/// Indices sorted by descending key, ties broken by smaller index.
fn ranked_by(n: usize, key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    idx
}

fn top_k(utilities: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..utilities.len()).collect();
    let cmp = |a: &usize, b: &usize| utilities[*b].total_cmp(&utilities[*a]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

fn validate(utilities: &[f64], revenues: &RevenueVector, capacity: usize) -> Result<()> {
    let n = utilities.len();
    if n == 0 || capacity == 0 || capacity > n {
        return Err(Error::InvalidK { capacity, n_items: n });
    }
    if revenues.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: revenues.len(),
        });
    }
    if let Some(i) = utilities.iter().position(|u| !u.is_finite()) {
        return Err(Error::NonFiniteUtility(i));
    }
    Ok(())
}

/// Exhaustive search over every non-empty subset of size at most `capacity`.
/// Among equal rewards the lexicographically first subset (in enumeration
/// order: by size, then index) wins.
fn brute_force(utilities: &[f64], revenues: &[f64], capacity: usize) -> (Vec<usize>, f64) {
    let n = utilities.len();
    let mut buf = (Vec::new(), Vec::new());
    let mut best: (Vec<usize>, f64) = (vec![0], f64::NEG_INFINITY);
    let mut current = Vec::with_capacity(capacity);
    for size in 1..=capacity {
        fn rec(
            start: usize,
            size: usize,
            n: usize,
            current: &mut Vec<usize>,
            visit: &mut dyn FnMut(&[usize]),
        ) {
            if current.len() == size {
                visit(current);
                return;
            }
            let remaining = size - current.len();
            for i in start..=n - remaining {
                current.push(i);
                rec(i + 1, size, n, current, visit);
                current.pop();
            }
        }
        rec(0, size, n, &mut current, &mut |items| {
            let r = reward_of(items, utilities, revenues, &mut buf);
            if r > best.1 {
                best = (items.to_vec(), r);
            }
        });
    }
    best
}

fn revenue_ordered(utilities: &[f64], revenues: &[f64], capacity: usize) -> (Vec<usize>, f64) {
    let n = utilities.len();
    let mut buf = (Vec::new(), Vec::new());
    let by_revenue = ranked_by(n, |i| revenues[i]);
    let mut candidates: Vec<Vec<usize>> = Vec::new();
    for j in 1..=n {
        let prefix = &by_revenue[..j];
        if j <= capacity {
            candidates.push(prefix.to_vec());
        } else {
            // highest-weight items among the j highest-revenue ones
            let mut within: Vec<usize> = prefix.to_vec();
            within.sort_by(|&a, &b| utilities[b].total_cmp(&utilities[a]).then(a.cmp(&b)));
            within.truncate(capacity);
            candidates.push(within);
        }
    }
    candidates.push(top_k(utilities, capacity));
    let weighted: Vec<f64> = (0..n).map(|i| revenues[i] * utilities[i].exp()).collect();
    candidates.push(top_k(&weighted, capacity));

    let mut best: (Vec<usize>, f64) = (Vec::new(), f64::NEG_INFINITY);
    for mut c in candidates {
        c.sort_unstable();
        let r = reward_of(&c, utilities, revenues, &mut buf);
        if r > best.1 || (r == best.1 && c < best.0) {
            best = (c, r);
        }
    }
    best
}

/// Maximizes `sum_{i in S} r_i e^{u_i} / (1 + sum_{j in S} e^{u_j})` over
/// `1 <= |S| <= capacity`.
pub fn best_assortment(
    utilities: &[f64],
    revenues: &RevenueVector,
    capacity: usize,
    solver: &AssortmentSolver,
) -> Result<Solution> {
    validate(utilities, revenues, capacity)?;
    let n = utilities.len();
    let r = revenues.as_slice();
    let (items, reward, certified) = match solver.method {
        SolverMethod::TopKUniform => {
            if !revenues.is_uniform() {
                return Err(Error::MethodRevenueMismatch);
            }
            let items = top_k(utilities, capacity);
            let reward = reward_of(&items, utilities, r, &mut (Vec::new(), Vec::new()));
            (items, reward, true)
        }
        SolverMethod::BruteForce => {
            if n > solver.brute_force_limit {
                return Err(Error::BruteForceLimitExceeded {
                    n_items: n,
                    limit: solver.brute_force_limit,
                });
            }
            let (items, reward) = brute_force(utilities, r, capacity);
            (items, reward, true)
        }
        SolverMethod::RevenueOrdered => {
            let (items, reward) = revenue_ordered(utilities, r, capacity);
            // revenue-ordered sets are optimal without a binding capacity
            (items, reward, capacity >= n || revenues.is_uniform())
        }
    };
    Ok(Solution {
        assortment: Assortment::new(&items, capacity, n)?,
        reward,
        certified,
    })
}

/// Exact optimal expected reward under the given (true) utilities.
pub fn oracle_optimal_reward(
    utilities: &[f64],
    revenues: &RevenueVector,
    capacity: usize,
    brute_force_limit: usize,
) -> Result<f64> {
    let method = if revenues.is_uniform() {
        SolverMethod::TopKUniform
    } else {
        SolverMethod::BruteForce
    };
    let solver = AssortmentSolver {
        method,
        brute_force_limit,
    };
    best_assortment(utilities, revenues, capacity, &solver).map(|s| s.reward)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::Rng;
    use std::time::Instant;

    fn uniform(n: usize) -> RevenueVector {
        RevenueVector::uniform(n, 1.0).unwrap()
    }

    #[test]
    fn top_k_example() {
        let u = [3.0, 1.0, 2.0, 0.0];
        let s = best_assortment(&u, &uniform(4), 2, &AssortmentSolver::default()).unwrap();
        assert_eq!(s.assortment.items(), &[0, 2]);
        let e3 = 3f64.exp();
        let e2 = 2f64.exp();
        assert!((s.reward - (e3 + e2) / (1.0 + e3 + e2)).abs() < 1e-14);
        assert!((s.reward - 0.964881).abs() < 1e-6);
    }

    #[test]
    fn single_item() {
        for method in [SolverMethod::BruteForce, SolverMethod::TopKUniform, SolverMethod::RevenueOrdered] {
            let s = best_assortment(&[0.0], &uniform(1), 1, &AssortmentSolver::new(method)).unwrap();
            assert_eq!(s.assortment.items(), &[0]);
            assert!((s.reward - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn errors() {
        let r = RevenueVector::new(vec![0.1, 0.5]).unwrap();
        assert!(matches!(
            best_assortment(&[0.0, 1.0], &r, 1, &AssortmentSolver::default()),
            Err(Error::MethodRevenueMismatch)
        ));
        assert!(matches!(
            best_assortment(&[0.0, 1.0], &r, 3, &AssortmentSolver::new(SolverMethod::BruteForce)),
            Err(Error::InvalidK { .. })
        ));
        assert!(matches!(
            oracle_optimal_reward(&[0.0; 30], &RevenueVector::new(vec![0.5; 29].into_iter().chain([0.4]).collect()).unwrap(), 2, 20),
            Err(Error::BruteForceLimitExceeded { .. })
        ));
    }

    #[test]
    fn crafted_revenue_instance_prefers_low_utility_item() {
        let u = [2.0, 1.9, 0.0];
        let r = RevenueVector::new(vec![0.1, 0.1, 1.0]).unwrap();
        let s = best_assortment(&u, &r, 1, &AssortmentSolver::new(SolverMethod::BruteForce)).unwrap();
        assert_eq!(s.assortment.items(), &[2]);
        assert!((oracle_optimal_reward(&u, &r, 1, 20).unwrap() - 0.5).abs() < 1e-15);
        let greedy = best_assortment(&[2.0, 1.9, 0.0], &uniform(3), 1, &AssortmentSolver::default()).unwrap();
        assert_eq!(greedy.assortment.items(), &[0]);
    }

    #[test]
    fn heuristics_never_beat_brute_force() {
        let mut rng = stream(1, Stream::Audit);
        for _ in 0..200 {
            let u: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            let r = RevenueVector::new((0..8).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            let exact = best_assortment(&u, &r, 3, &AssortmentSolver::new(SolverMethod::BruteForce)).unwrap();
            let ro = best_assortment(&u, &r, 3, &AssortmentSolver::new(SolverMethod::RevenueOrdered)).unwrap();
            assert!(ro.reward <= exact.reward + 1e-15);
            let topk = top_k(&u, 3);
            let tk = reward_of(&topk, &u, r.as_slice(), &mut (Vec::new(), Vec::new()));
            assert!(tk <= exact.reward + 1e-15);
        }
    }

    #[test]
    fn revenue_ordered_exact_without_capacity() {
        let mut rng = stream(2, Stream::Audit);
        for _ in 0..200 {
            let u: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
            let r = RevenueVector::new((0..7).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            let exact = best_assortment(&u, &r, 7, &AssortmentSolver::new(SolverMethod::BruteForce)).unwrap();
            let ro = best_assortment(&u, &r, 7, &AssortmentSolver::new(SolverMethod::RevenueOrdered)).unwrap();
            assert!(ro.certified);
            assert!((ro.reward - exact.reward).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_break_to_smaller_index() {
        let s = best_assortment(&[1.0, 1.0, 1.0], &uniform(3), 2, &AssortmentSolver::default()).unwrap();
        assert_eq!(s.assortment.items(), &[0, 1]);
    }

    #[test]
    fn uniform_oracle_is_fast_at_scale() {
        let mut rng = stream(3, Stream::Audit);
        let u: Vec<f64> = (0..100).map(|_| rng.random_range(-3.0..3.0)).collect();
        let r = uniform(100);
        let _ = oracle_optimal_reward(&u, &r, 5, 20).unwrap();
        let start = Instant::now();
        let reps = 100;
        for _ in 0..reps {
            oracle_optimal_reward(&u, &r, 5, 20).unwrap();
        }
        assert!(start.elapsed().as_secs_f64() / (reps as f64) < 1e-3);
    }
}
