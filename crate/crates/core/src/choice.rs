//! Multinomial-logit choice probabilities, sampling and expected reward.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Choice probabilities over `{outside} ∪ S`, aligned with the assortment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceDistribution {
    pub p_outside: f64,
    pub p_items: Vec<f64>,
}

impl ChoiceDistribution {
    pub fn total(&self) -> f64 {
        self.p_outside + self.p_items.iter().sum::<f64>()
    }
}

/// `log(1 + sum_j exp(u_j))`, shifted by `max(0, max_j u_j)`.
pub fn log_normalizer(utilities: &[f64]) -> f64 {
    let shift = utilities.iter().copied().fold(0.0_f64, f64::max);
    let sum: f64 = (-shift).exp() + utilities.iter().map(|u| (u - shift).exp()).sum::<f64>();
    shift + sum.ln()
}

/// Writes MNL probabilities for the offered items into `out` and returns the
/// outside-option probability. Utilities must be finite.
pub(crate) fn probabilities_into(utilities: &[f64], out: &mut [f64]) -> f64 {
    let shift = utilities.iter().copied().fold(0.0_f64, f64::max);
    let outside = (-shift).exp();
    let mut total = outside;
    for (o, u) in out.iter_mut().zip(utilities) {
        *o = (u - shift).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
    outside / total
}

fn check_finite(utilities: &[f64]) -> Result<()> {
    match utilities.iter().position(|u| !u.is_finite()) {
        Some(i) => Err(Error::NonFiniteUtility(i)),
        None => Ok(()),
    }
}

pub fn choice_probabilities(utilities: &[f64]) -> Result<ChoiceDistribution> {
    check_finite(utilities)?;
    let mut p_items = vec![0.0; utilities.len()];
    let p_outside = probabilities_into(utilities, &mut p_items);
    Ok(ChoiceDistribution { p_outside, p_items })
}

/// One multinomial draw: `None` for the outside option, else the position
/// inside the assortment. Consumes exactly one uniform variate.
pub fn sample_choice<R: Rng + ?Sized>(dist: &ChoiceDistribution, rng: &mut R) -> Option<usize> {
    let u: f64 = rng.random();
    let mut acc = dist.p_outside;
    if u < acc {
        return None;
    }
    for (k, p) in dist.p_items.iter().enumerate() {
        acc += p;
        if u < acc {
            return Some(k);
        }
    }
    // rounding leftovers go to the last positive-probability item
    dist.p_items.iter().rposition(|p| *p > 0.0)
}

/// `sum_i exp(u_i) r_i / (1 + sum_j exp(u_j))`.
pub fn expected_reward(utilities: &[f64], revenues: &[f64]) -> Result<f64> {
    if utilities.len() != revenues.len() {
        return Err(Error::LengthMismatch {
            left: utilities.len(),
            right: revenues.len(),
        });
    }
    check_finite(utilities)?;
    Ok(expected_reward_unchecked(utilities, revenues))
}

pub(crate) fn expected_reward_unchecked(utilities: &[f64], revenues: &[f64]) -> f64 {
    let shift = utilities.iter().copied().fold(0.0_f64, f64::max);
    let mut num = 0.0;
    let mut den = (-shift).exp();
    for (u, r) in utilities.iter().zip(revenues) {
        let e = (u - shift).exp();
        num += e * r;
        den += e;
    }
    num / den
}

/// Whether `|R(u, r) - R(v, r)| <= max_i |u_i - v_i|` holds for this instance.
pub fn reward_gap_bound_check(u: &[f64], v: &[f64], revenues: &[f64]) -> Result<bool> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let gap = (expected_reward(u, revenues)? - expected_reward(v, revenues)?).abs();
    let max_diff = u
        .iter()
        .zip(v)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(gap <= max_diff + 1e-15)
}

/// The MNL map `h(a)_i = exp(a_i) / (1 + sum_j exp(a_j))`.
pub fn mnl_map(a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    probabilities_into(a, &mut out);
    out
}

/// `min_i h_i(a) (1 - sum_j h_j(a))` at a single point.
pub fn curvature_floor_at(a: &[f64]) -> f64 {
    let mut h = vec![0.0; a.len()];
    let outside = probabilities_into(a, &mut h);
    h.iter().copied().fold(f64::INFINITY, f64::min) * outside
}

/// Estimates `kappa_0 = min_{||a|| <= cap} min_i h_i(a) (1 - sum_j h_j(a))`.
///
/// Evaluates a cube grid with `grid_resolution` points per axis, radially
/// projecting points outside the ball onto its surface, then refines the best
/// grid point by projected descent on `log h_i + log h_0`. Every evaluated
/// point lies in the ball, so the result never undercuts the true minimum by
/// more than the refinement misses, and it is exact in one dimension.
pub fn reverse_lipschitz_constant(dim: usize, cap: f64, grid_resolution: usize) -> f64 {
    assert!(dim >= 1, "dim must be >= 1");
    if cap <= 0.0 {
        return curvature_floor_at(&vec![0.0; dim]);
    }
    let res = grid_resolution.max(2);
    let step = 2.0 * cap / (res - 1) as f64;
    let mut idx = vec![0usize; dim];
    let mut best = f64::INFINITY;
    let mut best_point = vec![0.0; dim];
    let mut point = vec![0.0; dim];
    loop {
        for (p, i) in point.iter_mut().zip(&idx) {
            *p = -cap + step * *i as f64;
        }
        project_to_ball(&mut point, cap);
        let v = curvature_floor_at(&point);
        if v < best {
            best = v;
            best_point.copy_from_slice(&point);
        }
        // odometer increment
        let mut k = 0;
        while k < dim {
            idx[k] += 1;
            if idx[k] < res {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == dim {
            break;
        }
    }
    refine_min(&mut best_point, cap, step).min(best)
}

fn project_to_ball(a: &mut [f64], cap: f64) {
    let n = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > cap {
        a.iter_mut().for_each(|v| *v *= cap / n);
    }
}

fn refine_min(a: &mut [f64], cap: f64, initial_step: f64) -> f64 {
    let mut best = curvature_floor_at(a);
    let mut step = initial_step.max(1e-3);
    let mut h = vec![0.0; a.len()];
    let mut trial = a.to_vec();
    for _ in 0..500 {
        probabilities_into(a, &mut h);
        let (i_min, _) = h
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc });
        // grad of log(h_i h_0) = e_i - 2 h
        let mut g: Vec<f64> = h.iter().map(|v| -2.0 * v).collect();
        g[i_min] += 1.0;
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn < 1e-14 {
            break;
        }
        for ((t, ai), gi) in trial.iter_mut().zip(a.iter()).zip(&g) {
            *t = ai - step * gi / gn;
        }
        project_to_ball(&mut trial, cap);
        let v = curvature_floor_at(&trial);
        if v < best {
            best = v;
            a.copy_from_slice(&trial);
        } else {
            step *= 0.5;
            if step < 1e-12 {
                break;
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn probability_examples() {
        let d = choice_probabilities(&[]).unwrap();
        assert_eq!(d.p_outside, 1.0);
        let d = choice_probabilities(&[0.0]).unwrap();
        assert!((d.p_outside - 0.5).abs() < 1e-15 && (d.p_items[0] - 0.5).abs() < 1e-15);
        let d = choice_probabilities(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        assert!((d.p_outside - 1.0 / 7.0).abs() < 1e-14);
        for (k, p) in d.p_items.iter().enumerate() {
            assert!((p - (k + 1) as f64 / 7.0).abs() < 1e-14);
        }
        assert!(matches!(
            choice_probabilities(&[0.0, f64::NAN]),
            Err(Error::NonFiniteUtility(1))
        ));
    }

    #[test]
    fn sampling_frequencies() {
        let mut rng = stream(1, Stream::Choices);
        let always_out = ChoiceDistribution {
            p_outside: 1.0,
            p_items: vec![0.0, 0.0],
        };
        assert!((0..1000).all(|_| sample_choice(&always_out, &mut rng).is_none()));

        for (u, expect) in [(0.0, 0.5), (3f64.ln(), 0.75)] {
            let d = choice_probabilities(&[u]).unwrap();
            let hits = (0..100_000).filter(|_| sample_choice(&d, &mut rng) == Some(0)).count();
            assert!((hits as f64 / 1e5 - expect).abs() < 0.01);
        }
    }

    #[test]
    fn reward_examples() {
        assert_eq!(expected_reward(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!((expected_reward(&[0.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        let r = expected_reward(&[2f64.ln(), 3f64.ln()], &[1.0, 0.5]).unwrap();
        assert!((r - 3.5 / 6.0).abs() < 1e-14);
        assert!(matches!(
            expected_reward(&[0.0], &[1.0, 1.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn reward_gap_examples() {
        assert!(reward_gap_bound_check(&[0.3, 0.1], &[0.3, 0.1], &[1.0, 0.2]).unwrap());
        let gap = expected_reward(&[1.0], &[1.0]).unwrap() - expected_reward(&[0.0], &[1.0]).unwrap();
        assert!((gap - 0.2310585786300049).abs() < 1e-12);
        assert!(reward_gap_bound_check(&[1.0], &[0.0], &[1.0]).unwrap());
    }

    #[test]
    fn reward_gap_fuzz() {
        let mut rng = stream(2, Stream::Audit);
        for _ in 0..100_000 {
            let n = rng.random_range(1..6);
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            assert!(reward_gap_bound_check(&u, &v, &r).unwrap());
        }
    }

    #[test]
    fn kappa_zero_examples() {
        assert!((reverse_lipschitz_constant(1, 0.0, 11) - 0.25).abs() < 1e-15);
        let k = reverse_lipschitz_constant(1, 3f64.ln(), 21);
        assert!((k - 3.0 / 16.0).abs() < 1e-12, "{k}");
    }

    #[test]
    fn kappa_zero_two_dims_lower_bounds_pair_slopes() {
        let k0 = reverse_lipschitz_constant(2, 1.0, 41);
        assert!(k0 > 0.0 && k0 < 0.25);
        let mut rng = stream(3, Stream::Audit);
        let mut draw = || {
            let mut a = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            project_to_ball(&mut a, 1.0);
            a
        };
        for _ in 0..100_000 {
            let (a, b) = (draw(), draw());
            let ha = mnl_map(&a);
            let hb = mnl_map(&b);
            let lhs = ha.iter().zip(&hb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let rhs = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(lhs >= k0 * rhs - 1e-15);
        }
    }

    #[test]
    fn raising_a_utility_never_lowers_uniform_reward() {
        let mut rng = stream(4, Stream::Audit);
        for _ in 0..10_000 {
            let n = rng.random_range(1..6);
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut v = u.clone();
            let i = rng.random_range(0..n);
            v[i] += rng.random_range(0.0..3.0);
            let ones = vec![1.0; n];
            assert!(expected_reward(&v, &ones).unwrap() >= expected_reward(&u, &ones).unwrap());
        }
    }

    proptest! {
        #[test]
        fn probabilities_normalize(u in proptest::collection::vec(-700.0f64..700.0, 0..12)) {
            let d = choice_probabilities(&u).unwrap();
            prop_assert!((d.total() - 1.0).abs() <= 1e-12);
            prop_assert!(d.p_items.iter().all(|p| (0.0..=1.0).contains(p)));
        }

        #[test]
        fn reward_within_revenue_range(
            u in proptest::collection::vec(-50.0f64..50.0, 1..8),
            seed in 0u64..1000,
        ) {
            let mut rng = stream(seed, Stream::Audit);
            let r: Vec<f64> = u.iter().map(|_| rng.random_range(0.0..1.0)).collect();
            let v = expected_reward(&u, &r).unwrap();
            let rmax = r.iter().copied().fold(0.0, f64::max);
            prop_assert!(v >= 0.0 && v <= rmax + 1e-12);
        }
    }
}
