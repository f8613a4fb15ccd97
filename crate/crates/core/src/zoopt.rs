//! Perturbation baselines that act directly on flat prompt-token vectors.
//!
//! * Rank-based zeroth-order ascent: `m` Gaussian perturbations per round
//!   are evaluated, ranked, and combined into a gradient estimate with
//!   centered-rank weights.
//! * Gaussian hill climbing: one perturbation per round, kept only if it
//!   beats the best return so far.
//!
//! Noise scale and learning rate both decay linearly from 1 to 0.1.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

pub const ANNEAL_START: f64 = 1.0;
pub const ANNEAL_END: f64 = 0.1;

/// Linear schedule `start + (end - start) * k / total`.
pub fn anneal(k: usize, total: usize, start: f64, end: f64) -> f64 {
    let total = total.max(1);
    let k = k.min(total);
    start + (end - start) * k as f64 / total as f64
}

pub fn default_anneal(k: usize, total: usize) -> f64 {
    anneal(k, total, ANNEAL_START, ANNEAL_END)
}

pub fn gaussian_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn perturb<R: Rng + ?Sized>(rho: &[f64], eps: f64, rng: &mut R) -> Vec<f64> {
    rho.iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            v + eps * z
        })
        .collect()
}

/// Ranks descending by return (rank 1 is best, ties share the average rank)
/// and returns `sum_i ((m + 1) / 2 - rank_i) u_i / (eps m)`.
pub fn rank_gradient(directions: &[Vec<f64>], returns: &[f64], eps: f64) -> Result<Vec<f64>> {
    let m = directions.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "rank gradient needs at least 2 perturbations, got {m}"
        )));
    }
    if returns.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: returns.len(),
        });
    }
    if returns.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("perturbation returns"));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let d = directions[0].len();
    if directions.iter().any(|u| u.len() != d) {
        return Err(Error::Ragged("perturbation directions differ in length".into()));
    }
    let ranks = average_ranks_desc(returns);
    let center = (m as f64 + 1.0) / 2.0;
    let mut grad = vec![0.0; d];
    for (u, rank) in directions.iter().zip(&ranks) {
        let w = center - rank;
        if w != 0.0 {
            for (g, ui) in grad.iter_mut().zip(u) {
                *g += w * ui;
            }
        }
    }
    let scale = 1.0 / (eps * m as f64);
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(grad)
}

/// 1-based descending ranks; tied values get the mean of their positions,
/// so weights within a tie group cancel.
fn average_ranks_desc(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoState {
    pub rho: Vec<f64>,
    pub round: usize,
    pub total_rounds: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoRound {
    pub candidates: Vec<Vec<f64>>,
    pub returns: Vec<f64>,
    pub eps: f64,
    pub eta: f64,
}

impl ZoRound {
    pub fn best_return(&self) -> f64 {
        self.returns.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl ZoState {
    pub fn new(rho: Vec<f64>, total_rounds: usize, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument("zo needs m >= 2".into()));
        }
        if total_rounds == 0 {
            return Err(Error::InvalidArgument("zo needs at least one round".into()));
        }
        if rho.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial prompt"));
        }
        Ok(Self {
            rho,
            round: 0,
            total_rounds,
            m,
        })
    }

    /// Draws `m` perturbations at the current noise scale, evaluates them
    /// (one episode each), then steps along the rank gradient.
    pub fn round<R, F>(&mut self, evaluate: F, rng: &mut R, exec: Execution) -> Result<ZoRound>
    where
        R: Rng + ?Sized,
        F: Fn(&[f64]) -> Result<f64> + Sync + Send,
    {
        let eps = default_anneal(self.round, self.total_rounds);
        let eta = eps;
        let d = self.rho.len();
        let directions: Vec<Vec<f64>> = (0..self.m).map(|_| gaussian_direction(d, rng)).collect();
        let candidates: Vec<Vec<f64>> = directions
            .iter()
            .map(|u| self.rho.iter().zip(u).map(|(r, z)| r + eps * z).collect())
            .collect();
        let returns = exec
            .map(&candidates, |c| evaluate(c))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let grad = rank_gradient(&directions, &returns, eps)?;
        for (r, g) in self.rho.iter_mut().zip(&grad) {
            *r += eta * g;
        }
        self.round += 1;
        Ok(ZoRound {
            candidates,
            returns,
            eps,
            eta,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HcState {
    pub rho_best: Vec<f64>,
    pub g_best: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HcRound {
    pub candidate: Vec<f64>,
    pub g: f64,
    pub accepted: bool,
    pub eps: f64,
}

impl HcState {
    /// Starts from `rho` with no evaluated return, so the first candidate is
    /// always accepted.
    pub fn new(rho: Vec<f64>) -> Self {
        Self {
            rho_best: rho,
            g_best: f64::NEG_INFINITY,
        }
    }

    pub fn round<R, F>(&mut self, evaluate: F, rng: &mut R, k: usize, total: usize) -> Result<HcRound>
    where
        R: Rng + ?Sized,
        F: FnOnce(&[f64]) -> Result<f64>,
    {
        let eps = default_anneal(k, total);
        let candidate = perturb(&self.rho_best, eps, rng);
        let g = evaluate(&candidate)?;
        let accepted = self.offer(&candidate, g);
        Ok(HcRound {
            candidate,
            g,
            accepted,
            eps,
        })
    }

    /// Strict improvement only.
    pub fn offer(&mut self, candidate: &[f64], g: f64) -> bool {
        if g > self.g_best {
            self.g_best = g;
            self.rho_best = candidate.to_vec();
            true
        } else {
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn anneal_examples() {
        assert_eq!(default_anneal(0, 250), 1.0);
        assert_abs_diff_eq!(default_anneal(250, 250), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(default_anneal(125, 250), 0.55, epsilon = 1e-15);
    }

    #[test]
    fn perturb_examples() {
        let rho: Vec<f64> = (0..18).map(|i| i as f64).collect();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(perturb(&rho, 0.0, &mut r), rho);
        let a = perturb(&rho, 0.5, &mut ChaCha8Rng::seed_from_u64(3));
        let b = perturb(&rho, 0.5, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        for d in [18, 36, 72] {
            assert_eq!(perturb(&vec![0.0; d], 1.0, &mut r).len(), d);
        }
    }

    #[test]
    fn rank_gradient_hand_example() {
        let u = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 0.0]];
        let eps = 0.5;
        let g = rank_gradient(&u, &[1.0, -1.0, 0.0], eps).unwrap();
        assert_abs_diff_eq!(g[0], 2.0 / (3.0 * eps), epsilon = 1e-15);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn rank_gradient_ties_cancel() {
        let u = vec![vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.2, 0.2]];
        let g = rank_gradient(&u, &[4.0, 4.0, 4.0], 0.1).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(rank_gradient(&u[..1], &[1.0], 0.1).is_err());
    }

    proptest! {
        #[test]
        fn rank_gradient_antisymmetric(
            seed in 0u64..500,
            m in 2usize..8,
        ) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<Vec<f64>> = (0..m).map(|_| gaussian_direction(5, &mut r)).collect();
            let g: Vec<f64> = (0..m).map(|_| r.random_range(-3.0..3.0)).collect();
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            let a = rank_gradient(&u, &g, 0.3).unwrap();
            let b = rank_gradient(&u, &neg, 0.3).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x + y).abs() < 1e-12);
            }
        }

        #[test]
        fn hill_climb_best_never_drops(
            returns in proptest::collection::vec(-10.0f64..10.0, 1..50),
        ) {
            let mut hc = HcState::new(vec![0.0; 4]);
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let mut prev = f64::NEG_INFINITY;
            for (k, g) in returns.iter().enumerate() {
                hc.round(|_| Ok(*g), &mut r, k, returns.len()).unwrap();
                prop_assert!(hc.g_best >= prev);
                prop_assert!(hc.g_best == returns[..=k].iter().cloned().fold(f64::NEG_INFINITY, f64::max));
                prev = hc.g_best;
            }
        }
    }

    #[test]
    fn hill_climb_acceptance_rule() {
        let mut hc = HcState {
            rho_best: vec![0.0; 3],
            g_best: 5.0,
        };
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let out = hc.round(|_| Ok(6.0), &mut r, 0, 10).unwrap();
        assert!(out.accepted);
        assert_eq!(hc.g_best, 6.0);
        assert_eq!(hc.rho_best, out.candidate);

        let before = hc.clone();
        assert!(!hc.round(|_| Ok(4.0), &mut r, 1, 10).unwrap().accepted);
        assert_eq!(hc, before);
        assert!(!hc.round(|_| Ok(6.0), &mut r, 2, 10).unwrap().accepted);
        assert_eq!(hc, before);
    }

    #[test]
    fn zo_consumes_m_per_round() {
        let calls = AtomicUsize::new(0);
        let mut zo = ZoState::new(vec![0.0; 18], 250, 5).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..250 {
            zo.round(
                |_| {
                    calls.fetch_add(1, Ordering::Relaxed);
                    Ok(1.0)
                },
                &mut r,
                Execution::Sequential,
            )
            .unwrap();
        }
        assert_eq!(calls.load(Ordering::Relaxed), 1250);
        assert_eq!(zo.round, 250);
        // Constant objective: every rank ties, so the iterate never moves.
        assert_eq!(zo.rho, vec![0.0; 18]);
    }

    #[test]
    fn zo_climbs_concave_quadratic() {
        // Value at the iterate after the run, averaged over seeds, beats the start.
        let target: Vec<f64> = (0..6).map(|i| i as f64 * 0.5).collect();
        let f = |x: &[f64]| -> f64 { -x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() };
        let start = vec![0.0; 6];
        let mut improved = 0;
        let mut mean_gain = 0.0;
        for seed in 0..20 {
            let mut zo = ZoState::new(start.clone(), 50, 5).unwrap();
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut checkpoints = vec![f(&zo.rho)];
            for k in 0..50 {
                zo.round(|x| Ok(f(x)), &mut r, Execution::Sequential).unwrap();
                if k % 10 == 9 {
                    checkpoints.push(f(&zo.rho));
                }
            }
            mean_gain += (checkpoints.last().unwrap() - checkpoints[0]) / 20.0;
            if checkpoints.last().unwrap() > &checkpoints[0] {
                improved += 1;
            }
        }
        assert!(mean_gain > 0.0, "mean gain {mean_gain}");
        assert!(improved >= 15, "{improved}/20 seeds improved");
    }

    #[test]
    fn zo_parallel_matches_sequential() {
        let f = |x: &[f64]| -> Result<f64> { Ok(-x.iter().map(|v| v * v).sum::<f64>()) };
        let mut a = ZoState::new(vec![1.0; 18], 20, 5).unwrap();
        let mut b = a.clone();
        let mut ra = ChaCha8Rng::seed_from_u64(4);
        let mut rb = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x = a.round(f, &mut ra, Execution::Sequential).unwrap();
            let y = b.round(f, &mut rb, Execution::Parallel).unwrap();
            assert_eq!(x, y);
        }
        assert_eq!(a, b);
    }
}
