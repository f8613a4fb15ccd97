use std::collections::BTreeMap;

use super::config::Method;
use super::run::RoundRecord;
use crate::error::{Error, Result};

/// Running sum of `max(0, reference - g)`.
pub fn cumulative_regret(returns: &[f64], reference: f64) -> Vec<f64> {
    returns
        .iter()
        .scan(0.0, |acc, &g| {
            *acc += (reference - g).max(0.0);
            Some(*acc)
        })
        .collect()
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub type RunKey = (Method, usize, u64);

/// Per-round episodes of one run, indexed by round.
pub fn group_runs(records: &[RoundRecord]) -> Result<BTreeMap<RunKey, Vec<Vec<f64>>>> {
    let mut runs: BTreeMap<RunKey, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in records {
        runs.entry((r.method, r.task_id, r.seed))
            .or_default()
            .entry(r.round)
            .or_default()
            .push(r.g);
    }
    runs.into_iter()
        .map(|(key, rounds)| {
            let k = rounds.len();
            if rounds.keys().copied().ne(0..k) {
                return Err(Error::Ragged(format!(
                    "{} task {} seed {}: rounds are not contiguous from 0",
                    key.0, key.1, key.2
                )));
            }
            Ok((key, rounds.into_values().collect()))
        })
        .collect()
}

/// Across-run learning curve of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub method: Method,
    pub runs: usize,
    /// Per round, the best return in that round (a single episode except for
    /// ZO-RankSGD).
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Mean cumulative regret counting every episode in a round.
    pub regret: Vec<f64>,
}

impl Curve {
    pub fn rounds(&self) -> usize {
        self.mean.len()
    }

    /// Mean of the curve over the last `window` rounds.
    pub fn final_mean(&self, window: usize) -> f64 {
        let w = window.clamp(1, self.mean.len().max(1));
        let tail = &self.mean[self.mean.len() - w..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    /// First round whose mean reaches `level`.
    pub fn first_reaching(&self, level: f64) -> Option<usize> {
        self.mean.iter().position(|&v| v >= level)
    }
}

pub fn aggregate(records: &[RoundRecord], reference: f64) -> Result<Vec<Curve>> {
    let runs = group_runs(records)?;
    let mut by_method: BTreeMap<Method, Vec<&Vec<Vec<f64>>>> = BTreeMap::new();
    for ((m, _, _), rounds) in &runs {
        by_method.entry(*m).or_default().push(rounds);
    }
    by_method
        .into_iter()
        .map(|(method, rs)| {
            let k = rs[0].len();
            if rs.iter().any(|r| r.len() != k) {
                return Err(Error::Ragged(format!(
                    "{method}: runs have different round counts"
                )));
            }
            let best: Vec<Vec<f64>> = rs
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|eps| eps.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                        .collect()
                })
                .collect();
            let regrets: Vec<Vec<f64>> = rs
                .iter()
                .map(|r| {
                    r.iter()
                        .scan(0.0, |acc, eps| {
                            *acc += cumulative_regret(eps, reference).last().copied().unwrap_or(0.0);
                            Some(*acc)
                        })
                        .collect()
                })
                .collect();
            let mut mean = Vec::with_capacity(k);
            let mut std = Vec::with_capacity(k);
            let mut regret = Vec::with_capacity(k);
            for i in 0..k {
                let col: Vec<f64> = best.iter().map(|b| b[i]).collect();
                let (m, s) = mean_std(&col);
                mean.push(m);
                std.push(s);
                let rc: Vec<f64> = regrets.iter().map(|r| r[i]).collect();
                regret.push(mean_std(&rc).0);
            }
            Ok(Curve {
                method,
                runs: rs.len(),
                mean,
                std,
                regret,
            })
        })
        .collect()
}
