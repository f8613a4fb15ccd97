//! Contextual bandit over prompt positions.
//!
//! There is one arm per prompt position. Each arm is a ridge-regression
//! reward model over segment features, so a round scores every candidate
//! segment at every position (the prediction matrix) and picks one segment
//! per column. Model size grows linearly with the number of positions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::io_util;
use crate::prompt::{DemoPool, Prompt, Segment};

pub const STATE_SCALE: f64 = 3.0;
pub const RTG_SCALE: f64 = 10.0;
pub const SNAPSHOT_VERSION: u32 = 1;

/// Flattened segment tokens with states divided by [`STATE_SCALE`], rtg by
/// [`RTG_SCALE`], and a trailing bias of 1. Dimension `6H + 1`.
pub fn features(segment: &Segment) -> DVector<f64> {
    let mut v = Vec::with_capacity(segment.horizon() * 6 + 1);
    for t in &segment.transitions {
        v.extend_from_slice(&[
            t.rtg / RTG_SCALE,
            t.state[0] / STATE_SCALE,
            t.state[1] / STATE_SCALE,
            t.action[0],
            t.action[1],
            t.action[2],
        ]);
    }
    v.push(1.0);
    DVector::from_vec(v)
}

pub fn pool_features(pool: &DemoPool) -> Vec<DVector<f64>> {
    pool.segments().iter().map(features).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Ucb { alpha: f64 },
    EpsGreedy { epsilon: f64 },
    Thompson { sigma: f64 },
}

impl Strategy {
    pub fn ucb() -> Self {
        Strategy::Ucb { alpha: 1.0 }
    }

    pub fn eps_greedy() -> Self {
        Strategy::EpsGreedy { epsilon: 0.1 }
    }

    pub fn thompson() -> Self {
        Strategy::Thompson { sigma: 0.5 }
    }
}

/// Returns outside `[min, max]` clamp to 0 or 1 after normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for RewardBounds {
    fn default() -> Self {
        Self {
            min: -6.0,
            max: 10.0,
        }
    }
}

impl RewardBounds {
    pub fn normalize(&self, g: f64) -> f64 {
        ((g - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BanditConfig {
    pub strategy: Strategy,
    pub lambda: f64,
    pub bounds: RewardBounds,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::ucb(),
            lambda: 1.0,
            bounds: RewardBounds::default(),
        }
    }
}

impl BanditConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("bandit: {m}")));
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.bounds.max > self.bounds.min) {
            return bad("bounds.max must exceed bounds.min");
        }
        match self.strategy {
            Strategy::Ucb { alpha } if !(alpha >= 0.0) => bad("ucb alpha must be non-negative"),
            Strategy::EpsGreedy { epsilon } if !(0.0..=1.0).contains(&epsilon) => {
                bad("epsilon must lie in [0, 1]")
            }
            Strategy::Thompson { sigma } if !(sigma >= 0.0) => bad("thompson sigma must be non-negative"),
            _ => Ok(()),
        }
    }
}

/// Ridge sufficient statistics for one prompt position. `a_inv` is kept in
/// step with `a` by Sherman-Morrison rank-one updates.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    b: DVector<f64>,
    count: usize,
}

impl ArmState {
    pub fn new(dim: usize, lambda: f64) -> Self {
        Self {
            a: DMatrix::identity(dim, dim) * lambda,
            a_inv: DMatrix::identity(dim, dim) / lambda,
            b: DVector::zeros(dim),
            count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn theta(&self) -> DVector<f64> {
        &self.a_inv * &self.b
    }

    pub fn mean(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        Ok(x.dot(&(&self.a_inv * &self.b)))
    }

    /// `sqrt(x' A^-1 x)`.
    pub fn width(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        Ok(x.dot(&(&self.a_inv * x)).max(0.0).sqrt())
    }

    pub fn observe(&mut self, x: &DVector<f64>, reward: f64) -> Result<()> {
        self.check_dim(x)?;
        if !reward.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("bandit observation"));
        }
        self.a.ger(1.0, x, x, 1.0);
        self.b.axpy(reward, x, 1.0);
        let u = &self.a_inv * x;
        let denom = 1.0 + x.dot(&u);
        self.a_inv.ger(-1.0 / denom, &u, &u, 1.0);
        self.count += 1;
        Ok(())
    }

    /// Draws a parameter vector from `N(theta, sigma^2 A^-1)`.
    pub fn sample_theta<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> DVector<f64> {
        let theta = self.theta();
        if sigma == 0.0 {
            return theta;
        }
        let sym = (&self.a_inv + self.a_inv.transpose()) * 0.5;
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        match sym.cholesky() {
            Some(ch) => theta + ch.l() * z * sigma,
            None => theta,
        }
    }
}

/// Single-arm score under `strategy`. Thompson draws its own parameters, so
/// prefer [`BanditState::build_prediction_matrix`] which draws once per arm.
pub fn predict<R: Rng + ?Sized>(
    arm: &ArmState,
    x: &DVector<f64>,
    strategy: Strategy,
    rng: &mut R,
) -> Result<f64> {
    match strategy {
        Strategy::Ucb { alpha } => Ok(arm.mean(x)? + alpha * arm.width(x)?),
        Strategy::EpsGreedy { .. } => arm.mean(x),
        Strategy::Thompson { sigma } => {
            arm.check_dim(x)?;
            Ok(x.dot(&arm.sample_theta(sigma, rng)))
        }
    }
}

/// Rows are pool segments, columns prompt positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub values: DMatrix<f64>,
    pub means: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub indices: Vec<usize>,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditState {
    arms: Vec<ArmState>,
    config: BanditConfig,
    history: Vec<HistoryEntry>,
    exec: Execution,
}

impl BanditState {
    pub fn new(positions: usize, dim: usize, config: BanditConfig) -> Result<Self> {
        config.validate()?;
        if positions == 0 || dim == 0 {
            return Err(Error::InvalidArgument(
                "bandit needs at least one position and feature".into(),
            ));
        }
        Ok(Self {
            arms: (0..positions).map(|_| ArmState::new(dim, config.lambda)).collect(),
            config,
            history: Vec::new(),
            exec: Execution::Sequential,
        })
    }

    /// Execution mode for prediction-matrix rows.
    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn arms(&self) -> &[ArmState] {
        &self.arms
    }

    pub fn positions(&self) -> usize {
        self.arms.len()
    }

    pub fn dim(&self) -> usize {
        self.arms[0].dim()
    }

    pub fn config(&self) -> &BanditConfig {
        &self.config
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn build_prediction_matrix<R: Rng + ?Sized>(
        &self,
        feats: &[DVector<f64>],
        rng: &mut R,
    ) -> Result<PredictionMatrix> {
        if feats.is_empty() {
            return Err(Error::InvalidArgument("empty segment pool".into()));
        }
        for x in feats {
            self.arms[0].check_dim(x)?;
        }
        let thetas: Vec<DVector<f64>> = self.arms.iter().map(ArmState::theta).collect();
        let sampled: Option<Vec<DVector<f64>>> = match self.config.strategy {
            Strategy::Thompson { sigma } => Some(
                self.arms
                    .iter()
                    .map(|a| a.sample_theta(sigma, rng))
                    .collect(),
            ),
            _ => None,
        };
        let strategy = self.config.strategy;
        let rows = self.exec.above(feats.len(), 256).map(feats, |x| {
            self.arms
                .iter()
                .enumerate()
                .map(|(j, arm)| {
                    let mean = x.dot(&thetas[j]);
                    let value = match strategy {
                        Strategy::Ucb { alpha } => {
                            mean + alpha * x.dot(&(arm.inverse() * x)).max(0.0).sqrt()
                        }
                        Strategy::EpsGreedy { .. } => mean,
                        Strategy::Thompson { .. } => {
                            x.dot(&sampled.as_ref().expect("drawn above")[j])
                        }
                    };
                    (value, mean)
                })
                .collect::<Vec<_>>()
        });
        let n = feats.len();
        let j = self.arms.len();
        Ok(PredictionMatrix {
            values: DMatrix::from_fn(n, j, |r, c| rows[r][c].0),
            means: DMatrix::from_fn(n, j, |r, c| rows[r][c].1),
        })
    }

    /// Picks one segment id per position.
    pub fn select<R: Rng + ?Sized>(
        &self,
        feats: &[DVector<f64>],
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        let pm = self.build_prediction_matrix(feats, rng)?;
        let n = feats.len();
        let picks = (0..self.arms.len())
            .map(|col| match self.config.strategy {
                Strategy::EpsGreedy { epsilon } => {
                    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                        rng.random_range(0..n)
                    } else {
                        argmax_column(&pm.means, col)
                    }
                }
                _ => argmax_column(&pm.values, col),
            })
            .collect();
        Ok(picks)
    }

    pub fn select_prompt<R: Rng + ?Sized>(
        &self,
        pool: &DemoPool,
        feats: &[DVector<f64>],
        rng: &mut R,
    ) -> Result<(Vec<usize>, Prompt)> {
        let indices = self.select(feats, rng)?;
        let prompt = pool.assemble_prompt(&indices)?;
        Ok((indices, prompt))
    }

    /// Feeds the normalized return to every arm with that arm's segment.
    pub fn update(&mut self, indices: &[usize], feats: &[DVector<f64>], g: f64) -> Result<()> {
        if !g.is_finite() {
            return Err(Error::NonFinite("return"));
        }
        if indices.len() != self.arms.len() {
            return Err(Error::Dimension {
                expected: self.arms.len(),
                got: indices.len(),
            });
        }
        for &i in indices {
            if i >= feats.len() {
                return Err(Error::SegmentOutOfRange {
                    index: i,
                    len: feats.len(),
                });
            }
        }
        let r = self.config.bounds.normalize(g);
        for (arm, &i) in self.arms.iter_mut().zip(indices) {
            arm.observe(&feats[i], r)?;
        }
        self.history.push(HistoryEntry {
            indices: indices.to_vec(),
            g,
        });
        Ok(())
    }

    pub fn snapshot(&self) -> BanditSnapshot {
        let flat = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|r| m.row(r).iter().copied().collect())
                .collect()
        };
        BanditSnapshot {
            version: SNAPSHOT_VERSION,
            dim: self.dim(),
            config: self.config,
            arms: self
                .arms
                .iter()
                .map(|a| ArmSnapshot {
                    a: flat(&a.a),
                    a_inv: flat(&a.a_inv),
                    b: a.b.iter().copied().collect(),
                    count: a.count,
                })
                .collect(),
            history: self.history.clone(),
        }
    }

    pub fn from_snapshot(s: BanditSnapshot) -> Result<Self> {
        if s.version != SNAPSHOT_VERSION {
            return Err(Error::Config(format!(
                "unsupported bandit snapshot version {}",
                s.version
            )));
        }
        s.config.validate()?;
        let d = s.dim;
        let mat = |rows: &[Vec<f64>]| -> Result<DMatrix<f64>> {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(Error::Dimension {
                    expected: d,
                    got: rows.len(),
                });
            }
            Ok(DMatrix::from_fn(d, d, |r, c| rows[r][c]))
        };
        let arms = s
            .arms
            .iter()
            .map(|a| {
                if a.b.len() != d {
                    return Err(Error::Dimension {
                        expected: d,
                        got: a.b.len(),
                    });
                }
                Ok(ArmState {
                    a: mat(&a.a)?,
                    a_inv: mat(&a.a_inv)?,
                    b: DVector::from_column_slice(&a.b),
                    count: a.count,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if arms.is_empty() {
            return Err(Error::Config("bandit snapshot has no arms".into()));
        }
        Ok(Self {
            arms,
            config: s.config,
            history: s.history,
            exec: Execution::Sequential,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string(&self.snapshot())?;
        io_util::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = io_util::read_to_string(path)?;
        Self::from_snapshot(serde_json::from_str(&text)?)
    }
}

/// First index of the column maximum (lowest segment id wins ties).
fn argmax_column(m: &DMatrix<f64>, col: usize) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in m.column(col).iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Versioned, row-major snapshot for resuming a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditSnapshot {
    pub version: u32,
    pub dim: usize,
    pub config: BanditConfig,
    pub arms: Vec<ArmSnapshot>,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSnapshot {
    pub a: Vec<Vec<f64>>,
    pub a_inv: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub count: usize,
}
