//! Expert demonstration generation and the on-disk pool format.
//!
//! A pool file is line-oriented CSV. Leading `#` lines carry `key=value`
//! metadata (task id, generation settings, environment constants). The
//! header row is fixed:
//!
//! ```text
//! rtg,s_x,s_y,a_x,a_y,a_stop,reward,t
//! ```
//!
//! Rows are grouped by trajectory; a row with `t = 0` starts a new one.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{expert_action, step, EnvConfig, EnvState, Task};
use crate::error::{Error, Result};
use crate::io_util;
use crate::prompt::{top_percentile, DemoPool, Trajectory};
use crate::seeding;

pub const POOL_HEADER: &str = "rtg,s_x,s_y,a_x,a_y,a_stop,reward,t";
const POOL_MAGIC: &str = "prompt-bandit demonstration pool v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub episodes: usize,
    pub noise: f64,
    pub top_pct: f64,
    /// Segment stride; `None` means non-overlapping windows (stride = H).
    pub stride: Option<usize>,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            noise: 0.05,
            top_pct: 10.0,
            stride: None,
            seed: 0,
        }
    }
}

/// Rolls out the scripted expert `n_episodes` times. Deterministic in `seed`.
pub fn generate_demonstrations(
    task: &Task,
    cfg: &EnvConfig,
    n_episodes: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if n_episodes == 0 {
        return Err(Error::InvalidArgument("n_episodes must be positive".into()));
    }
    if !(noise_scale >= 0.0) {
        return Err(Error::InvalidArgument("noise_scale must be non-negative".into()));
    }
    let mut rng = seeding::stream(seed, &[task.task_id as u64]);
    (0..n_episodes)
        .map(|_| {
            let mut state = EnvState::initial();
            let mut steps = Vec::new();
            let mut rewards = Vec::new();
            while !state.done {
                let action = expert_action(&state, task, cfg, noise_scale, &mut rng);
                let out = step(&state, &action, task, cfg)?;
                let mut tokens = action.to_tokens();
                tokens[0] = out.displacement[0];
                tokens[1] = out.displacement[1];
                steps.push((state.position, tokens));
                rewards.push(out.reward);
                state = out.state;
            }
            Trajectory::from_steps(task.task_id, steps, rewards)
        })
        .collect()
}

/// Kept expert trajectories for one task plus the settings that made them.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolFile {
    pub task: Task,
    pub meta: BTreeMap<String, String>,
    pub trajectories: Vec<Trajectory>,
}

impl PoolFile {
    pub fn generate(task: &Task, env: &EnvConfig, demo: &DemoConfig) -> Result<Self> {
        let all = generate_demonstrations(task, env, demo.episodes, demo.noise, demo.seed)?;
        let kept = top_percentile(&all, demo.top_pct)?;
        let mut meta = BTreeMap::new();
        meta.insert("episodes".into(), demo.episodes.to_string());
        meta.insert("noise".into(), demo.noise.to_string());
        meta.insert("top_pct".into(), demo.top_pct.to_string());
        meta.insert("seed".into(), demo.seed.to_string());
        meta.insert("kept".into(), kept.len().to_string());
        if let Some(stride) = demo.stride {
            meta.insert("stride".into(), stride.to_string());
        }
        meta.insert("env.step_radius".into(), env.step_radius.to_string());
        meta.insert("env.stop_bonus".into(), env.stop_bonus.to_string());
        meta.insert(
            "env.proximity_threshold".into(),
            env.proximity_threshold.to_string(),
        );
        meta.insert("env.bonus_discount".into(), env.bonus_discount.to_string());
        meta.insert("env.max_steps".into(), env.max_steps.to_string());
        Ok(Self {
            task: *task,
            meta,
            trajectories: kept,
        })
    }

    pub fn into_pool(self, horizon: usize, stride: usize) -> Result<DemoPool> {
        DemoPool::new(self.task.task_id, self.trajectories, horizon, stride)
    }

    /// Stride recorded at generation time, if any.
    pub fn stored_stride(&self) -> Option<usize> {
        self.meta.get("stride").and_then(|s| s.parse().ok())
    }

    pub fn file_name(task_id: usize) -> String {
        format!("pool_task_{task_id:02}.csv")
    }

    pub fn path_in(dir: &Path, task_id: usize) -> PathBuf {
        dir.join(Self::file_name(task_id))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {POOL_MAGIC}");
        let _ = writeln!(s, "# task_id={}", self.task.task_id);
        let _ = writeln!(s, "# radius={}", self.task.radius);
        let _ = writeln!(s, "# angle={}", self.task.angle);
        let _ = writeln!(s, "# trajectories={}", self.trajectories.len());
        for (k, v) in &self.meta {
            if !matches!(k.as_str(), "task_id" | "radius" | "angle" | "trajectories") {
                let _ = writeln!(s, "# {k}={v}");
            }
        }
        s.push_str(POOL_HEADER);
        s.push('\n');
        for traj in &self.trajectories {
            for (t, (tr, r)) in traj.transitions.iter().zip(&traj.rewards).enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    tr.rtg,
                    tr.state[0],
                    tr.state[1],
                    tr.action[0],
                    tr.action[1],
                    tr.action[2],
                    r,
                    t
                );
            }
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = Self::path_in(dir, self.task.task_id);
        io_util::write_atomic(&path, self.to_csv().as_bytes())?;
        Ok(path)
    }

    pub fn read(dir: &Path, task_id: usize) -> Result<Self> {
        let path = Self::path_in(dir, task_id);
        if !path.exists() {
            return Err(Error::MissingPool { task_id, path });
        }
        let text = io_util::read_to_string(&path)?;
        Self::parse(&text, &path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::PoolFormat {
            path: path.to_path_buf(),
            msg,
        };
        let mut meta = BTreeMap::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some((k, v)) = line.trim_start_matches('#').trim().split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| meta.get(k).ok_or_else(|| bad(format!("missing `{k}` metadata")));
        let parse_f = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| bad(format!("bad `{k}` value")))
        };
        let task_id: usize = get("task_id")?
            .parse()
            .map_err(|_| bad("bad task_id".into()))?;
        let task = Task::new(parse_f("radius")?, parse_f("angle")?)?;
        if task.task_id != task_id {
            return Err(bad(format!(
                "task_id {task_id} disagrees with (radius, angle) grid id {}",
                task.task_id
            )));
        }

        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != POOL_HEADER {
            return Err(bad(format!("unexpected header `{}`", header.join(","))));
        }

        let mut trajectories = Vec::new();
        let mut steps = Vec::new();
        let mut rewards = Vec::new();
        let mut rtgs = Vec::new();
        let mut flush = |steps: &mut Vec<_>, rewards: &mut Vec<f64>, rtgs: &mut Vec<f64>| -> Result<()> {
            if steps.is_empty() {
                return Ok(());
            }
            let mut traj = Trajectory::from_steps(task_id, std::mem::take(steps), std::mem::take(rewards))?;
            // Keep the stored rtg bit-exact rather than re-summing.
            for (tr, rtg) in traj.transitions.iter_mut().zip(rtgs.iter()) {
                tr.rtg = *rtg;
            }
            traj.episodic_return = rtgs[0];
            rtgs.clear();
            trajectories.push(traj);
            Ok(())
        };
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
            if vals.len() != 8 {
                return Err(bad(format!("row {} has {} fields", line + 1, vals.len())));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("row {} has non-finite values", line + 1)));
            }
            let t = vals[7] as usize;
            if t == 0 {
                flush(&mut steps, &mut rewards, &mut rtgs)?;
            } else if t != steps.len() {
                return Err(bad(format!("row {}: time index {t} out of sequence", line + 1)));
            }
            rtgs.push(vals[0]);
            steps.push(([vals[1], vals[2]], [vals[3], vals[4], vals[5]]));
            rewards.push(vals[6]);
        }
        flush(&mut steps, &mut rewards, &mut rtgs)?;
        if trajectories.is_empty() {
            return Err(bad("no trajectories".into()));
        }
        Ok(Self {
            task,
            meta,
            trajectories,
        })
    }
}
