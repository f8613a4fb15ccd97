use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Method, PolicySpec, RunConfig};
use crate::cmab::{pool_features, BanditState};
use crate::demo::{DemoConfig, PoolFile};
use crate::env::{EnvConfig, Task};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::policy::{rollout, ExternalPolicy, PolicyProvider, SurrogatePolicy};
use crate::prompt::{token_mean_state, DemoPool, PromptLayout};
use crate::seeding;
use crate::zoopt::{HcState, ZoState};

pub type PoolSet = BTreeMap<usize, DemoPool>;

/// One episode of one tuning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub method: Method,
    pub task_id: usize,
    pub seed: u64,
    pub round: usize,
    /// Index of the episode within its round; nonzero only for ZO-RankSGD.
    pub episode: usize,
    #[serde(rename = "return")]
    pub g: f64,
    /// Pool segment ids for segment-space methods.
    pub segment_ids: Option<Vec<usize>>,
    pub prompt_mean_state: [f64; 2],
    /// The external policy failed and the return is the environment floor.
    pub failed: bool,
    /// Kept out of the serialized record so reruns are byte-identical.
    #[serde(skip)]
    pub wall_time_ms: f64,
}

/// Equality ignores wall time.
impl PartialEq for RoundRecord {
    fn eq(&self, o: &Self) -> bool {
        self.sort_key() == o.sort_key()
            && self.g == o.g
            && self.segment_ids == o.segment_ids
            && self.prompt_mean_state == o.prompt_mean_state
            && self.failed == o.failed
    }
}

impl RoundRecord {
    pub fn sort_key(&self) -> (Method, usize, u64, usize, usize) {
        (self.method, self.task_id, self.seed, self.round, self.episode)
    }
}

pub fn build_policy(cfg: &RunConfig) -> Result<Box<dyn PolicyProvider>> {
    Ok(match cfg.policy_spec()? {
        PolicySpec::Surrogate => Box::new(SurrogatePolicy),
        PolicySpec::External(command) => {
            let mut ext = cfg.external.clone();
            ext.command = command;
            Box::new(ExternalPolicy::new(ext)?)
        }
    })
}

/// Builds pools in memory without touching disk.
pub fn generate_pools(
    tasks: &[Task],
    env: &EnvConfig,
    demo: &DemoConfig,
    horizon: usize,
    stride: usize,
    exec: Execution,
) -> Result<PoolSet> {
    exec.map(tasks, |t| PoolFile::generate(t, env, demo)?.into_pool(horizon, stride))
        .into_iter()
        .map(|p| p.map(|p| (p.task_id(), p)))
        .collect()
}

/// Reads pool files from `dir`. The stride is `stride` if given, else the
/// one stored in the file, else `horizon`.
pub fn load_pools(
    dir: &Path,
    tasks: &[Task],
    horizon: usize,
    stride: Option<usize>,
) -> Result<PoolSet> {
    tasks
        .iter()
        .map(|t| {
            let file = PoolFile::read(dir, t.task_id)?;
            let s = stride.or(file.stored_stride()).unwrap_or(horizon);
            Ok((t.task_id, file.into_pool(horizon, s)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    method: Method,
    task: Task,
    seed: u64,
}

/// Runs every (method, task, seed) cell and returns all episode records
/// sorted by method, task, seed, round and episode.
pub fn run_tuning(
    cfg: &RunConfig,
    pools: &PoolSet,
    policy: &dyn PolicyProvider,
    exec: Execution,
) -> Result<Vec<RoundRecord>> {
    cfg.validate()?;
    let tasks = cfg.task_list()?;
    let mut cells = Vec::new();
    for &method in &cfg.methods {
        for task in &tasks {
            for &seed in &cfg.seeds {
                cells.push(Cell {
                    method,
                    task: *task,
                    seed,
                });
            }
        }
    }
    let results = exec::with_jobs(cfg.jobs, || {
        exec.map(&cells, |c| {
            let pool = pools.get(&c.task.task_id).ok_or_else(|| Error::MissingPool {
                task_id: c.task.task_id,
                path: cfg.data_dir.clone(),
            })?;
            let out = run_cell(cfg, c.method, &c.task, pool, c.seed, policy);
            if let Ok(r) = &out {
                log::info!(
                    "{} task {} seed {}: {} episodes",
                    c.method,
                    c.task.task_id,
                    c.seed,
                    r.len()
                );
            }
            out
        })
    });
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    records.sort_by_key(RoundRecord::sort_key);
    Ok(records)
}

struct Episode {
    g: f64,
    failed: bool,
    ms: f64,
}

/// One tuning run on one task.
pub fn run_cell(
    cfg: &RunConfig,
    method: Method,
    task: &Task,
    pool: &DemoPool,
    seed: u64,
    policy: &dyn PolicyProvider,
) -> Result<Vec<RoundRecord>> {
    if pool.horizon() != cfg.horizon {
        return Err(Error::Dimension {
            expected: cfg.horizon,
            got: pool.horizon(),
        });
    }
    let layout = PromptLayout::new(cfg.segments, cfg.horizon);
    let mut rng = cell_rng(method, task, seed);
    let k_total = cfg.rounds;
    let j = cfg.segments;
    let n = pool.len();

    let evaluate = |tokens: &[f64]| -> Result<Episode> {
        let start = Instant::now();
        let r = rollout(policy, task, tokens, layout, &cfg.env, &cfg.rollout)?;
        Ok(Episode {
            g: r.episodic_return,
            failed: r.failed,
            ms: start.elapsed().as_secs_f64() * 1e3,
        })
    };
    let record = |round: usize, episode: usize, tokens: &[f64], ids: Option<Vec<usize>>, e: &Episode| {
        RoundRecord {
            method,
            task_id: task.task_id,
            seed,
            round,
            episode,
            g: e.g,
            segment_ids: ids,
            prompt_mean_state: token_mean_state(tokens),
            failed: e.failed,
            wall_time_ms: e.ms,
        }
    };

    let mut out = Vec::with_capacity(cfg.episodes_per_cell(method));
    match method {
        Method::Uniform => {
            for k in 0..k_total {
                let ids: Vec<usize> = (0..j).map(|_| rng.random_range(0..n)).collect();
                let tokens = pool.assemble_prompt(&ids)?.encode_tokens();
                let e = evaluate(&tokens)?;
                out.push(record(k, 0, &tokens, Some(ids), &e));
            }
        }
        Method::BanditUcb | Method::BanditEps | Method::BanditThompson => {
            let bc = cfg.bandit.for_method(method).expect("bandit method");
            let feats = pool_features(pool);
            let mut bandit = BanditState::new(j, feats[0].len(), bc)?;
            for k in 0..k_total {
                let (ids, prompt) = bandit.select_prompt(pool, &feats, &mut rng)?;
                let tokens = prompt.encode_tokens();
                let e = evaluate(&tokens)?;
                bandit.update(&ids, &feats, e.g)?;
                out.push(record(k, 0, &tokens, Some(ids), &e));
            }
        }
        Method::GaussianHc => {
            let rho0 = initial_tokens(pool, j, &mut rng)?;
            let mut hc = HcState::new(rho0);
            for k in 0..k_total {
                let mut ep = None;
                let round = hc.round(
                    |c| {
                        let e = evaluate(c)?;
                        let g = e.g;
                        ep = Some(e);
                        Ok(g)
                    },
                    &mut rng,
                    k,
                    k_total,
                )?;
                let e = ep.expect("evaluated");
                out.push(record(k, 0, &round.candidate, None, &e));
            }
        }
        Method::ZoRanksgd => {
            let rho0 = initial_tokens(pool, j, &mut rng)?;
            let mut zo = ZoState::new(rho0, k_total, cfg.zo_perturbations)?;
            for k in 0..k_total {
                let seen: Mutex<Vec<(Vec<f64>, Episode)>> = Mutex::new(Vec::new());
                let round = zo.round(
                    |c| {
                        let e = evaluate(c)?;
                        let g = e.g;
                        seen.lock().expect("episode log").push((c.to_vec(), e));
                        Ok(g)
                    },
                    &mut rng,
                    Execution::Sequential,
                )?;
                let mut seen = seen.into_inner().expect("episode log");
                for (i, c) in round.candidates.iter().enumerate() {
                    let pos = seen
                        .iter()
                        .position(|(v, _)| v == c)
                        .expect("every candidate evaluated");
                    let (_, e) = seen.swap_remove(pos);
                    out.push(record(k, i, c, None, &e));
                }
            }
        }
    }
    Ok(out)
}

fn cell_rng(method: Method, task: &Task, seed: u64) -> ChaCha8Rng {
    seeding::stream(seed, &[task.task_id as u64, seeding::label_tag(method.label())])
}

/// The starting prompt a token-space run draws, reproduced from its seed.
pub fn initial_prompt(method: Method, task: &Task, pool: &DemoPool, j: usize, seed: u64) -> Result<Vec<f64>> {
    initial_tokens(pool, j, &mut cell_rng(method, task, seed))
}

/// Seeded uniform draw of `j` pool segments, flattened to tokens.
fn initial_tokens<R: Rng + ?Sized>(pool: &DemoPool, j: usize, rng: &mut R) -> Result<Vec<f64>> {
    let ids: Vec<usize> = (0..j).map(|_| rng.random_range(0..pool.len())).collect();
    Ok(pool.assemble_prompt(&ids)?.encode_tokens())
}
