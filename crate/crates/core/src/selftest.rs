//! Fast invariant checks runnable from the command line.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cmab::ArmState;
use crate::env::{self, expert_action, norm, Action, EnvConfig, EnvState, Task};
use crate::error::Result;
use crate::exec::Execution;
use crate::harness::{generate_pools, output, run_tuning, Method, RunConfig};
use crate::policy::SurrogatePolicy;
use crate::prompt::{compute_rtg, PromptLayout};
use crate::zoopt::{rank_gradient, HcState};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub millis: f64,
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult {
        name,
        passed,
        detail,
        millis: start.elapsed().as_secs_f64() * 1e3,
    }
}

pub fn run_all(exec: Execution) -> Vec<CheckResult> {
    vec![
        timed("token layout", token_layout),
        timed("action projection", projection),
        timed("expert optimum", expert_optimum),
        timed("return-to-go suffix sums", rtg_sums),
        timed("incremental inverse", incremental_inverse),
        timed("rank gradient antisymmetry", rank_antisymmetry),
        timed("hill-climb monotonicity", hill_climb),
        timed("budget and determinism", || budget_and_determinism(exec)),
    ]
}

fn token_layout() -> Result<(bool, String)> {
    let bad: Vec<(usize, usize)> = [1, 2, 4]
        .iter()
        .flat_map(|&j| [1, 3, 5].map(move |h| (j, h)))
        .filter(|&(j, h)| PromptLayout::new(j, h).token_len() != j * h * 6)
        .collect();
    let n = PromptLayout::new(1, 3).token_len();
    Ok((bad.is_empty() && n == 18, format!("J=1,H=3 -> {n} tokens")))
}

fn projection() -> Result<(bool, String)> {
    let cfg = EnvConfig::default();
    let tasks = Task::all();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut state = EnvState::initial();
    let mut task = tasks[0];
    let mut worst: f64 = 0.0;
    for _ in 0..20_000 {
        if state.done {
            task = tasks[rng.random_range(0..tasks.len())];
            state = EnvState::initial();
        }
        let s = 10f64.powf(rng.random_range(-2.0..2.0));
        let a = Action {
            translate: [s * rng.sample::<f64, _>(StandardNormal), s * rng.sample::<f64, _>(StandardNormal)],
            stop: rng.random::<f64>() < 0.02,
        };
        let out = env::step(&state, &a, &task, &cfg)?;
        worst = worst.max(norm(out.displacement));
        state = out.state;
    }
    Ok((worst <= cfg.step_radius + 1e-9, format!("max displacement {worst:.12}")))
}

fn expert_optimum() -> Result<(bool, String)> {
    let cfg = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut off = 0;
    for t in Task::all() {
        let mut s = EnvState::initial();
        let mut g = 0.0;
        while !s.done {
            let out = env::step(&s, &expert_action(&s, &t, &cfg, 0.0, &mut rng), &t, &cfg)?;
            g += out.reward;
            s = out.state;
        }
        if g != cfg.stop_bonus {
            off += 1;
        }
    }
    Ok((off == 0, format!("{off} of 60 tasks below the bonus")))
}

fn rtg_sums() -> Result<(bool, String)> {
    let rewards = [0.0, 0.0, -1.5, 10.0];
    let rtg = compute_rtg(&rewards)?;
    Ok((rtg == vec![8.5, 8.5, 8.5, 10.0], format!("{rtg:?}")))
}

fn incremental_inverse() -> Result<(bool, String)> {
    let d = 19;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut arm = ArmState::new(d, 1.0);
    let mut a = DMatrix::<f64>::identity(d, d);
    for _ in 0..500 {
        let x = DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        arm.observe(&x, rng.random())?;
        a += &x * x.transpose();
    }
    let direct = a.try_inverse().expect("ridge design is positive definite");
    let err = (arm.inverse() - direct).abs().max();
    Ok((err <= 1e-8, format!("max abs error {err:.2e}")))
}

fn rank_antisymmetry() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dirs: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..18).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let g: Vec<f64> = (0..5).map(|_| rng.random()).collect();
    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
    let a = rank_gradient(&dirs, &g, 0.1)?;
    let b = rank_gradient(&dirs, &neg, 0.1)?;
    let err = a.iter().zip(&b).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max);
    let flat = rank_gradient(&dirs, &[1.0; 5], 0.1)?;
    let ok = err <= 1e-12 && flat.iter().all(|v| *v == 0.0);
    Ok((ok, format!("max |g(G) + g(-G)| = {err:.1e}")))
}

fn hill_climb() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut hc = HcState::new(vec![0.0; 18]);
    let mut prev = f64::NEG_INFINITY;
    let mut ok = true;
    for k in 0..200 {
        hc.round(|c| Ok(-c.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>()), &mut rng, k, 200)?;
        ok &= hc.g_best >= prev;
        prev = hc.g_best;
    }
    Ok((ok, format!("final best {prev:.3}")))
}

fn budget_and_determinism(exec: Execution) -> Result<(bool, String)> {
    let cfg = RunConfig {
        methods: Method::ALL.to_vec(),
        rounds: 20,
        seeds: vec![0],
        tasks: Some(vec![40, 49]),
        ..RunConfig::default()
    };
    let pools = generate_pools(
        &cfg.task_list()?,
        &cfg.env,
        &cfg.demo,
        cfg.horizon,
        cfg.stride(),
        exec,
    )?;
    let a = run_tuning(&cfg, &pools, &SurrogatePolicy, exec)?;
    let b = run_tuning(&cfg, &pools, &SurrogatePolicy, Execution::Sequential)?;
    let expected: usize = Method::ALL.iter().map(|m| cfg.episodes_per_cell(*m)).sum::<usize>() * 2;
    let same = output::records_jsonl(&a)? == output::records_jsonl(&b)?;
    Ok((
        a.len() == expected && same,
        format!("{} records (expected {expected}), reruns identical: {same}", a.len()),
    ))
}
