//! Analytic stand-in for a frozen prompt-conditioned sequence model.
//!
//! The goal is read off the prompt: its direction is the mean prompt state,
//! its radius the largest prompt-state norm. Segments near the end of an
//! expert path therefore identify the goal; segments near the start point
//! the agent at a spot close to the origin.

use crate::env::{dist, norm, step_toward, Action, EnvConfig, EnvState, Task, Vec2};
use crate::error::{Error, Result};
use crate::prompt::{DemoPool, PromptLayout, TOKENS_PER_TRANSITION};

use super::{rollout, EpisodePolicy, Observation, PolicyProvider, RolloutConfig};

pub const MAX_DECODED_RADIUS: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedGoal {
    pub r_hat: f64,
    pub alpha_hat: f64,
    pub goal_hat: Vec2,
    /// All prompt states sat exactly on the origin.
    pub degenerate: bool,
}

pub fn decode_goal(tokens: &[f64], layout: PromptLayout) -> Result<DecodedGoal> {
    layout.check_len(tokens.len())?;
    if tokens.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prompt tokens"));
    }
    let (mut sx, mut sy, mut r_max, mut n) = (0.0, 0.0, 0.0f64, 0usize);
    let mut degenerate = true;
    for t in tokens.chunks_exact(TOKENS_PER_TRANSITION) {
        let s = [t[1], t[2]];
        sx += s[0];
        sy += s[1];
        r_max = r_max.max(norm(s));
        degenerate &= s == [0.0, 0.0];
        n += 1;
    }
    let (mx, my) = (sx / n.max(1) as f64, sy / n.max(1) as f64);
    let alpha_hat = if degenerate { 0.0 } else { my.atan2(mx) };
    let r_hat = r_max.clamp(0.0, MAX_DECODED_RADIUS);
    Ok(DecodedGoal {
        r_hat,
        alpha_hat,
        goal_hat: [r_hat * alpha_hat.cos(), r_hat * alpha_hat.sin()],
        degenerate,
    })
}

pub fn surrogate_act(state: &EnvState, decoded: &DecodedGoal, cfg: &EnvConfig) -> Action {
    if dist(state.position, decoded.goal_hat) <= cfg.proximity_threshold / 2.0 {
        return Action::stop();
    }
    Action {
        translate: step_toward(state.position, decoded.goal_hat, cfg.step_radius),
        stop: false,
    }
}

/// Stateless; safe to share across threads.
#[derive(Debug, Clone, Copy, Default)]
pub struct SurrogatePolicy;

struct SurrogateEpisode {
    decoded: DecodedGoal,
    env: EnvConfig,
}

impl EpisodePolicy for SurrogateEpisode {
    fn act(&mut self, obs: &Observation<'_>) -> Result<Action> {
        let state = EnvState {
            position: obs.state,
            step_count: obs.step,
            done: false,
        };
        Ok(surrogate_act(&state, &self.decoded, &self.env))
    }
}

impl PolicyProvider for SurrogatePolicy {
    fn begin<'a>(
        &'a self,
        prompt: &[f64],
        layout: PromptLayout,
        env: &EnvConfig,
    ) -> Result<Box<dyn EpisodePolicy + 'a>> {
        Ok(Box::new(SurrogateEpisode {
            decoded: decode_goal(prompt, layout)?,
            env: *env,
        }))
    }

    fn name(&self) -> &str {
        "surrogate"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InformativenessReport {
    pub segments: usize,
    /// Pairs where a segment closer to the goal earned strictly less.
    pub inversions: usize,
    pub pairs: usize,
    /// Largest return shortfall over the inverted pairs.
    pub max_shortfall: f64,
}

impl InformativenessReport {
    pub fn holds(&self) -> bool {
        self.inversions == 0
    }
}

/// Checks that single-segment prompts closer to the goal do not earn less
/// than farther ones.
pub fn informativeness_report(
    pool: &DemoPool,
    task: &Task,
    env: &EnvConfig,
) -> Result<InformativenessReport> {
    const TOL: f64 = 1e-9;
    let layout = PromptLayout::new(1, pool.horizon());
    let rc = RolloutConfig::default();
    let mut scored = pool
        .segments()
        .iter()
        .map(|s| {
            let mut tokens = Vec::with_capacity(layout.token_len());
            s.push_tokens(&mut tokens);
            let g = rollout(&SurrogatePolicy, task, &tokens, layout, env, &rc)?.episodic_return;
            Ok((dist(s.mean_state(), task.goal), g))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut inversions = 0;
    let mut pairs = 0;
    let mut max_shortfall: f64 = 0.0;
    for i in 0..scored.len() {
        for j in i + 1..scored.len() {
            if scored[j].0 - scored[i].0 <= TOL {
                continue;
            }
            pairs += 1;
            if scored[i].1 + TOL < scored[j].1 {
                inversions += 1;
                max_shortfall = max_shortfall.max(scored[j].1 - scored[i].1);
            }
        }
    }
    Ok(InformativenessReport {
        segments: scored.len(),
        inversions,
        pairs,
        max_shortfall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::generate_demonstrations;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn tokens_from_states(states: &[Vec2]) -> Vec<f64> {
        states
            .iter()
            .flat_map(|s| [10.0, s[0], s[1], 0.0, 0.0, 0.0])
            .collect()
    }

    #[test]
    fn decode_identical_states() {
        let tok = tokens_from_states(&[[0.0, 2.9]; 3]);
        let d = decode_goal(&tok, PromptLayout::new(1, 3)).unwrap();
        assert_abs_diff_eq!(d.goal_hat[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.goal_hat[1], 2.9, epsilon = 1e-12);
        assert!(!d.degenerate);
    }

    #[test]
    fn decode_near_origin_underestimates_radius() {
        let tok = tokens_from_states(&[[0.05, 0.05], [0.1, 0.1], [0.15, 0.15]]);
        let d = decode_goal(&tok, PromptLayout::new(1, 3)).unwrap();
        // max norm is |(0.15, 0.15)| = 0.2121...
        assert_abs_diff_eq!(d.r_hat, 0.15 * 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(d.alpha_hat, PI / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn decode_end_of_path() {
        let tok = tokens_from_states(&[[2.7, 0.0], [2.8, 0.0], [2.9, 0.0]]);
        let d = decode_goal(&tok, PromptLayout::new(1, 3)).unwrap();
        assert_abs_diff_eq!(d.goal_hat[0], 2.9, epsilon = 1e-12);
        assert_abs_diff_eq!(d.goal_hat[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn decode_degenerate_and_clamped() {
        let d = decode_goal(&[0.0; 18], PromptLayout::new(1, 3)).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.alpha_hat, 0.0);
        assert_eq!(d.r_hat, 0.0);
        let tok = tokens_from_states(&[[10.0, 0.0]; 3]);
        let d = decode_goal(&tok, PromptLayout::new(1, 3)).unwrap();
        assert_eq!(d.r_hat, MAX_DECODED_RADIUS);
        assert!(decode_goal(&[f64::NAN; 18], PromptLayout::new(1, 3)).is_err());
    }

    #[test]
    fn act_examples() {
        let cfg = EnvConfig::default();
        let decoded = DecodedGoal {
            r_hat: 2.9,
            alpha_hat: PI / 2.0,
            goal_hat: [0.0, 2.9],
            degenerate: false,
        };
        let at = EnvState {
            position: [0.0, 2.9],
            step_count: 29,
            done: false,
        };
        assert!(surrogate_act(&at, &decoded, &cfg).stop);
        let a = surrogate_act(&EnvState::initial(), &decoded, &cfg);
        assert!(!a.stop);
        assert_abs_diff_eq!(a.translate[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.translate[1], 0.1, epsilon = 1e-12);
    }

    fn run(task: &Task, tok: &[f64]) -> super::super::RolloutResult {
        rollout(
            &SurrogatePolicy,
            task,
            tok,
            PromptLayout::new(1, 3),
            &EnvConfig::default(),
            &RolloutConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn near_goal_prompt_scores_ten() {
        for task in Task::all() {
            let u = [task.goal[0] / task.radius, task.goal[1] / task.radius];
            let states: Vec<Vec2> = [task.radius - 0.2, task.radius - 0.1, task.radius]
                .iter()
                .map(|r| [u[0] * r, u[1] * r])
                .collect();
            let res = run(&task, &tokens_from_states(&states));
            assert!((res.episodic_return - 10.0).abs() < 1e-9, "task {}", task.task_id);
            assert!(res.steps <= crate::env::optimal_steps(&task, &EnvConfig::default()) + 1);
        }
    }

    #[test]
    fn near_origin_prompt_stops_early() {
        let task = Task::new(2.9, 0.25 * PI * 2.0).unwrap();
        let u = [task.goal[0] / 2.9, task.goal[1] / 2.9];
        let states: Vec<Vec2> = [0.0, 0.1, 0.2].iter().map(|r| [u[0] * r, u[1] * r]).collect();
        let res = run(&task, &tokens_from_states(&states));
        // Walks to radius 0.2 along the true direction, then stops.
        assert_abs_diff_eq!(res.episodic_return, -2.7, epsilon = 1e-9);
        assert!((res.episodic_return + 2.9).abs() <= 0.3);
    }

    #[test]
    fn surrogate_is_deterministic() {
        let task = Task::from_id(50).unwrap();
        let tok: Vec<f64> = (0..18).map(|i| ((i * 7) % 5) as f64 * 0.3).collect();
        assert_eq!(run(&task, &tok), run(&task, &tok));
    }

    #[test]
    fn informativeness_holds_for_noise_free_pool() {
        let cfg = EnvConfig::default();
        let task = Task::from_id(45).unwrap();
        let trajs = generate_demonstrations(&task, &cfg, 3, 0.0, 0).unwrap();
        let pool = DemoPool::new(task.task_id, trajs, 3, 3).unwrap();
        let rep = informativeness_report(&pool, &task, &cfg).unwrap();
        assert_eq!(rep.segments, 30);
        assert!(rep.holds(), "{rep:?}");
    }

    proptest! {
        #[test]
        fn any_finite_prompt_yields_legal_episode(
            tok in proptest::collection::vec(-50.0f64..50.0, 18),
            id in 0usize..60,
        ) {
            let task = Task::from_id(id).unwrap();
            let res = run(&task, &tok);
            let cfg = EnvConfig::default();
            prop_assert!(res.episodic_return.is_finite());
            prop_assert!(res.episodic_return >= cfg.return_floor());
            prop_assert!(res.episodic_return <= 10.0);
            prop_assert!(res.steps <= cfg.max_steps);
        }
    }
}
