//! Prompt-conditioned policies and the episode driver.
//!
//! A [`PolicyProvider`] hands out one [`EpisodePolicy`] per episode. The
//! prompt is fixed when the episode begins and is passed, unchanged, with
//! every observation. Observations also carry the last `context_len`
//! transitions so a sequence model can condition on recent history.

mod external;
mod surrogate;

pub use external::{serve, ExternalPolicy, ExternalPolicyConfig};
pub use surrogate::{
    decode_goal, informativeness_report, surrogate_act, DecodedGoal, InformativenessReport,
    SurrogatePolicy,
};

use serde::{Deserialize, Serialize};

use crate::env::{step, EnvConfig, EnvState, Action, Task, Vec2};
use crate::error::{Error, Result};
use crate::prompt::{token_mean_state, PromptLayout, Trajectory, TOKENS_PER_TRANSITION};

pub type RecentTransition = [f64; TOKENS_PER_TRANSITION];

#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub prompt: &'a [f64],
    pub state: Vec2,
    pub rtg: f64,
    pub recent: &'a [RecentTransition],
    pub step: usize,
}

pub trait EpisodePolicy {
    fn act(&mut self, obs: &Observation<'_>) -> Result<Action>;
}

pub trait PolicyProvider: Send + Sync {
    fn begin<'a>(
        &'a self,
        prompt: &[f64],
        layout: PromptLayout,
        env: &EnvConfig,
    ) -> Result<Box<dyn EpisodePolicy + 'a>>;

    fn name(&self) -> &str;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    /// Number of recent transitions exposed to the policy.
    pub context_len: usize,
    /// Return-to-go the policy is conditioned on at step 0.
    pub initial_rtg: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            context_len: 20,
            initial_rtg: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub episodic_return: f64,
    pub steps: usize,
    pub trajectory: Trajectory,
    pub prompt_mean_state: Vec2,
    /// Set when an external policy misbehaved; the return is then the
    /// environment floor.
    pub failed: bool,
}

/// Runs one episode of `policy` on `task` conditioned on `prompt`.
/// Returns the undiscounted episodic return.
pub fn rollout(
    policy: &dyn PolicyProvider,
    task: &Task,
    prompt: &[f64],
    layout: PromptLayout,
    env: &EnvConfig,
    rc: &RolloutConfig,
) -> Result<RolloutResult> {
    layout.check_len(prompt.len())?;
    if prompt.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prompt tokens"));
    }
    let prompt_mean_state = token_mean_state(prompt);
    let mut episode = match policy.begin(prompt, layout, env) {
        Ok(e) => e,
        Err(Error::External(msg)) => {
            log::warn!("external policy failed at reset: {msg}");
            return Ok(failed_result(task, env, prompt_mean_state, 0));
        }
        Err(e) => return Err(e),
    };

    let mut state = EnvState::initial();
    let mut rtg = rc.initial_rtg;
    let mut recent: Vec<RecentTransition> = Vec::with_capacity(rc.context_len + 1);
    let mut steps = Vec::new();
    let mut rewards = Vec::new();
    while !state.done {
        let obs = Observation {
            prompt,
            state: state.position,
            rtg,
            recent: &recent,
            step: state.step_count,
        };
        let action = match episode.act(&obs) {
            Ok(a) => a,
            Err(Error::External(msg)) => {
                log::warn!("external policy failed at step {}: {msg}", state.step_count);
                return Ok(failed_result(task, env, prompt_mean_state, state.step_count));
            }
            Err(e) => return Err(e),
        };
        let out = step(&state, &action, task, env)?;
        let tokens = [
            out.displacement[0],
            out.displacement[1],
            if action.stop { 1.0 } else { 0.0 },
        ];
        if rc.context_len > 0 {
            if recent.len() == rc.context_len {
                recent.remove(0);
            }
            recent.push([rtg, state.position[0], state.position[1], tokens[0], tokens[1], tokens[2]]);
        }
        steps.push((state.position, tokens));
        rewards.push(out.reward);
        rtg -= out.reward;
        state = out.state;
    }
    let trajectory = Trajectory::from_steps(task.task_id, steps, rewards)?;
    Ok(RolloutResult {
        episodic_return: trajectory.episodic_return,
        steps: trajectory.len(),
        trajectory,
        prompt_mean_state,
        failed: false,
    })
}

fn failed_result(task: &Task, env: &EnvConfig, mean: Vec2, steps: usize) -> RolloutResult {
    let floor = env.return_floor();
    RolloutResult {
        episodic_return: floor,
        steps,
        trajectory: Trajectory {
            task_id: task.task_id,
            transitions: Vec::new(),
            rewards: Vec::new(),
            episodic_return: floor,
        },
        prompt_mean_state: mean,
        failed: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Walks straight along +x, checking the prompt never changes.
    struct Recorder {
        calls: AtomicUsize,
    }

    struct RecorderEpisode<'a> {
        first: Vec<f64>,
        calls: &'a AtomicUsize,
        last_recent: usize,
    }

    impl EpisodePolicy for RecorderEpisode<'_> {
        fn act(&mut self, obs: &Observation<'_>) -> Result<Action> {
            assert_eq!(obs.prompt, &self.first[..]);
            assert!(obs.recent.len() <= 20);
            assert!(obs.recent.len() >= self.last_recent.min(19));
            self.last_recent = obs.recent.len();
            self.calls.fetch_add(1, Ordering::Relaxed);
            Ok(Action {
                translate: [1.0, 0.0],
                stop: obs.state[0] >= 2.9 - 1e-9,
            })
        }
    }

    impl PolicyProvider for Recorder {
        fn begin<'a>(
            &'a self,
            prompt: &[f64],
            _layout: PromptLayout,
            _env: &EnvConfig,
        ) -> Result<Box<dyn EpisodePolicy + 'a>> {
            Ok(Box::new(RecorderEpisode {
                first: prompt.to_vec(),
                calls: &self.calls,
                last_recent: 0,
            }))
        }

        fn name(&self) -> &str {
            "recorder"
        }
    }

    #[test]
    fn prompt_is_fixed_and_context_bounded() {
        let task = Task::new(2.9, 2.0 * std::f64::consts::PI).unwrap();
        let p = Recorder {
            calls: AtomicUsize::new(0),
        };
        let prompt: Vec<f64> = (0..18).map(|i| i as f64 * 0.1).collect();
        let res = rollout(
            &p,
            &task,
            &prompt,
            PromptLayout::new(1, 3),
            &EnvConfig::default(),
            &RolloutConfig::default(),
        )
        .unwrap();
        assert_eq!(res.steps, p.calls.load(Ordering::Relaxed));
        assert!(!res.failed);
        assert_eq!(res.prompt_mean_state, token_mean_state(&prompt));
        assert!((res.episodic_return - 10.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_wrong_prompt_length() {
        let task = Task::from_id(0).unwrap();
        let p = SurrogatePolicy;
        assert!(matches!(
            rollout(
                &p,
                &task,
                &[0.0; 17],
                PromptLayout::new(1, 3),
                &EnvConfig::default(),
                &RolloutConfig::default()
            ),
            Err(Error::TokenLength { .. })
        ));
    }
}
