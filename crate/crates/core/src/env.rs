//! Planar point-navigation tasks.
//!
//! The agent starts at the origin and translates by at most `step_radius`
//! per step until it issues a stop (or hits `max_steps`). The only reward is
//! terminal: minus the distance to the goal, plus a bonus when the agent
//! stops within `proximity_threshold` of it. The bonus is discounted
//! geometrically by the number of moves beyond the straight-line optimum.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];

pub const TASK_RADII: [f64; 3] = [0.9, 1.9, 2.9];
pub const ANGLE_STEPS: usize = 20;
pub const NUM_TASKS: usize = TASK_RADII.len() * ANGLE_STEPS;

const GRID_TOL: f64 = 1e-9;

pub fn norm(v: Vec2) -> f64 {
    v[0].hypot(v[1])
}

pub fn dist(a: Vec2, b: Vec2) -> f64 {
    norm([a[0] - b[0], a[1] - b[1]])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: usize,
    pub radius: f64,
    pub angle: f64,
    pub goal: Vec2,
}

impl Task {
    /// Builds a task from a grid point. The angle must be `k * 0.1 * pi` for
    /// `k` in `1..=20` and the radius one of [`TASK_RADII`].
    pub fn new(radius: f64, angle: f64) -> Result<Self> {
        let invalid = || Error::InvalidTask { radius, angle };
        if !radius.is_finite() || !angle.is_finite() {
            return Err(invalid());
        }
        let r_idx = TASK_RADII
            .iter()
            .position(|r| (r - radius).abs() < GRID_TOL)
            .ok_or_else(invalid)?;
        let k = angle / (0.1 * std::f64::consts::PI);
        let k_round = k.round();
        if (k - k_round).abs() > GRID_TOL || !(1.0..=ANGLE_STEPS as f64).contains(&k_round) {
            return Err(invalid());
        }
        Ok(Self::from_grid(r_idx, k_round as usize))
    }

    fn from_grid(r_idx: usize, k: usize) -> Self {
        let radius = TASK_RADII[r_idx];
        let angle = 0.1 * std::f64::consts::PI * k as f64;
        Self {
            task_id: r_idx * ANGLE_STEPS + (k - 1),
            radius,
            angle,
            goal: [radius * angle.cos(), radius * angle.sin()],
        }
    }

    pub fn from_id(task_id: usize) -> Result<Self> {
        if task_id >= NUM_TASKS {
            return Err(Error::InvalidArgument(format!(
                "task id {task_id} outside 0..{NUM_TASKS}"
            )));
        }
        Ok(Self::from_grid(
            task_id / ANGLE_STEPS,
            task_id % ANGLE_STEPS + 1,
        ))
    }

    /// All 60 tasks ordered by id (radius-major, then angle).
    pub fn all() -> Vec<Task> {
        (0..NUM_TASKS)
            .map(|id| Self::from_id(id).expect("id in range"))
            .collect()
    }

    pub fn with_radius(radius: f64) -> Vec<Task> {
        Self::all()
            .into_iter()
            .filter(|t| (t.radius - radius).abs() < GRID_TOL)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub step_radius: f64,
    pub stop_bonus: f64,
    pub proximity_threshold: f64,
    pub bonus_discount: f64,
    pub max_steps: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            step_radius: 0.1,
            stop_bonus: 10.0,
            proximity_threshold: 0.15,
            bonus_discount: 0.99,
            max_steps: 100,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let min_radius = TASK_RADII[0];
        let max_radius = TASK_RADII[TASK_RADII.len() - 1];
        let bad = |msg: &str| Err(Error::Config(format!("env: {msg}")));
        if !(self.step_radius > 0.0) {
            return bad("step_radius must be positive");
        }
        if !(self.proximity_threshold > 0.0 && self.proximity_threshold < min_radius) {
            return bad("proximity_threshold must lie in (0, min task radius)");
        }
        if !(self.bonus_discount > 0.0 && self.bonus_discount <= 1.0) {
            return bad("bonus_discount must lie in (0, 1]");
        }
        if self.max_steps < ceil_ratio(max_radius, self.step_radius) {
            return bad("max_steps cannot reach the farthest goal");
        }
        if !self.stop_bonus.is_finite() {
            return bad("stop_bonus must be finite");
        }
        Ok(())
    }

    /// Lowest achievable episodic return: a start at the origin plus a full
    /// travel budget away from the farthest goal.
    pub fn return_floor(&self) -> f64 {
        -(TASK_RADII[TASK_RADII.len() - 1] + self.max_steps as f64 * self.step_radius)
    }
}

// ceil(a / b), absorbing the 1-ulp error of e.g. 2.9 / 0.1.
fn ceil_ratio(a: f64, b: f64) -> usize {
    (a / b - 1e-9).ceil().max(0.0) as usize
}

pub fn optimal_steps(task: &Task, cfg: &EnvConfig) -> usize {
    ceil_ratio(task.radius, cfg.step_radius)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub translate: Vec2,
    pub stop: bool,
}

impl Action {
    pub fn stop() -> Self {
        Self {
            translate: [0.0, 0.0],
            stop: true,
        }
    }

    pub fn to_tokens(&self) -> [f64; 3] {
        [
            self.translate[0],
            self.translate[1],
            if self.stop { 1.0 } else { 0.0 },
        ]
    }
}

/// Clips a translation onto the ball of radius `step_radius`.
pub fn project_action(raw: Vec2, step_radius: f64) -> Result<Vec2> {
    if !raw[0].is_finite() || !raw[1].is_finite() {
        return Err(Error::NonFinite("action translation"));
    }
    let n = norm(raw);
    if n <= step_radius {
        Ok(raw)
    } else {
        let s = step_radius / n;
        Ok([raw[0] * s, raw[1] * s])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub position: Vec2,
    pub step_count: usize,
    pub done: bool,
}

impl EnvState {
    pub fn initial() -> Self {
        Self {
            position: [0.0, 0.0],
            step_count: 0,
            done: false,
        }
    }
}

impl Default for EnvState {
    fn default() -> Self {
        Self::initial()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    /// Displacement actually applied this step.
    pub displacement: Vec2,
}

pub fn terminal_reward(position: Vec2, moves: usize, task: &Task, cfg: &EnvConfig) -> f64 {
    let d = dist(position, task.goal);
    let mut reward = -d;
    if d <= cfg.proximity_threshold {
        let overage = moves.saturating_sub(optimal_steps(task, cfg));
        reward += cfg.stop_bonus * cfg.bonus_discount.powi(overage as i32);
    }
    reward
}

/// Advances the environment by one step. Pure in all arguments.
///
/// A stop leaves the position unchanged. Reaching `max_steps` without a stop
/// applies the translation and then terminates with the same reward formula.
/// The bonus overage counts translation moves, so stopping on the goal right
/// after `optimal_steps` moves earns the undiscounted bonus.
pub fn step(state: &EnvState, action: &Action, task: &Task, cfg: &EnvConfig) -> Result<StepOutcome> {
    if state.done {
        return Err(Error::EpisodeDone);
    }
    let step_count = state.step_count + 1;
    if action.stop {
        let next = EnvState {
            position: state.position,
            step_count,
            done: true,
        };
        return Ok(StepOutcome {
            state: next,
            reward: terminal_reward(state.position, state.step_count, task, cfg),
            done: true,
            displacement: [0.0, 0.0],
        });
    }
    let delta = project_action(action.translate, cfg.step_radius)?;
    let position = [state.position[0] + delta[0], state.position[1] + delta[1]];
    let forced = step_count >= cfg.max_steps;
    let reward = if forced {
        terminal_reward(position, step_count, task, cfg)
    } else {
        0.0
    };
    Ok(StepOutcome {
        state: EnvState {
            position,
            step_count,
            done: forced,
        },
        reward,
        done: forced,
        displacement: delta,
    })
}

/// Capped straight-line move toward `target`. Within one step of the target
/// the exact remaining offset is returned so the target is hit exactly.
pub fn step_toward(position: Vec2, target: Vec2, step_radius: f64) -> Vec2 {
    let offset = [target[0] - position[0], target[1] - position[1]];
    let n = norm(offset);
    if n <= step_radius || n == 0.0 {
        offset
    } else {
        let s = step_radius / n;
        [offset[0] * s, offset[1] * s]
    }
}

/// Scripted demonstrator: a capped step toward the goal plus isotropic
/// Gaussian noise, re-projected. Stops once within half the proximity
/// threshold of the goal.
pub fn expert_action<R: Rng + ?Sized>(
    state: &EnvState,
    task: &Task,
    cfg: &EnvConfig,
    noise_scale: f64,
    rng: &mut R,
) -> Action {
    if dist(state.position, task.goal) <= cfg.proximity_threshold / 2.0 {
        return Action::stop();
    }
    let mut t = step_toward(state.position, task.goal, cfg.step_radius);
    if noise_scale > 0.0 {
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        t = [t[0] + noise_scale * nx, t[1] + noise_scale * ny];
    }
    let translate = project_action(t, cfg.step_radius).unwrap_or([0.0, 0.0]);
    Action {
        translate,
        stop: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn make_task_examples() {
        let t = Task::new(0.9, 0.5 * PI).unwrap();
        assert_abs_diff_eq!(t.goal[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.goal[1], 0.9, epsilon = 1e-12);
        let t = Task::new(2.9, PI).unwrap();
        assert_abs_diff_eq!(t.goal[0], -2.9, epsilon = 1e-12);
        assert_abs_diff_eq!(t.goal[1], 0.0, epsilon = 1e-12);
        let t = Task::new(1.9, 0.1 * PI).unwrap();
        assert_abs_diff_eq!(t.goal[0], 1.8071, epsilon = 1e-4);
        assert_abs_diff_eq!(t.goal[1], 0.5871, epsilon = 1e-4);
    }

    #[test]
    fn make_task_rejects_off_grid() {
        assert!(Task::new(1.0, PI).is_err());
        assert!(Task::new(2.9, 0.05 * PI).is_err());
        assert!(Task::new(2.9, 0.0).is_err());
        assert!(Task::new(2.9, 2.1 * PI).is_err());
        assert!(Task::new(f64::NAN, PI).is_err());
    }

    #[test]
    fn sixty_distinct_tasks() {
        let all = Task::all();
        assert_eq!(all.len(), 60);
        for (i, t) in all.iter().enumerate() {
            assert_eq!(t.task_id, i);
            assert_abs_diff_eq!(norm(t.goal), t.radius, epsilon = 1e-12);
            let again = Task::new(t.radius, t.angle).unwrap();
            assert_eq!(again.task_id, t.task_id);
        }
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                assert!(a.radius != b.radius || (a.angle - b.angle).abs() > 1e-6);
            }
        }
        assert_eq!(Task::with_radius(2.9).len(), 20);
    }

    #[test]
    fn projection_examples() {
        let p = project_action([0.3, 0.4], 0.1).unwrap();
        assert_abs_diff_eq!(p[0], 0.06, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.08, epsilon = 1e-12);
        assert_eq!(project_action([0.05, 0.0], 0.1).unwrap(), [0.05, 0.0]);
        assert_eq!(project_action([0.0, 0.0], 0.1).unwrap(), [0.0, 0.0]);
        assert!(project_action([f64::INFINITY, 0.0], 0.1).is_err());
    }

    #[test]
    fn optimal_steps_examples() {
        let cfg = EnvConfig::default();
        for (r, n) in [(2.9, 29), (0.9, 9), (1.9, 19)] {
            let t = Task::new(r, PI).unwrap();
            assert_eq!(optimal_steps(&t, &cfg), n);
        }
    }

    #[test]
    fn stop_at_goal_on_time_earns_full_bonus() {
        let cfg = EnvConfig::default();
        let task = Task::new(2.9, 0.5 * PI).unwrap();
        let state = EnvState {
            position: task.goal,
            step_count: optimal_steps(&task, &cfg),
            done: false,
        };
        let out = step(&state, &Action::stop(), &task, &cfg).unwrap();
        assert!(out.done);
        assert_eq!(out.reward, 10.0);
    }

    #[test]
    fn late_stop_discounts_bonus() {
        let cfg = EnvConfig::default();
        let task = Task::new(0.9, PI).unwrap();
        let state = EnvState {
            position: task.goal,
            step_count: 11,
            done: false,
        };
        let out = step(&state, &Action::stop(), &task, &cfg).unwrap();
        assert_abs_diff_eq!(out.reward, 10.0 * 0.99f64.powi(2), epsilon = 1e-12);
    }

    #[test]
    fn far_stop_is_negative_distance() {
        let cfg = EnvConfig::default();
        let task = Task::new(2.9, 0.5 * PI).unwrap();
        let state = EnvState {
            position: [0.0, 1.9],
            step_count: 19,
            done: false,
        };
        let out = step(&state, &Action::stop(), &task, &cfg).unwrap();
        assert_abs_diff_eq!(out.reward, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn move_step_from_origin() {
        let cfg = EnvConfig::default();
        let task = Task::new(2.9, PI).unwrap();
        let action = Action {
            translate: [0.3, 0.4],
            stop: false,
        };
        let out = step(&EnvState::initial(), &action, &task, &cfg).unwrap();
        let expected = project_action([0.3, 0.4], 0.1).unwrap();
        assert_eq!(out.state.position, expected);
        assert_eq!(out.reward, 0.0);
        assert!(!out.done);
        assert_eq!(out.state.step_count, 1);
    }

    #[test]
    fn done_is_absorbing() {
        let cfg = EnvConfig::default();
        let task = Task::new(2.9, PI).unwrap();
        let out = step(&EnvState::initial(), &Action::stop(), &task, &cfg).unwrap();
        assert!(matches!(
            step(&out.state, &Action::stop(), &task, &cfg),
            Err(Error::EpisodeDone)
        ));
    }

    #[test]
    fn timeout_forces_stop() {
        let cfg = EnvConfig::default();
        let task = Task::new(2.9, PI).unwrap();
        let mut s = EnvState::initial();
        let idle = Action {
            translate: [0.0, 0.0],
            stop: false,
        };
        let mut last = None;
        while !s.done {
            let out = step(&s, &idle, &task, &cfg).unwrap();
            s = out.state;
            last = Some(out);
        }
        assert_eq!(s.step_count, cfg.max_steps);
        assert_abs_diff_eq!(last.unwrap().reward, -2.9, epsilon = 1e-12);
    }

    #[test]
    fn expert_examples() {
        let cfg = EnvConfig::default();
        let task = Task::new(2.9, 0.5 * PI).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = expert_action(&EnvState::initial(), &task, &cfg, 0.0, &mut rng);
        assert!(!a.stop);
        assert_abs_diff_eq!(a.translate[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.translate[1], 0.1, epsilon = 1e-12);
        let at_goal = EnvState {
            position: task.goal,
            step_count: 29,
            done: false,
        };
        assert!(expert_action(&at_goal, &task, &cfg, 0.0, &mut rng).stop);
    }

    #[test]
    fn noise_free_expert_scores_exactly_ten_everywhere() {
        let cfg = EnvConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for task in Task::all() {
            let mut s = EnvState::initial();
            let mut ret = 0.0;
            while !s.done {
                let a = expert_action(&s, &task, &cfg, 0.0, &mut rng);
                let out = step(&s, &a, &task, &cfg).unwrap();
                ret += out.reward;
                s = out.state;
            }
            assert_eq!(ret, 10.0, "task {}", task.task_id);
            assert_eq!(s.step_count, optimal_steps(&task, &cfg) + 1);
        }
    }

    #[test]
    fn config_validation() {
        assert!(EnvConfig::default().validate().is_ok());
        for c in [
            EnvConfig { max_steps: 10, ..EnvConfig::default() },
            EnvConfig { bonus_discount: 0.0, ..EnvConfig::default() },
            EnvConfig { proximity_threshold: 1.0, ..EnvConfig::default() },
        ] {
            assert!(c.validate().is_err());
        }
    }
}
