//! Trajectories, segments and prompts, plus the flat token layout.
//!
//! Each transition occupies six tokens: `(rtg, s_x, s_y, a_x, a_y, a_stop)`.
//! A prompt of `J` segments of horizon `H` therefore encodes to `J * H * 6`
//! tokens, segment-major then time-major.

use serde::{Deserialize, Serialize};

use crate::env::Vec2;
use crate::error::{Error, Result};

pub const STATE_DIM: usize = 2;
pub const ACTION_DIM: usize = 3;
pub const TOKENS_PER_TRANSITION: usize = 1 + STATE_DIM + ACTION_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub rtg: f64,
    pub state: Vec2,
    /// `(translate_x, translate_y, stop)` with stop stored as 0.0 / 1.0.
    pub action: [f64; 3],
}

impl Transition {
    pub fn tokens(&self) -> [f64; TOKENS_PER_TRANSITION] {
        [
            self.rtg,
            self.state[0],
            self.state[1],
            self.action[0],
            self.action[1],
            self.action[2],
        ]
    }

    pub fn from_tokens(t: &[f64]) -> Self {
        Self {
            rtg: t[0],
            state: [t[1], t[2]],
            action: [t[3], t[4], t[5]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: usize,
    pub transitions: Vec<Transition>,
    /// Per-step rewards, aligned with `transitions`.
    pub rewards: Vec<f64>,
    pub episodic_return: f64,
}

impl Trajectory {
    /// Assembles a trajectory from `(state, action)` pairs and rewards,
    /// filling in return-to-go.
    pub fn from_steps(
        task_id: usize,
        steps: Vec<(Vec2, [f64; 3])>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        if steps.len() != rewards.len() || steps.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "trajectory needs matching non-empty steps/rewards ({} vs {})",
                steps.len(),
                rewards.len()
            )));
        }
        let rtg = compute_rtg(&rewards)?;
        let transitions = steps
            .into_iter()
            .zip(&rtg)
            .map(|((state, action), &rtg)| Transition { rtg, state, action })
            .collect();
        Ok(Self {
            task_id,
            transitions,
            rewards,
            episodic_return: rtg[0],
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Suffix sums of `rewards`.
pub fn compute_rtg(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::InvalidArgument("empty reward list".into()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("rewards"));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc += r;
        *o = acc;
    }
    Ok(out)
}

/// Keeps the `ceil(pct / 100 * n)` highest-return trajectories, ordered by
/// return descending with ties broken by original index.
pub fn top_percentile(trajectories: &[Trajectory], pct: f64) -> Result<Vec<Trajectory>> {
    if trajectories.is_empty() {
        return Err(Error::InvalidArgument("no trajectories to filter".into()));
    }
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::InvalidArgument(format!("percentile {pct} outside (0, 100]")));
    }
    let n = trajectories.len();
    let keep = ((pct / 100.0 * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        trajectories[b]
            .episodic_return
            .total_cmp(&trajectories[a].episodic_return)
            .then(a.cmp(&b))
    });
    Ok(order[..keep]
        .iter()
        .map(|&i| trajectories[i].clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSource {
    pub trajectory: usize,
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub segment_id: usize,
    /// `None` for segments decoded from free-form token vectors.
    pub source: Option<SegmentSource>,
    pub transitions: Vec<Transition>,
}

impl Segment {
    pub fn horizon(&self) -> usize {
        self.transitions.len()
    }

    pub fn mean_state(&self) -> Vec2 {
        mean_state(self.transitions.iter())
    }

    pub fn push_tokens(&self, out: &mut Vec<f64>) {
        for t in &self.transitions {
            out.extend_from_slice(&t.tokens());
        }
    }
}

fn mean_state<'a>(it: impl Iterator<Item = &'a Transition>) -> Vec2 {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for t in it {
        sx += t.state[0];
        sy += t.state[1];
        n += 1;
    }
    if n == 0 {
        return [0.0, 0.0];
    }
    [sx / n as f64, sy / n as f64]
}

/// Windows of length `horizon` starting at `0, stride, 2 * stride, ...`.
/// Ids are assigned trajectory-major, then by start index.
pub fn enumerate_segments(
    trajectories: &[Trajectory],
    horizon: usize,
    stride: usize,
) -> Result<Vec<Segment>> {
    if horizon == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "segment horizon and stride must be at least 1".into(),
        ));
    }
    let mut segments = Vec::new();
    for (ti, traj) in trajectories.iter().enumerate() {
        let mut start = 0;
        while start + horizon <= traj.len() {
            segments.push(Segment {
                segment_id: segments.len(),
                source: Some(SegmentSource {
                    trajectory: ti,
                    start,
                }),
                transitions: traj.transitions[start..start + horizon].to_vec(),
            });
            start += stride;
        }
    }
    Ok(segments)
}

/// Number of segments and their horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLayout {
    pub segments: usize,
    pub horizon: usize,
}

impl PromptLayout {
    pub fn new(segments: usize, horizon: usize) -> Self {
        Self { segments, horizon }
    }

    pub fn token_len(&self) -> usize {
        self.segments * self.horizon * TOKENS_PER_TRANSITION
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.token_len() {
            return Err(Error::TokenLength {
                got: len,
                expected: self.token_len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub segments: Vec<Segment>,
}

impl Prompt {
    pub fn layout(&self) -> PromptLayout {
        PromptLayout::new(
            self.segments.len(),
            self.segments.first().map_or(0, Segment::horizon),
        )
    }

    pub fn encode_tokens(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout().token_len());
        for s in &self.segments {
            s.push_tokens(&mut out);
        }
        out
    }

    pub fn decode_tokens(tokens: &[f64], layout: PromptLayout) -> Result<Self> {
        layout.check_len(tokens.len())?;
        let seg_len = layout.horizon * TOKENS_PER_TRANSITION;
        let segments = tokens
            .chunks_exact(seg_len.max(1))
            .take(layout.segments)
            .enumerate()
            .map(|(j, chunk)| Segment {
                segment_id: j,
                source: None,
                transitions: chunk
                    .chunks_exact(TOKENS_PER_TRANSITION)
                    .map(Transition::from_tokens)
                    .collect(),
            })
            .collect();
        Ok(Self { segments })
    }

    pub fn mean_state(&self) -> Vec2 {
        mean_state(self.segments.iter().flat_map(|s| s.transitions.iter()))
    }
}

/// Mean of every state token in a flat prompt vector.
pub fn token_mean_state(tokens: &[f64]) -> Vec2 {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for t in tokens.chunks_exact(TOKENS_PER_TRANSITION) {
        sx += t[1];
        sy += t[2];
        n += 1;
    }
    if n == 0 {
        return [0.0, 0.0];
    }
    [sx / n as f64, sy / n as f64]
}

/// Per-task expert demonstrations and their candidate segments. Immutable
/// once built.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoPool {
    task_id: usize,
    horizon: usize,
    trajectories: Vec<Trajectory>,
    segments: Vec<Segment>,
}

impl DemoPool {
    pub fn new(
        task_id: usize,
        trajectories: Vec<Trajectory>,
        horizon: usize,
        stride: usize,
    ) -> Result<Self> {
        let segments = enumerate_segments(&trajectories, horizon, stride)?;
        if segments.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "task {task_id}: no trajectory is at least {horizon} steps long"
            )));
        }
        Ok(Self {
            task_id,
            horizon,
            trajectories,
            segments,
        })
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segment(&self, id: usize) -> Result<&Segment> {
        self.segments.get(id).ok_or(Error::SegmentOutOfRange {
            index: id,
            len: self.segments.len(),
        })
    }

    /// Places the given segments in order. Repeats are allowed.
    pub fn assemble_prompt(&self, indices: &[usize]) -> Result<Prompt> {
        let segments = indices
            .iter()
            .map(|&i| self.segment(i).cloned())
            .collect::<Result<Vec<_>>>()?;
        Ok(Prompt { segments })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line_traj(task_id: usize, len: usize, ret: f64) -> Trajectory {
        let steps = (0..len)
            .map(|t| {
                let stop = if t + 1 == len { 1.0 } else { 0.0 };
                ([0.1 * t as f64, 0.0], [0.1, 0.0, stop])
            })
            .collect();
        let mut rewards = vec![0.0; len];
        rewards[len - 1] = ret;
        Trajectory::from_steps(task_id, steps, rewards).unwrap()
    }

    #[test]
    fn rtg_examples() {
        assert_eq!(compute_rtg(&[0.0, 0.0, 10.0]).unwrap(), vec![10.0; 3]);
        assert_eq!(compute_rtg(&[0.0, -1.0]).unwrap(), vec![-1.0, -1.0]);
        assert_eq!(compute_rtg(&[5.0]).unwrap(), vec![5.0]);
        assert!(compute_rtg(&[]).is_err());
        assert!(compute_rtg(&[f64::NAN]).is_err());
    }

    #[test]
    fn trajectory_rtg_head_is_return() {
        let t = line_traj(3, 7, 4.5);
        assert_eq!(t.episodic_return, 4.5);
        assert_eq!(t.transitions[0].rtg, 4.5);
        assert_eq!(t.transitions.last().unwrap().action[2], 1.0);
    }

    #[test]
    fn top_percentile_picks_best() {
        let trajs: Vec<_> = (0..100).map(|i| line_traj(0, 4, i as f64)).collect();
        let top = top_percentile(&trajs, 10.0).unwrap();
        assert_eq!(top.len(), 10);
        let rets: Vec<f64> = top.iter().map(|t| t.episodic_return).collect();
        assert_eq!(rets, (90..100).rev().map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn top_percentile_ties_by_index() {
        let trajs: Vec<_> = (0..100).map(|i| line_traj(0, 4 + i % 3, 1.0)).collect();
        let top = top_percentile(&trajs, 10.0).unwrap();
        assert_eq!(top, trajs[..10].to_vec());
    }

    #[test]
    fn top_percentile_full_sorts() {
        let trajs: Vec<_> = [3.0, 1.0, 2.0].iter().map(|&r| line_traj(0, 4, r)).collect();
        let top = top_percentile(&trajs, 100.0).unwrap();
        let rets: Vec<f64> = top.iter().map(|t| t.episodic_return).collect();
        assert_eq!(rets, vec![3.0, 2.0, 1.0]);
        assert!(top_percentile(&[], 10.0).is_err());
        assert!(top_percentile(&trajs, 0.0).is_err());
    }

    #[test]
    fn segment_counts() {
        let t = vec![line_traj(0, 30, 1.0)];
        assert_eq!(enumerate_segments(&t, 3, 3).unwrap().len(), 10);
        assert_eq!(enumerate_segments(&t, 3, 1).unwrap().len(), 28);
        assert!(enumerate_segments(&[line_traj(0, 2, 1.0)], 3, 3)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn segment_ids_are_trajectory_major() {
        let t = vec![line_traj(0, 6, 1.0), line_traj(0, 9, 1.0)];
        let segs = enumerate_segments(&t, 3, 3).unwrap();
        let sources: Vec<_> = segs
            .iter()
            .map(|s| {
                let src = s.source.unwrap();
                (s.segment_id, src.trajectory, src.start)
            })
            .collect();
        assert_eq!(
            sources,
            vec![(0, 0, 0), (1, 0, 3), (2, 1, 0), (3, 1, 3), (4, 1, 6)]
        );
    }

    fn pool40() -> DemoPool {
        let trajs = (0..4).map(|_| line_traj(0, 30, 10.0)).collect();
        DemoPool::new(0, trajs, 3, 3).unwrap()
    }

    #[test]
    fn assemble_prompt_cases() {
        let pool = pool40();
        assert_eq!(pool.len(), 40);
        let p = pool.assemble_prompt(&[4]).unwrap();
        assert_eq!(p.segments, vec![pool.segments()[4].clone()]);
        let p = pool.assemble_prompt(&[4, 4]).unwrap();
        assert_eq!(p.segments[0], p.segments[1]);
        assert!(matches!(
            pool.assemble_prompt(&[4, 999]),
            Err(Error::SegmentOutOfRange { index: 999, len: 40 })
        ));
    }

    #[test]
    fn token_lengths() {
        let pool = pool40();
        for (j, expected) in [(1, 18), (2, 36), (4, 72)] {
            let idx: Vec<usize> = (0..j).collect();
            let p = pool.assemble_prompt(&idx).unwrap();
            assert_eq!(p.encode_tokens().len(), expected);
            assert_eq!(PromptLayout::new(j, 3).token_len(), expected);
        }
    }

    #[test]
    fn decode_zero_and_bad_length() {
        let p = Prompt::decode_tokens(&[0.0; 18], PromptLayout::new(1, 3)).unwrap();
        assert_eq!(p.segments.len(), 1);
        assert!(p.segments[0]
            .transitions
            .iter()
            .all(|t| t.tokens() == [0.0; 6]));
        assert!(matches!(
            Prompt::decode_tokens(&[0.0; 17], PromptLayout::new(1, 3)),
            Err(Error::TokenLength { got: 17, expected: 18 })
        ));
    }

    #[test]
    fn token_layout_order() {
        let pool = pool40();
        let p = pool.assemble_prompt(&[1]).unwrap();
        let tok = p.encode_tokens();
        let t0 = &pool.segments()[1].transitions[0];
        assert_eq!(&tok[..6], &t0.tokens());
        assert_eq!(tok[1], 0.1 * 3.0);
        assert_eq!(token_mean_state(&tok), p.mean_state());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(idx in proptest::collection::vec(0usize..40, 1..5)) {
            let pool = pool40();
            let p = pool.assemble_prompt(&idx).unwrap();
            let tok = p.encode_tokens();
            let back = Prompt::decode_tokens(&tok, p.layout()).unwrap();
            prop_assert_eq!(back.encode_tokens(), tok);
            for (a, b) in back.segments.iter().zip(&p.segments) {
                prop_assert_eq!(&a.transitions, &b.transitions);
            }
        }

        #[test]
        fn rtg_is_suffix_sum(rewards in proptest::collection::vec(-10.0f64..10.0, 1..40)) {
            let rtg = compute_rtg(&rewards).unwrap();
            prop_assert_eq!(rtg.len(), rewards.len());
            for t in 0..rewards.len() {
                let direct: f64 = rewards[t..].iter().sum();
                prop_assert!((rtg[t] - direct).abs() < 1e-9);
            }
        }

        #[test]
        fn top_percentile_dominates_excluded(
            rets in proptest::collection::vec(-10.0f64..10.0, 1..60),
            pct in 1.0f64..100.0,
        ) {
            let trajs: Vec<_> = rets.iter().map(|&r| line_traj(0, 3, r)).collect();
            let top = top_percentile(&trajs, pct).unwrap();
            let floor = top.iter().map(|t| t.episodic_return).fold(f64::INFINITY, f64::min);
            let mut kept = vec![false; trajs.len()];
            // Match kept trajectories back by (return, first unused index).
            for t in &top {
                let i = (0..trajs.len())
                    .find(|&i| !kept[i] && trajs[i].episodic_return == t.episodic_return)
                    .unwrap();
                kept[i] = true;
            }
            for (i, t) in trajs.iter().enumerate() {
                if !kept[i] {
                    prop_assert!(t.episodic_return <= floor);
                }
            }
        }
    }
}
