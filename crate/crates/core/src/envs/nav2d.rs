use rand::RngCore;
use rand_distr::{Distribution, Normal};

use super::{action_penalty, clip_action, Environment, StepResult, TaskSpec};
use crate::error::Result;

pub const GOAL: [f64; 2] = [-2.0, -2.0];
pub const START_CENTER: [f64; 2] = [4.0, 4.0];
pub const START_STD: f64 = 0.5;
pub const DT: f64 = 0.05;
pub const HORIZON: usize = 200;
pub const A_MAX: f64 = 4.0;
pub const ARENA: f64 = 10.0;

/// Velocity-controlled point particle in a square arena.
///
/// Task 1 rewards reaching `x = −2`, task 2 reaching `y = −2`, and the
/// compound task reaching `(−2, −2)`.
#[derive(Clone, Debug)]
pub struct Navigation2D {
    spec: TaskSpec,
    position: [f64; 2],
    t: usize,
    clipped: u64,
}

impl Default for Navigation2D {
    fn default() -> Self {
        Self::new()
    }
}

impl Navigation2D {
    pub fn new() -> Self {
        Self {
            spec: TaskSpec::new(2, 2, vec![A_MAX, A_MAX], HORIZON, 0.0),
            position: START_CENTER,
            t: 0,
            clipped: 0,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        self.position
    }

    pub fn set_position(&mut self, p: [f64; 2]) {
        self.position = p;
    }

    pub fn elapsed(&self) -> usize {
        self.t
    }
}

impl Environment for Navigation2D {
    fn name(&self) -> &'static str {
        "nav2d"
    }

    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        let x = Normal::new(START_CENTER[0], START_STD).unwrap();
        let y = Normal::new(START_CENTER[1], START_STD).unwrap();
        self.position = [x.sample(rng), y.sample(rng)];
        self.t = 0;
        self.position.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = clip_action(action, &self.spec.a_max, &mut self.clipped)?;
        let state = self.position;
        for (p, v) in self.position.iter_mut().zip(&a) {
            *p = (*p + DT * v).clamp(-ARENA, ARENA);
        }
        self.t += 1;
        let next_state = self.position.to_vec();
        Ok(StepResult {
            rewards: self.reward_vector(&state, &a, &next_state),
            next_state,
            done: self.t >= HORIZON,
        })
    }

    fn reward_vector(&self, _state: &[f64], action: &[f64], next_state: &[f64]) -> Vec<f64> {
        let penalty = action_penalty(action);
        (0..3).map(|j| -self.task_distance(next_state, j) - penalty).collect()
    }

    fn task_distance(&self, state: &[f64], task: usize) -> f64 {
        let dx = state[0] - GOAL[0];
        let dy = state[1] - GOAL[1];
        match task {
            0 => dx.abs(),
            1 => dy.abs(),
            _ => dx.hypot(dy),
        }
    }

    fn clipped_actions(&self) -> u64 {
        self.clipped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reset_is_seeded() {
        let mut env = Navigation2D::new();
        let a = env.reset(&mut ChaCha8Rng::seed_from_u64(1));
        let b = env.reset(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
    }

    #[test]
    fn reset_distribution() {
        let mut env = Navigation2D::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let s = env.reset(&mut rng);
            sum[0] += s[0];
            sum[1] += s[1];
            assert!(env.task_distance(&s, 2) > 1.0);
        }
        assert!((sum[0] / n as f64 - 4.0).abs() < 0.05);
        assert!((sum[1] / n as f64 - 4.0).abs() < 0.05);
    }

    #[test]
    fn step_integrates_velocity() {
        let mut env = Navigation2D::new();
        env.set_position([4.0, 4.0]);
        let r = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(r.next_state, vec![4.0, 4.0]);
        let r = env.step(&[A_MAX, A_MAX]).unwrap();
        assert!((r.next_state[0] - 4.2).abs() < 1e-12 && (r.next_state[1] - 4.2).abs() < 1e-12);
    }

    #[test]
    fn horizon_terminates() {
        let mut env = Navigation2D::new();
        env.reset(&mut ChaCha8Rng::seed_from_u64(0));
        for t in 1..=HORIZON {
            let r = env.step(&[0.1, -0.1]).unwrap();
            assert_eq!(r.done, t == HORIZON, "step {t}");
        }
    }

    #[test]
    fn out_of_bound_actions_are_clipped_and_counted() {
        let mut env = Navigation2D::new();
        env.set_position([0.0, 0.0]);
        let r = env.step(&[100.0, -3.0]).unwrap();
        assert!((r.next_state[0] - 0.2).abs() < 1e-12);
        assert_eq!(env.clipped_actions(), 1);
        env.set_position([9.99, 0.0]);
        let r = env.step(&[4.0, 0.0]).unwrap();
        assert_eq!(r.next_state[0], ARENA);
    }

    #[test]
    fn reward_examples() {
        let env = Navigation2D::new();
        let r = env.reward_vector(&GOAL, &[0.0, 0.0], &GOAL);
        assert_eq!(r, vec![0.0, 0.0, 0.0]);

        let r = env.reward_vector(&[4.0, 4.0], &[0.0, 0.0], &[4.0, 4.0]);
        assert_eq!(r[0], -6.0);
        assert_eq!(r[1], -6.0);
        assert!((r[2] + 6.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((r[2] + 8.485).abs() < 1e-3);

        let moved = env.reward_vector(&[4.0, 4.0], &[1.0, 0.0], &[4.0, 4.0]);
        for j in 0..3 {
            assert!((moved[j] - r[j] + 0.01).abs() < 1e-12);
        }
    }

    #[test]
    fn rewards_are_non_positive_and_rank_by_distance() {
        let env = Navigation2D::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = Normal::new(0.0, 5.0).unwrap();
        for _ in 0..1000 {
            let p = [d.sample(&mut rng), d.sample(&mut rng)];
            let q = [d.sample(&mut rng), d.sample(&mut rng)];
            let a = [d.sample(&mut rng) * 0.2, d.sample(&mut rng) * 0.2];
            let rp = env.reward_vector(&p, &a, &p);
            let rq = env.reward_vector(&q, &a, &q);
            for j in 0..3 {
                assert!(rp[j] <= 0.0);
                let by_reward = rp[j].partial_cmp(&rq[j]).unwrap();
                let by_distance = env.task_distance(&q, j).partial_cmp(&env.task_distance(&p, j)).unwrap();
                assert_eq!(by_reward, by_distance);
            }
        }
    }

    #[test]
    fn goal_seeking_return_bounds_idle_return() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut env = Navigation2D::new();
        let start = env.reset(&mut rng);
        let mut seek = 0.0;
        let mut s = start.clone();
        for _ in 0..HORIZON {
            let dir = [GOAL[0] - s[0], GOAL[1] - s[1]];
            let a = [(dir[0] / DT).clamp(-A_MAX, A_MAX), (dir[1] / DT).clamp(-A_MAX, A_MAX)];
            let r = env.step(&a).unwrap();
            seek += r.rewards[2];
            s = r.next_state;
        }
        assert!(env.task_distance(&s, 2) < 1e-9);

        env.set_position([start[0], start[1]]);
        let mut idle = 0.0;
        for _ in 0..HORIZON {
            idle += env.step(&[0.0, 0.0]).unwrap().rewards[2];
        }
        assert!(seek > idle);
        assert!(seek <= 0.0);
    }
}
