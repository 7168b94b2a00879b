use std::f64::consts::PI;

use rand::RngCore;
use rand_distr::{Distribution, Uniform};

use super::{action_penalty, clip_action, Environment, StepResult, TaskSpec};
use crate::error::Result;

pub const LINKS: [f64; 3] = [1.0, 1.0, 1.0];
pub const DT: f64 = 0.05;
pub const HORIZON: usize = 300;
pub const A_MAX: f64 = 1.0;

/// Three-link planar arm driven by joint-velocity commands.
///
/// State: joint angles (3), previous command (3), end-effector minus goal (2).
/// Task 1 aligns the end-effector x with the goal, task 2 the y, and the
/// compound task reaches the goal point.
#[derive(Clone, Debug)]
pub struct Reacher2DKinematic {
    spec: TaskSpec,
    angles: [f64; 3],
    last_command: [f64; 3],
    goal: [f64; 2],
    t: usize,
    clipped: u64,
}

impl Default for Reacher2DKinematic {
    fn default() -> Self {
        Self::new()
    }
}

impl Reacher2DKinematic {
    pub fn new() -> Self {
        Self {
            spec: TaskSpec::new(2, 8, vec![A_MAX; 3], HORIZON, 1.0),
            angles: [0.0; 3],
            last_command: [0.0; 3],
            goal: [1.5, 1.5],
            t: 0,
            clipped: 0,
        }
    }

    pub fn end_effector(angles: &[f64; 3]) -> [f64; 2] {
        let mut phi = 0.0;
        let mut p = [0.0; 2];
        for (theta, len) in angles.iter().zip(LINKS) {
            phi += theta;
            p[0] += len * phi.cos();
            p[1] += len * phi.sin();
        }
        p
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    fn observe(&self) -> Vec<f64> {
        let ee = Self::end_effector(&self.angles);
        let mut s = Vec::with_capacity(8);
        s.extend_from_slice(&self.angles);
        s.extend_from_slice(&self.last_command);
        s.push(ee[0] - self.goal[0]);
        s.push(ee[1] - self.goal[1]);
        s
    }
}

impl Environment for Reacher2DKinematic {
    fn name(&self) -> &'static str {
        "reacher2d-kin"
    }

    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        let jitter = Uniform::new_inclusive(-0.1, 0.1).unwrap();
        for a in self.angles.iter_mut() {
            *a = jitter.sample(rng);
        }
        self.last_command = [0.0; 3];
        let radius = Uniform::new_inclusive(0.5, 2.5).unwrap().sample(rng);
        let heading = Uniform::new(-PI, PI).unwrap().sample(rng);
        self.goal = [radius * heading.cos(), radius * heading.sin()];
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = clip_action(action, &self.spec.a_max, &mut self.clipped)?;
        let state = self.observe();
        for (angle, v) in self.angles.iter_mut().zip(&a) {
            *angle += DT * v;
        }
        self.last_command.copy_from_slice(&a[..3]);
        self.t += 1;
        let next_state = self.observe();
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
        let (dx, dy) = (state[6], state[7]);
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
