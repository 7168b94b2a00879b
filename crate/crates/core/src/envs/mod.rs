//! Environments that emit one reward per composable task plus the compound
//! reward at every step.

mod nav2d;
mod reacher;

pub use nav2d::Navigation2D;
pub use reacher::Reacher2DKinematic;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::registry::Registry;

/// Label used for the compound task.
pub const COMPOUND_LABEL: &str = "M";

/// Declares the `K` composable tasks and the compound task of an environment.
///
/// Task index `j < K` is composable task `j + 1`; index `K` is the compound task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub num_composable: usize,
    pub names: Vec<String>,
    pub entropy_targets: Vec<f64>,
    pub state_dim: usize,
    pub action_dim: usize,
    pub a_max: Vec<f64>,
    pub horizon: usize,
}

impl TaskSpec {
    pub fn new(num_composable: usize, state_dim: usize, a_max: Vec<f64>, horizon: usize, entropy_target: f64) -> Self {
        assert!(num_composable >= 2, "a compound task needs at least two composable tasks");
        let mut names: Vec<String> = (1..=num_composable).map(|k| k.to_string()).collect();
        names.push(COMPOUND_LABEL.to_string());
        Self {
            num_composable,
            names,
            entropy_targets: vec![entropy_target; num_composable + 1],
            state_dim,
            action_dim: a_max.len(),
            a_max,
            horizon,
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.num_composable + 1
    }

    pub fn compound(&self) -> usize {
        self.num_composable
    }

    pub fn label(&self, task: usize) -> &str {
        &self.names[task]
    }

    /// Resolves `"1"`…`"K"` or `"M"` to a task index.
    pub fn task_index(&self, label: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == label)
            .ok_or_else(|| Error::UnknownName {
                kind: "task",
                name: label.to_string(),
                known: self.names.join(", "),
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    /// `[r¹ … rᴷ, rᴹ]`.
    pub rewards: Vec<f64>,
    /// Set only when the horizon is reached.
    pub done: bool,
}

pub trait Environment: Send {
    fn name(&self) -> &'static str;

    fn spec(&self) -> &TaskSpec;

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;

    /// Actions outside `±a_max` are clipped and counted.
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;

    fn reward_vector(&self, state: &[f64], action: &[f64], next_state: &[f64]) -> Vec<f64>;

    /// Distance between `state` and the target of `task`; zero at the target.
    fn task_distance(&self, state: &[f64], task: usize) -> f64;

    /// Number of actions clipped since construction.
    fn clipped_actions(&self) -> u64;
}

pub type EnvFactory = fn() -> Box<dyn Environment>;

pub fn environments() -> Registry<EnvFactory> {
    let mut r: Registry<EnvFactory> = Registry::new("environment");
    r.register("nav2d", "2-D particle navigating to (-2, -2)", || Box::new(Navigation2D::new()));
    r.register("reacher2d-kin", "kinematic 3-link planar reacher", || {
        Box::new(Reacher2DKinematic::new())
    });
    r
}

pub fn make_env(name: &str) -> Result<Box<dyn Environment>> {
    Ok((environments().get(name)?)())
}

pub(crate) fn clip_action(action: &[f64], a_max: &[f64], clipped: &mut u64) -> Result<Vec<f64>> {
    if action.len() != a_max.len() {
        return Err(Error::shape(
            "step",
            format!("action has {} entries, expected {}", action.len(), a_max.len()),
        ));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidInput("action must be finite".into()));
    }
    let mut out = Vec::with_capacity(action.len());
    let mut any = false;
    for (&a, &m) in action.iter().zip(a_max) {
        if a.abs() > m {
            any = true;
        }
        out.push(a.clamp(-m, m));
    }
    if any {
        *clipped += 1;
    }
    Ok(out)
}

pub(crate) fn action_penalty(action: &[f64]) -> f64 {
    0.01 * action.iter().map(|a| a * a).sum::<f64>()
}
