//! Soft-Q values over an action grid, for contour plots of a trained
//! two-dimensional navigation agent.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::nets::Checkpoint;

pub const QGRID_HEADER: [&str; 7] = ["task_id", "state_x", "state_y", "action_x", "action_y", "q_value", "mean"];

/// States sampled by default: the start centre, the goal, and three points
/// between and around them.
pub const DEFAULT_STATES: [[f64; 2]; 5] = [[4.0, 4.0], [1.0, 1.0], [-2.0, -2.0], [4.0, -2.0], [-2.0, 4.0]];

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub states: Vec<[f64; 2]>,
    /// Points per action axis, spanning `[−a_max, a_max]`.
    pub resolution: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            states: DEFAULT_STATES.to_vec(),
            resolution: 21,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QGridRow {
    pub task: String,
    pub state: [f64; 2],
    pub action: [f64; 2],
    /// `min(Q₁, Q₂)` of the task's head.
    pub q_value: f64,
    /// Set for a policy's mean action rather than a grid point.
    pub mean: bool,
}

/// Grid rows for every Q head at every state, then one mean-action row per
/// policy task and state.
pub fn qgrid(ckpt: &Checkpoint, spec: &GridSpec) -> Result<Vec<QGridRow>> {
    let arch = &ckpt.architecture;
    if arch.state_dim != 2 || arch.action_dim != 2 {
        return Err(Error::InvalidInput(format!(
            "Q grids need a 2-D state and action space, checkpoint has {}-D / {}-D",
            arch.state_dim, arch.action_dim
        )));
    }
    if spec.resolution < 2 || spec.states.is_empty() {
        return Err(Error::InvalidInput("grid needs at least 2 points per axis and one state".into()));
    }
    let twin = ckpt.twin_q()?;
    let actor = ckpt.actor()?;
    let task_spec = ckpt.task_spec()?;
    let r = spec.resolution;
    let axis = |d: usize| -> Vec<f64> {
        let m = arch.a_max[d];
        (0..r).map(|i| -m + 2.0 * m * i as f64 / (r - 1) as f64).collect()
    };
    let (xs, ys) = (axis(0), axis(1));
    let mut actions = Vec::with_capacity(r * r);
    for &x in &xs {
        for &y in &ys {
            actions.push([x, y]);
        }
    }
    let action_batch = Tensor::from_rows(&actions)?;

    let mut rows = Vec::new();
    for state in &spec.states {
        let states = Tensor::from_rows(&vec![*state; actions.len()])?;
        let q1 = twin.online[0].q_batch(&states, &action_batch)?;
        let q2 = twin.online[1].q_batch(&states, &action_batch)?;
        for (h, label) in arch.q_heads.iter().enumerate() {
            for (i, a) in actions.iter().enumerate() {
                rows.push(QGridRow {
                    task: label.clone(),
                    state: *state,
                    action: *a,
                    q_value: q1.get(i, h).min(q2.get(i, h)),
                    mean: false,
                });
            }
        }
    }
    for state in &spec.states {
        for task in actor.tasks() {
            let label = task_spec.label(task).to_string();
            let a = actor.mean_action(task, state)?;
            let q_value = match arch.q_heads.iter().position(|l| *l == label) {
                Some(h) => {
                    let v1 = twin.online[0].q_values(state, &a)?[h];
                    let v2 = twin.online[1].q_values(state, &a)?[h];
                    v1.min(v2)
                }
                None => f64::NAN,
            };
            rows.push(QGridRow {
                task: label,
                state: *state,
                action: [a[0], a[1]],
                q_value,
                mean: true,
            });
        }
    }
    Ok(rows)
}

/// Grid action with the highest value for `task` at `state`.
pub fn argmax_action(rows: &[QGridRow], task: &str, state: [f64; 2]) -> Option<[f64; 2]> {
    rows.iter()
        .filter(|r| !r.mean && r.task == task && r.state == state)
        .max_by(|a, b| a.q_value.total_cmp(&b.q_value))
        .map(|r| r.action)
}

pub fn write_qgrid(path: &Path, rows: &[QGridRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::InvalidInput(e.to_string()))?;
    w.write_record(QGRID_HEADER).map_err(|e| Error::InvalidInput(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.task.clone(),
            r.state[0].to_string(),
            r.state[1].to_string(),
            r.action[0].to_string(),
            r.action[1].to_string(),
            r.q_value.to_string(),
            u8::from(r.mean).to_string(),
        ])
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
