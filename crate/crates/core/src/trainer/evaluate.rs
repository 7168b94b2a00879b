use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::gauss::sample_squashed;
use crate::nets::Actor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    /// Undiscounted return of the task's own reward component.
    pub avg_return: f64,
    /// Task distance at the last step, averaged over episodes.
    pub final_distance: f64,
    /// Monte-Carlo estimate of `−E[log π(a|s)]` over visited states.
    pub entropy: f64,
}

/// Rolls out every policy of `actor` with deterministic mean actions.
///
/// Each task sees the same `episodes` start states (drawn from `seed`), so
/// tasks and checkpoints evaluated with one seed are directly comparable.
pub fn evaluate(actor: &dyn Actor, env: &mut dyn Environment, episodes: usize, seed: u64) -> Result<Vec<TaskMetrics>> {
    if episodes == 0 {
        return Err(Error::InvalidInput("evaluation needs at least one episode".into()));
    }
    let spec = env.spec().clone();
    let mut out = Vec::new();
    for task in actor.tasks() {
        let mut starts = ChaCha8Rng::seed_from_u64(seed);
        let mut entropy_rng = ChaCha8Rng::seed_from_u64(seed);
        entropy_rng.set_stream(1);
        let (mut ret, mut dist, mut ent, mut visits) = (0.0, 0.0, 0.0, 0usize);
        for _ in 0..episodes {
            let mut state = env.reset(&mut starts);
            loop {
                let g = actor.gaussian(task, &state)?;
                let noise: Vec<f64> = (0..g.dim()).map(|_| StandardNormal.sample(&mut entropy_rng)).collect();
                ent -= sample_squashed(&g, &noise, actor.a_max())?.log_prob;
                visits += 1;
                let action: Vec<f64> = g.mean().iter().zip(actor.a_max()).map(|(m, a)| a * m.tanh()).collect();
                let step = env.step(&action)?;
                ret += step.rewards[task];
                state = step.next_state;
                if step.done {
                    break;
                }
            }
            dist += env.task_distance(&state, task);
        }
        let n = episodes as f64;
        out.push(TaskMetrics {
            task: spec.label(task).to_string(),
            avg_return: ret / n,
            final_distance: dist / n,
            entropy: ent / visits as f64,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, Navigation2D};
    use crate::gauss::DiagGaussian;

    /// Points straight at the goal at full speed, or stays put.
    struct Scripted {
        toward_goal: bool,
        a_max: Vec<f64>,
    }

    impl Actor for Scripted {
        fn state_dim(&self) -> usize {
            2
        }
        fn action_dim(&self) -> usize {
            2
        }
        fn a_max(&self) -> &[f64] {
            &self.a_max
        }
        fn tasks(&self) -> Vec<usize> {
            vec![0, 1, 2]
        }
        fn gaussian(&self, _task: usize, s: &[f64]) -> Result<DiagGaussian> {
            let mean = if self.toward_goal {
                let (dx, dy) = (-2.0 - s[0], -2.0 - s[1]);
                let n = dx.hypot(dy).max(1e-9);
                // full speed until close, then proportional
                let speed = (n / 0.05 / 4.0).min(0.999);
                vec![(speed * dx / n).atanh(), (speed * dy / n).atanh()]
            } else {
                vec![0.0, 0.0]
            };
            DiagGaussian::new(mean, vec![-1.0, -1.0])
        }
    }

    #[test]
    fn goal_seeker_reaches_the_goal() {
        let actor = Scripted {
            toward_goal: true,
            a_max: vec![4.0, 4.0],
        };
        let mut env = Navigation2D::new();
        let m = evaluate(&actor, &mut env, 5, 0).unwrap();
        assert!(m[2].final_distance < 0.2, "{m:?}");
        assert!(m[0].final_distance < 0.2 && m[1].final_distance < 0.2);
    }

    #[test]
    fn idle_policy_stays_at_start_distance() {
        let actor = Scripted {
            toward_goal: false,
            a_max: vec![4.0, 4.0],
        };
        let mut env = make_env("nav2d").unwrap();
        let m = evaluate(&actor, env.as_mut(), 5, 3).unwrap();
        assert!((m[2].final_distance - 8.49).abs() < 1.0, "{m:?}");
        assert!((m[2].avg_return / 200.0 + m[2].final_distance).abs() < 1e-9);
        assert_eq!(m, evaluate(&actor, env.as_mut(), 5, 3).unwrap());
        // same state spread for every task
        assert!(m[0].entropy == m[1].entropy);
    }
}
