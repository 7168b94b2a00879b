use std::sync::Arc;

use rand::Rng;

use super::layers::{init_linear, Bound, FINAL_LAYER_BOUND};
use crate::error::{Error, Result};
use crate::gauss::{
    sample_squashed, ActivationWeights, CompositionRule, DiagGaussian, SquashedSample, LOG_STD_MAX, LOG_STD_MIN,
};
use crate::grad::{Graph, ParamSet, Tensor, Var};

/// Anything that can hand out a Gaussian policy per task index.
///
/// Task indices follow the reward vector: `0..K` are the composable tasks and
/// `K` is the compound task.
pub trait Actor: Send + Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn a_max(&self) -> &[f64];
    /// Task indices this actor has a policy for.
    fn tasks(&self) -> Vec<usize>;
    fn gaussian(&self, task: usize, state: &[f64]) -> Result<DiagGaussian>;

    /// `a_max ⊙ tanh(mean)`.
    fn mean_action(&self, task: usize, state: &[f64]) -> Result<Vec<f64>> {
        let g = self.gaussian(task, state)?;
        Ok(g.mean().iter().zip(self.a_max()).map(|(m, a)| a * m.tanh()).collect())
    }

    fn sample(&self, task: usize, state: &[f64], noise: &[f64]) -> Result<SquashedSample> {
        let g = self.gaussian(task, state)?;
        sample_squashed(&g, noise, self.a_max())
    }
}

/// Batched outputs of the hierarchical policy on a graph. Every entry is
/// `[batch, d_A]`.
pub struct PolicyGraph {
    pub means: Vec<Var>,
    pub log_stds: Vec<Var>,
    pub weights: Vec<Var>,
    pub compound_mean: Var,
    pub compound_log_std: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyForward {
    pub composables: Vec<DiagGaussian>,
    pub weights: ActivationWeights,
    pub compound: DiagGaussian,
}

/// Shared trunk, `K` Gaussian heads and one activation head whose outputs
/// are merged by a [`CompositionRule`].
#[derive(Clone)]
pub struct HierarchicalPolicyNet {
    state_dim: usize,
    action_dim: usize,
    num_policies: usize,
    hidden: usize,
    a_max: Vec<f64>,
    rule: Arc<dyn CompositionRule>,
    pub params: ParamSet,
}

impl std::fmt::Debug for HierarchicalPolicyNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HierarchicalPolicyNet")
            .field("state_dim", &self.state_dim)
            .field("action_dim", &self.action_dim)
            .field("num_policies", &self.num_policies)
            .field("hidden", &self.hidden)
            .field("rule", &self.rule.name())
            .finish()
    }
}

/// `true` for activation-head parameters (φʷ), `false` for the trunk and the
/// composable heads (φᵀ).
pub fn is_weight_param(name: &str) -> bool {
    name.starts_with("act.")
}

pub fn is_task_param(name: &str) -> bool {
    !is_weight_param(name)
}

impl HierarchicalPolicyNet {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        num_policies: usize,
        hidden: usize,
        a_max: Vec<f64>,
        rule: Arc<dyn CompositionRule>,
        rng: &mut R,
    ) -> Result<Self> {
        if state_dim == 0 || action_dim == 0 || num_policies == 0 || hidden == 0 || a_max.len() != action_dim {
            return Err(Error::InvalidInput("policy network dimensions must be positive".into()));
        }
        let mut params = ParamSet::new();
        init_linear(&mut params, rng, "trunk", state_dim, hidden, None);
        for k in 0..num_policies {
            init_linear(&mut params, rng, &format!("policy{k}.hidden"), hidden, hidden, None);
            init_linear(
                &mut params,
                rng,
                &format!("policy{k}.out"),
                hidden,
                2 * action_dim,
                Some(FINAL_LAYER_BOUND),
            );
        }
        init_linear(&mut params, rng, "act.hidden", hidden, hidden, None);
        init_linear(
            &mut params,
            rng,
            "act.out",
            hidden,
            num_policies * action_dim,
            Some(FINAL_LAYER_BOUND),
        );
        Ok(Self {
            state_dim,
            action_dim,
            num_policies,
            hidden,
            a_max,
            rule,
            params,
        })
    }

    pub fn num_policies(&self) -> usize {
        self.num_policies
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn rule(&self) -> &dyn CompositionRule {
        self.rule.as_ref()
    }

    /// Batched forward pass. Parameters for which `trainable` holds become
    /// graph parameters named `prefix + name`.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        states: Var,
        prefix: &str,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<PolicyGraph> {
        let cols = g.value(states).cols();
        if cols != self.state_dim {
            return Err(Error::shape(
                "policy_forward",
                format!("state has {cols} entries, network expects {}", self.state_dim),
            ));
        }
        let p = Bound::new(&self.params, g, prefix, trainable);
        let d = self.action_dim;
        let features = p.dense_relu(g, states, "trunk")?;

        let mut means = Vec::with_capacity(self.num_policies);
        let mut log_stds = Vec::with_capacity(self.num_policies);
        for k in 0..self.num_policies {
            let h = p.dense_relu(g, features, &format!("policy{k}.hidden"))?;
            let out = p.linear(g, h, &format!("policy{k}.out"))?;
            means.push(g.columns(out, 0, d)?);
            let raw = g.columns(out, d, d)?;
            log_stds.push(g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX));
        }

        let h = p.dense_relu(g, features, "act.hidden")?;
        let logits = p.linear(g, h, "act.out")?;
        let all_weights = g.softmax_groups(logits, self.num_policies)?;
        let weights = (0..self.num_policies)
            .map(|k| g.columns(all_weights, k * d, d))
            .collect::<Result<Vec<_>>>()?;

        let (compound_mean, compound_log_std) = self.rule.compose_on_graph(g, &means, &log_stds, &weights)?;
        Ok(PolicyGraph {
            means,
            log_stds,
            weights,
            compound_mean,
            compound_log_std,
        })
    }

    pub fn forward(&self, state: &[f64]) -> Result<PolicyForward> {
        let mut g = Graph::new();
        let s = g.constant(Tensor::row(state));
        let out = self.forward_graph(&mut g, s, "", |_| false)?;
        let composables = out
            .means
            .iter()
            .zip(&out.log_stds)
            .map(|(&m, &l)| DiagGaussian::new(g.value(m).data().to_vec(), g.value(l).data().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let w: Vec<f64> = out.weights.iter().flat_map(|&w| g.value(w).data().to_vec()).collect();
        let weights = ActivationWeights::new(self.num_policies, self.action_dim, w)?;
        let compound = self.rule.compose(&composables, &weights)?;
        Ok(PolicyForward {
            composables,
            weights,
            compound,
        })
    }
}

impl Actor for HierarchicalPolicyNet {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn a_max(&self) -> &[f64] {
        &self.a_max
    }

    fn tasks(&self) -> Vec<usize> {
        (0..=self.num_policies).collect()
    }

    fn gaussian(&self, task: usize, state: &[f64]) -> Result<DiagGaussian> {
        if task > self.num_policies {
            return Err(Error::InvalidInput(format!("no policy for task index {task}")));
        }
        let mut out = self.forward(state)?;
        Ok(if task == self.num_policies {
            out.compound
        } else {
            out.composables.swap_remove(task)
        })
    }
}

/// Single-head Gaussian policy with the same depth as one composable path,
/// used by the single-task baseline.
#[derive(Clone, Debug)]
pub struct GaussianPolicyNet {
    state_dim: usize,
    action_dim: usize,
    hidden: usize,
    task: usize,
    a_max: Vec<f64>,
    pub params: ParamSet,
}

impl GaussianPolicyNet {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        task: usize,
        a_max: Vec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        if state_dim == 0 || action_dim == 0 || hidden == 0 || a_max.len() != action_dim {
            return Err(Error::InvalidInput("policy network dimensions must be positive".into()));
        }
        let mut params = ParamSet::new();
        init_linear(&mut params, rng, "trunk", state_dim, hidden, None);
        init_linear(&mut params, rng, "policy.hidden", hidden, hidden, None);
        init_linear(
            &mut params,
            rng,
            "policy.out",
            hidden,
            2 * action_dim,
            Some(FINAL_LAYER_BOUND),
        );
        Ok(Self {
            state_dim,
            action_dim,
            hidden,
            task,
            a_max,
            params,
        })
    }

    pub fn task(&self) -> usize {
        self.task
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Batched `(mean, log_std)`, each `[batch, d_A]`.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        states: Var,
        prefix: &str,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<(Var, Var)> {
        let cols = g.value(states).cols();
        if cols != self.state_dim {
            return Err(Error::shape(
                "policy_forward",
                format!("state has {cols} entries, network expects {}", self.state_dim),
            ));
        }
        let p = Bound::new(&self.params, g, prefix, trainable);
        let d = self.action_dim;
        let features = p.dense_relu(g, states, "trunk")?;
        let h = p.dense_relu(g, features, "policy.hidden")?;
        let out = p.linear(g, h, "policy.out")?;
        let mean = g.columns(out, 0, d)?;
        let raw = g.columns(out, d, d)?;
        Ok((mean, g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX)))
    }
}

impl Actor for GaussianPolicyNet {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn a_max(&self) -> &[f64] {
        &self.a_max
    }

    fn tasks(&self) -> Vec<usize> {
        vec![self.task]
    }

    fn gaussian(&self, task: usize, state: &[f64]) -> Result<DiagGaussian> {
        if task != self.task {
            return Err(Error::InvalidInput(format!(
                "policy was trained for task index {}, not {task}",
                self.task
            )));
        }
        let mut g = Graph::new();
        let s = g.constant(Tensor::row(state));
        let (m, l) = self.forward_graph(&mut g, s, "", |_| false)?;
        DiagGaussian::new(g.value(m).data().to_vec(), g.value(l).data().to_vec())
    }
}
