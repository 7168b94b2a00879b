use std::collections::BTreeMap;
use std::sync::Arc;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::losses::{
    alpha_loss, composable_policy_loss, compound_policy_loss, hierarchical_q_loss, single_policy_loss, single_q_loss,
};
use crate::envs::TaskSpec;
use crate::error::{Error, Result};
use crate::gauss::composition_rules;
use crate::grad::{Adam, AdamConfig, ParamSet, Tensor};
use crate::nets::{Actor, Architecture, Checkpoint, GaussianPolicyNet, HierarchicalPolicyNet, TwinQ, FORMAT_VERSION};
use crate::registry::Registry;
use crate::replay::Batch;

/// Hyperparameters shared by every learner.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentSettings {
    pub hidden: usize,
    pub gamma: f64,
    pub rho: f64,
    pub lr_q: f64,
    pub lr_pi: f64,
    pub lr_alpha: f64,
    /// Entropy target per task index.
    pub entropy_targets: Vec<f64>,
    /// Task trained by single-task learners.
    pub task: usize,
}

impl AgentSettings {
    pub fn new(spec: &TaskSpec) -> Self {
        Self {
            hidden: 64,
            gamma: 0.99,
            rho: 5e-3,
            lr_q: 3e-4,
            lr_pi: 3e-4,
            lr_alpha: 3e-4,
            entropy_targets: spec.entropy_targets.clone(),
            task: spec.compound(),
        }
    }
}

/// Per-task losses of one gradient step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub q_loss: BTreeMap<usize, f64>,
    pub pi_loss: BTreeMap<usize, f64>,
    pub alpha_loss: BTreeMap<usize, f64>,
}

/// A learner that acts with one of its policies and improves from replayed
/// minibatches.
pub trait Agent: Send {
    fn algo(&self) -> &'static str;

    fn actor(&self) -> &dyn Actor;

    /// Task whose policy collects experience.
    fn behavior_task(&self) -> usize;

    /// Tasks with a learned policy, in logging order.
    fn learned_tasks(&self) -> Vec<usize>;

    /// `α` of each learned task.
    fn alphas(&self) -> BTreeMap<usize, f64>;

    /// One gradient step on every parameter group, in the fixed update order.
    fn update(&mut self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<UpdateStats>;

    fn checkpoint(&self, env: &str, step: u64, seed: u64) -> Checkpoint;

    fn twin_q(&self) -> &TwinQ;

    /// Stochastic action of the behavior policy.
    fn act(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let actor = self.actor();
        let noise: Vec<f64> = (0..actor.action_dim()).map(|_| StandardNormal.sample(rng)).collect();
        Ok(actor.sample(self.behavior_task(), state, &noise)?.action)
    }
}

pub type AgentBuilder = fn(&AgentSettings, &TaskSpec, &mut ChaCha8Rng) -> Result<Box<dyn Agent>>;

#[derive(Clone, Copy)]
pub struct Algorithm {
    /// Composition rule of the hierarchical policy, if any.
    pub composition: Option<&'static str>,
    pub build: AgentBuilder,
}

pub fn algorithms() -> Registry<Algorithm> {
    let mut r: Registry<Algorithm> = Registry::new("algorithm");
    r.register(
        "hiusac-1",
        "hierarchical intentional-unintentional SAC, linear composition",
        Algorithm {
            composition: Some("linear"),
            build: |s, spec, rng| Ok(Box::new(HiuSac::new("hiusac-1", "linear", s, spec, rng)?)),
        },
    );
    r.register(
        "hiusac-2",
        "hierarchical intentional-unintentional SAC, product composition",
        Algorithm {
            composition: Some("product"),
            build: |s, spec, rng| Ok(Box::new(HiuSac::new("hiusac-2", "product", s, spec, rng)?)),
        },
    );
    r.register(
        "sac",
        "single-task SAC on one reward component",
        Algorithm {
            composition: None,
            build: |s, spec, rng| Ok(Box::new(Sac::new(s, spec, rng)?)),
        },
    );
    r
}

pub fn build_agent(algo: &str, settings: &AgentSettings, spec: &TaskSpec, rng: &mut ChaCha8Rng) -> Result<Box<dyn Agent>> {
    let build = algorithms().get(algo)?.build;
    build(settings, spec, rng)
}

/// `log α` per task, each trained by its own Adam state.
#[derive(Clone, Debug)]
pub struct TemperatureState {
    log_alpha: ParamSet,
    targets: BTreeMap<usize, f64>,
    optimizer: Adam,
}

impl TemperatureState {
    /// All temperatures start at `α = 1`.
    pub fn new(tasks: &[usize], entropy_targets: &[f64], lr: f64) -> Self {
        let mut log_alpha = ParamSet::new();
        let mut targets = BTreeMap::new();
        for &j in tasks {
            log_alpha.insert(j.to_string(), Tensor::scalar(0.0));
            targets.insert(j, entropy_targets[j]);
        }
        Self {
            log_alpha,
            targets,
            optimizer: Adam::new(AdamConfig::with_lr(lr)),
        }
    }

    pub fn log_alpha(&self, task: usize) -> f64 {
        self.log_alpha.get(&task.to_string()).map(|t| t.item()).unwrap_or(0.0)
    }

    pub fn alpha(&self, task: usize) -> f64 {
        self.log_alpha(task).exp()
    }

    pub fn set_log_alpha(&mut self, task: usize, value: f64) {
        self.log_alpha.insert(task.to_string(), Tensor::scalar(value));
    }

    pub fn entropy_target(&self, task: usize) -> f64 {
        self.targets[&task]
    }

    pub fn tasks(&self) -> Vec<usize> {
        self.targets.keys().copied().collect()
    }

    /// One Adam step per temperature; returns the loss of each task.
    pub fn update(&mut self, log_probs: &BTreeMap<usize, Tensor>) -> Result<BTreeMap<usize, f64>> {
        let mut grads = crate::grad::Gradients::default();
        let mut losses = BTreeMap::new();
        for (&j, lp) in log_probs {
            let (loss, grad) = alpha_loss(self.log_alpha(j), lp, self.entropy_target(j))?;
            grads.insert(j.to_string(), Tensor::scalar(grad));
            losses.insert(j, loss);
        }
        self.optimizer.step(&mut self.log_alpha, &grads)?;
        Ok(losses)
    }
}

fn standard_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(vec![rows, cols], data).expect("non-empty batch")
}

/// The hierarchical learner: `K` composable policies and one compound policy
/// trained jointly from the compound policy's experience.
pub struct HiuSac {
    name: &'static str,
    composition: &'static str,
    settings: AgentSettings,
    spec: TaskSpec,
    pub policy: HierarchicalPolicyNet,
    pub q: TwinQ,
    pub temperatures: TemperatureState,
    q_optimizers: [Adam; 2],
    task_optimizer: Adam,
    weight_optimizer: Adam,
}

impl HiuSac {
    pub fn new(
        name: &'static str,
        composition: &'static str,
        settings: &AgentSettings,
        spec: &TaskSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let rule = *composition_rules().get(composition)?;
        let policy = HierarchicalPolicyNet::new(
            spec.state_dim,
            spec.action_dim,
            spec.num_composable,
            settings.hidden,
            spec.a_max.clone(),
            Arc::from(rule()),
            rng,
        )?;
        let q = TwinQ::new(spec.state_dim, spec.action_dim, spec.num_tasks(), settings.hidden, rng)?;
        let tasks: Vec<usize> = (0..spec.num_tasks()).collect();
        Ok(Self {
            name,
            composition,
            settings: settings.clone(),
            spec: spec.clone(),
            policy,
            q,
            temperatures: TemperatureState::new(&tasks, &settings.entropy_targets, settings.lr_alpha),
            q_optimizers: [
                Adam::new(AdamConfig::with_lr(settings.lr_q)),
                Adam::new(AdamConfig::with_lr(settings.lr_q)),
            ],
            task_optimizer: Adam::new(AdamConfig::with_lr(settings.lr_pi)),
            weight_optimizer: Adam::new(AdamConfig::with_lr(settings.lr_pi)),
        })
    }

    fn all_alphas(&self) -> Vec<f64> {
        (0..self.spec.num_tasks()).map(|j| self.temperatures.alpha(j)).collect()
    }
}

impl Agent for HiuSac {
    fn algo(&self) -> &'static str {
        self.name
    }

    fn actor(&self) -> &dyn Actor {
        &self.policy
    }

    fn behavior_task(&self) -> usize {
        self.spec.compound()
    }

    fn learned_tasks(&self) -> Vec<usize> {
        (0..self.spec.num_tasks()).collect()
    }

    fn alphas(&self) -> BTreeMap<usize, f64> {
        self.learned_tasks().into_iter().map(|j| (j, self.temperatures.alpha(j))).collect()
    }

    fn twin_q(&self) -> &TwinQ {
        &self.q
    }

    fn update(&mut self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<UpdateStats> {
        let (b, d, n) = (batch.len(), self.spec.action_dim, self.spec.num_tasks());
        let k = self.spec.num_composable;
        let next_noise: Vec<Tensor> = (0..n).map(|_| standard_normal(rng, b, d)).collect();
        let noise: Vec<Tensor> = (0..n).map(|_| standard_normal(rng, b, d)).collect();
        let labels: Vec<&str> = self.spec.names.iter().map(String::as_str).collect();
        let alphas = self.all_alphas();

        let critic = hierarchical_q_loss(
            &self.q.online,
            &self.q.target,
            &self.policy,
            batch,
            &alphas,
            self.settings.gamma,
            &next_noise,
            &labels,
        )?;
        for ((net, opt), grads) in self.q.online.iter_mut().zip(&mut self.q_optimizers).zip(&critic.grads) {
            opt.step(&mut net.params, grads)?;
        }

        let composable = composable_policy_loss(&self.q.online, &self.policy, &batch.states, &alphas, &noise[..k])?;
        self.task_optimizer.step(&mut self.policy.params, &composable.grads)?;

        let compound = compound_policy_loss(&self.q.online, &self.policy, &batch.states, alphas[k], &noise[k])?;
        self.weight_optimizer.step(&mut self.policy.params, &compound.grads)?;

        let mut log_probs: BTreeMap<usize, Tensor> = composable.log_probs.iter().cloned().enumerate().collect();
        log_probs.insert(k, compound.log_probs[0].clone());
        let alpha_losses = self.temperatures.update(&log_probs)?;

        self.q.polyak_update(self.settings.rho)?;

        let mut pi_loss: BTreeMap<usize, f64> = composable.per_task.iter().copied().enumerate().collect();
        pi_loss.insert(k, compound.loss);
        Ok(UpdateStats {
            q_loss: critic.per_head.iter().copied().enumerate().collect(),
            pi_loss,
            alpha_loss: alpha_losses,
        })
    }

    fn checkpoint(&self, env: &str, step: u64, seed: u64) -> Checkpoint {
        Checkpoint {
            format_version: FORMAT_VERSION,
            architecture: Architecture {
                env: env.to_string(),
                algo: self.name.to_string(),
                state_dim: self.spec.state_dim,
                action_dim: self.spec.action_dim,
                num_composable: self.spec.num_composable,
                hidden: self.settings.hidden,
                composition: Some(self.composition.to_string()),
                a_max: self.spec.a_max.clone(),
                q_heads: self.spec.names.clone(),
                policy_tasks: self.spec.names.clone(),
            },
            step,
            seed,
            log_alphas: self
                .learned_tasks()
                .into_iter()
                .map(|j| (self.spec.names[j].clone(), self.temperatures.log_alpha(j)))
                .collect(),
            policy: self.policy.params.clone(),
            q1: self.q.online[0].params.clone(),
            q2: self.q.online[1].params.clone(),
            q1_target: self.q.target[0].params.clone(),
            q2_target: self.q.target[1].params.clone(),
        }
    }
}

/// Single-task soft actor-critic on one reward component.
pub struct Sac {
    settings: AgentSettings,
    spec: TaskSpec,
    pub policy: GaussianPolicyNet,
    pub q: TwinQ,
    pub temperatures: TemperatureState,
    q_optimizers: [Adam; 2],
    policy_optimizer: Adam,
}

impl Sac {
    pub fn new(settings: &AgentSettings, spec: &TaskSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        if settings.task >= spec.num_tasks() {
            return Err(Error::InvalidInput(format!("task index {} out of range", settings.task)));
        }
        let policy = GaussianPolicyNet::new(
            spec.state_dim,
            spec.action_dim,
            settings.hidden,
            settings.task,
            spec.a_max.clone(),
            rng,
        )?;
        let q = TwinQ::new(spec.state_dim, spec.action_dim, 1, settings.hidden, rng)?;
        Ok(Self {
            settings: settings.clone(),
            spec: spec.clone(),
            policy,
            q,
            temperatures: TemperatureState::new(&[settings.task], &settings.entropy_targets, settings.lr_alpha),
            q_optimizers: [
                Adam::new(AdamConfig::with_lr(settings.lr_q)),
                Adam::new(AdamConfig::with_lr(settings.lr_q)),
            ],
            policy_optimizer: Adam::new(AdamConfig::with_lr(settings.lr_pi)),
        })
    }
}

impl Agent for Sac {
    fn algo(&self) -> &'static str {
        "sac"
    }

    fn actor(&self) -> &dyn Actor {
        &self.policy
    }

    fn behavior_task(&self) -> usize {
        self.settings.task
    }

    fn learned_tasks(&self) -> Vec<usize> {
        vec![self.settings.task]
    }

    fn alphas(&self) -> BTreeMap<usize, f64> {
        [(self.settings.task, self.temperatures.alpha(self.settings.task))].into()
    }

    fn twin_q(&self) -> &TwinQ {
        &self.q
    }

    fn update(&mut self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<UpdateStats> {
        let (b, d, task) = (batch.len(), self.spec.action_dim, self.settings.task);
        let next_noise = standard_normal(rng, b, d);
        let noise = standard_normal(rng, b, d);
        let alpha = self.temperatures.alpha(task);

        let critic = single_q_loss(
            &self.q.online,
            &self.q.target,
            &self.policy,
            batch,
            alpha,
            self.settings.gamma,
            &next_noise,
            &self.spec.names[task],
        )?;
        for ((net, opt), grads) in self.q.online.iter_mut().zip(&mut self.q_optimizers).zip(&critic.grads) {
            opt.step(&mut net.params, grads)?;
        }

        let actor = single_policy_loss(&self.q.online, &self.policy, &batch.states, alpha, &noise)?;
        self.policy_optimizer.step(&mut self.policy.params, &actor.grads)?;

        let alpha_losses = self.temperatures.update(&[(task, actor.log_probs[0].clone())].into())?;
        self.q.polyak_update(self.settings.rho)?;

        Ok(UpdateStats {
            q_loss: [(task, critic.loss)].into(),
            pi_loss: [(task, actor.loss)].into(),
            alpha_loss: alpha_losses,
        })
    }

    fn checkpoint(&self, env: &str, step: u64, seed: u64) -> Checkpoint {
        let label = self.spec.names[self.settings.task].clone();
        Checkpoint {
            format_version: FORMAT_VERSION,
            architecture: Architecture {
                env: env.to_string(),
                algo: "sac".into(),
                state_dim: self.spec.state_dim,
                action_dim: self.spec.action_dim,
                num_composable: self.spec.num_composable,
                hidden: self.settings.hidden,
                composition: None,
                a_max: self.spec.a_max.clone(),
                q_heads: vec![label.clone()],
                policy_tasks: vec![label.clone()],
            },
            step,
            seed,
            log_alphas: [(label, self.temperatures.log_alpha(self.settings.task))].into(),
            policy: self.policy.params.clone(),
            q1: self.q.online[0].params.clone(),
            q2: self.q.online[1].params.clone(),
            q1_target: self.q.target[0].params.clone(),
            q2_target: self.q.target[1].params.clone(),
        }
    }
}
