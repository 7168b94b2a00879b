use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Actor, GaussianPolicyNet, HierarchicalPolicyNet, MultiHeadQNet, TwinQ};
use crate::envs::{make_env, TaskSpec};
use crate::error::{Error, Result};
use crate::gauss::composition_rules;
use crate::grad::ParamSet;

pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild empty networks of the right shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub env: String,
    pub algo: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub num_composable: usize,
    pub hidden: usize,
    /// `None` for a single Gaussian head.
    pub composition: Option<String>,
    pub a_max: Vec<f64>,
    /// Task label of every Q head, in head order.
    pub q_heads: Vec<String>,
    /// Task labels the policy can act for.
    pub policy_tasks: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    pub step: u64,
    pub seed: u64,
    /// `log α` per task label.
    pub log_alphas: BTreeMap<String, f64>,
    pub policy: ParamSet,
    pub q1: ParamSet,
    pub q2: ParamSet,
    pub q1_target: ParamSet,
    pub q2_target: ParamSet,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates a checkpoint document.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "format_version {v}, this build reads {FORMAT_VERSION}"
                )))
            }
            None => return Err(Error::IncompatibleCheckpoint("missing format_version".into())),
        }
        let ckpt: Checkpoint =
            serde_json::from_value(value).map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The environment's task layout, checked against the architecture.
    pub fn task_spec(&self) -> Result<TaskSpec> {
        let arch = &self.architecture;
        let env = make_env(&arch.env).map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
        let spec = env.spec().clone();
        if spec.state_dim != arch.state_dim
            || spec.action_dim != arch.action_dim
            || spec.num_composable != arch.num_composable
            || spec.a_max != arch.a_max
        {
            return Err(Error::IncompatibleCheckpoint(format!(
                "architecture does not match environment `{}`",
                arch.env
            )));
        }
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let spec = self.task_spec()?;
        let arch = &self.architecture;
        for label in arch.q_heads.iter().chain(&arch.policy_tasks).chain(self.log_alphas.keys()) {
            if spec.task_index(label).is_err() {
                return Err(Error::IncompatibleCheckpoint(format!("unknown task label `{label}`")));
            }
        }
        let (policy, twin) = self.templates()?;
        let incompatible = |what: &str, e: Error| Error::IncompatibleCheckpoint(format!("{what}: {e}"));
        policy.check_same_layout(&self.policy).map_err(|e| incompatible("policy", e))?;
        for (what, set, template) in [
            ("q1", &self.q1, &twin.online[0]),
            ("q2", &self.q2, &twin.online[1]),
            ("q1_target", &self.q1_target, &twin.target[0]),
            ("q2_target", &self.q2_target, &twin.target[1]),
        ] {
            template.params.check_same_layout(set).map_err(|e| incompatible(what, e))?;
        }
        if self.log_alphas.values().any(|v| !v.is_finite()) {
            return Err(Error::IncompatibleCheckpoint("non-finite temperature".into()));
        }
        Ok(())
    }

    fn templates(&self) -> Result<(ParamSet, TwinQ)> {
        let arch = &self.architecture;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let policy = match &arch.composition {
            Some(rule) => {
                let rule = *composition_rules()
                    .get(rule)
                    .map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
                if arch.policy_tasks.len() != arch.num_composable + 1 {
                    return Err(Error::IncompatibleCheckpoint(
                        "hierarchical policy must cover every task".into(),
                    ));
                }
                HierarchicalPolicyNet::new(
                    arch.state_dim,
                    arch.action_dim,
                    arch.num_composable,
                    arch.hidden,
                    arch.a_max.clone(),
                    Arc::from(rule()),
                    &mut rng,
                )?
                .params
            }
            None => {
                if arch.policy_tasks.len() != 1 {
                    return Err(Error::IncompatibleCheckpoint(
                        "single-head policy must cover exactly one task".into(),
                    ));
                }
                GaussianPolicyNet::new(arch.state_dim, arch.action_dim, arch.hidden, 0, arch.a_max.clone(), &mut rng)?
                    .params
            }
        };
        let twin = TwinQ::new(arch.state_dim, arch.action_dim, arch.q_heads.len(), arch.hidden, &mut rng)?;
        Ok((policy, twin))
    }

    /// Rebuilds the policy as an [`Actor`].
    pub fn actor(&self) -> Result<Box<dyn Actor>> {
        let arch = &self.architecture;
        let spec = self.task_spec()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(match &arch.composition {
            Some(rule) => {
                let rule = *composition_rules().get(rule)?;
                let mut net = HierarchicalPolicyNet::new(
                    arch.state_dim,
                    arch.action_dim,
                    arch.num_composable,
                    arch.hidden,
                    arch.a_max.clone(),
                    Arc::from(rule()),
                    &mut rng,
                )?;
                net.params = self.policy.clone();
                Box::new(net)
            }
            None => {
                let task = spec.task_index(&arch.policy_tasks[0])?;
                let mut net =
                    GaussianPolicyNet::new(arch.state_dim, arch.action_dim, arch.hidden, task, arch.a_max.clone(), &mut rng)?;
                net.params = self.policy.clone();
                Box::new(net)
            }
        })
    }

    /// Rebuilds the twin critics and their targets.
    pub fn twin_q(&self) -> Result<TwinQ> {
        let (_, mut twin) = self.templates()?;
        let sets = [&self.q1, &self.q2, &self.q1_target, &self.q2_target];
        let nets: [&mut MultiHeadQNet; 4] = {
            let [o1, o2] = &mut twin.online;
            let [t1, t2] = &mut twin.target;
            [o1, o2, t1, t2]
        };
        for (net, set) in nets.into_iter().zip(sets) {
            net.params = set.clone();
        }
        Ok(twin)
    }

    /// Task index of every Q head.
    pub fn q_head_tasks(&self) -> Result<Vec<usize>> {
        let spec = self.task_spec()?;
        self.architecture.q_heads.iter().map(|l| spec.task_index(l)).collect()
    }
}
