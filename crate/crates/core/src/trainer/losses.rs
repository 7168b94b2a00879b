//! Critic, actor and temperature objectives.
//!
//! Every loss takes its reparameterization noise explicitly so that it is a
//! deterministic function of the parameters; the gradient checker relies on
//! this.

use crate::error::{Error, Result};
use crate::gauss::sample_squashed_on_graph;
use crate::grad::{Gradients, Graph, Tensor, Var};
use crate::nets::{is_task_param, is_weight_param, GaussianPolicyNet, HierarchicalPolicyNet, MultiHeadQNet};

pub const Q_PREFIXES: [&str; 2] = ["q1/", "q2/"];

#[derive(Clone, Debug)]
pub struct CriticLoss {
    pub loss: f64,
    /// `½·mean Σᵢ (Qᵢ − y)²` for each head.
    pub per_head: Vec<f64>,
    /// Gradients for each online network, without prefixes.
    pub grads: [Gradients; 2],
    pub kink_margin: f64,
}

#[derive(Clone, Debug)]
pub struct ActorLoss {
    pub loss: f64,
    /// Contribution of each task, in the order the tasks were given.
    pub per_task: Vec<f64>,
    /// Detached `log π(ã|s)` per task, each `[batch, 1]`.
    pub log_probs: Vec<Tensor>,
    pub grads: Gradients,
    pub kink_margin: f64,
}

/// An action batch and its log-probabilities, both without gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSample {
    pub actions: Tensor,
    pub log_probs: Tensor,
}

/// Fresh samples of every task policy (composables first, compound last).
pub fn sample_hierarchical(
    policy: &HierarchicalPolicyNet,
    states: &Tensor,
    noise: &[Tensor],
) -> Result<Vec<ActionSample>> {
    use crate::nets::Actor;
    let k = policy.num_policies();
    if noise.len() != k + 1 {
        return Err(Error::InvalidInput(format!("need {} noise batches, got {}", k + 1, noise.len())));
    }
    let mut g = Graph::new();
    let s = g.constant(states.clone());
    let out = policy.forward_graph(&mut g, s, "", |_| false)?;
    let mut samples = Vec::with_capacity(k + 1);
    for (j, eps) in noise.iter().enumerate() {
        let (m, l) = if j < k {
            (out.means[j], out.log_stds[j])
        } else {
            (out.compound_mean, out.compound_log_std)
        };
        let (a, lp) = sample_squashed_on_graph(&mut g, m, l, eps, policy.a_max())?;
        samples.push(ActionSample {
            actions: g.value(a).clone(),
            log_probs: g.value(lp).clone(),
        });
    }
    Ok(samples)
}

pub fn sample_gaussian(policy: &GaussianPolicyNet, states: &Tensor, noise: &Tensor) -> Result<ActionSample> {
    use crate::nets::Actor;
    let mut g = Graph::new();
    let s = g.constant(states.clone());
    let (m, l) = policy.forward_graph(&mut g, s, "", |_| false)?;
    let (a, lp) = sample_squashed_on_graph(&mut g, m, l, noise, policy.a_max())?;
    Ok(ActionSample {
        actions: g.value(a).clone(),
        log_probs: g.value(lp).clone(),
    })
}

/// Soft Bellman targets, one `[batch, 1]` column per Q head:
/// `y = r + γ·(minᵢ Q̄ᵢ(s′, a′) − α·log π(a′|s′))`.
///
/// `rewards[h]`, `next[h]` and `alphas[h]` belong to head `h`; `labels[h]`
/// names the task in error messages.
pub fn soft_targets(
    targets: &[MultiHeadQNet; 2],
    next_states: &Tensor,
    rewards: &[Tensor],
    next: &[ActionSample],
    alphas: &[f64],
    gamma: f64,
    labels: &[&str],
) -> Result<Vec<Tensor>> {
    let heads = rewards.len();
    if next.len() != heads || alphas.len() != heads || labels.len() != heads {
        return Err(Error::InvalidInput("soft_targets: per-head inputs differ in length".into()));
    }
    let mut out = Vec::with_capacity(heads);
    let mut g = Graph::new();
    let s = g.constant(next_states.clone());
    for h in 0..heads {
        let a = g.constant(next[h].actions.clone());
        let q1 = targets[0].forward_heads(&mut g, s, a, &[h], "", |_| false)?[0];
        let q2 = targets[1].forward_heads(&mut g, s, a, &[h], "", |_| false)?[0];
        let q = g.min(q1, q2)?;
        let (qv, lp, r) = (g.value(q).data(), next[h].log_probs.data(), rewards[h].data());
        if r.len() != qv.len() || lp.len() != qv.len() {
            return Err(Error::shape("soft_targets", format!("head {h}: batch sizes differ")));
        }
        let y: Vec<f64> = (0..qv.len())
            .map(|b| r[b] + gamma * (qv[b] - alphas[h] * lp[b]))
            .collect();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("Bellman target of task {}", labels[h])));
        }
        out.push(Tensor::new(vec![y.len(), 1], y)?);
    }
    Ok(out)
}

/// `½·mean_batch Σ_h Σᵢ (Qᵢʰ(s, a) − yʰ)²`, differentiated in both online nets.
pub fn critic_loss(online: &[MultiHeadQNet; 2], states: &Tensor, actions: &Tensor, targets: &[Tensor]) -> Result<CriticLoss> {
    let heads = targets.len();
    let batch = states.rows();
    if batch == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut g = Graph::new();
    let s = g.constant(states.clone());
    let a = g.constant(actions.clone());
    let y: Vec<Var> = targets.iter().map(|t| g.constant(t.clone())).collect();
    let y = g.concat(&y)?;
    let mut total: Option<Var> = None;
    let mut per_head = vec![0.0; heads];
    for (net, prefix) in online.iter().zip(Q_PREFIXES) {
        let q = net.forward_graph(&mut g, s, a, prefix, |_| true)?;
        if g.value(q).cols() != heads {
            return Err(Error::shape("critic_loss", format!("{} heads vs {heads} targets", g.value(q).cols())));
        }
        let d = g.sub(q, y)?;
        let sq = g.square(d);
        for row in g.value(sq).data().chunks(heads) {
            for (h, v) in row.iter().enumerate() {
                per_head[h] += 0.5 * v / batch as f64;
            }
        }
        let s = g.sum(sq);
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    let loss = g.scale(total.expect("two nets"), 0.5 / batch as f64);
    let value = g.value(loss).item();
    let kink_margin = g.kink_margin();
    let grads = g.backward(loss)?;
    Ok(CriticLoss {
        loss: value,
        per_head,
        grads: [grads.strip_prefix(Q_PREFIXES[0]), grads.strip_prefix(Q_PREFIXES[1])],
        kink_margin,
    })
}

/// Critic loss of the hierarchical learner: one head per task, each
/// bootstrapped with a fresh sample of that task's policy.
#[allow(clippy::too_many_arguments)]
pub fn hierarchical_q_loss(
    online: &[MultiHeadQNet; 2],
    targets: &[MultiHeadQNet; 2],
    policy: &HierarchicalPolicyNet,
    batch: &crate::replay::Batch,
    alphas: &[f64],
    gamma: f64,
    next_noise: &[Tensor],
    labels: &[&str],
) -> Result<CriticLoss> {
    let next = sample_hierarchical(policy, &batch.next_states, next_noise)?;
    let rewards: Vec<Tensor> = (0..next.len()).map(|j| batch.reward_column(j)).collect();
    let y = soft_targets(targets, &batch.next_states, &rewards, &next, alphas, gamma, labels)?;
    critic_loss(online, &batch.states, &batch.actions, &y)
}

/// Critic loss of the single-task learner trained on reward column `task`.
#[allow(clippy::too_many_arguments)]
pub fn single_q_loss(
    online: &[MultiHeadQNet; 2],
    targets: &[MultiHeadQNet; 2],
    policy: &GaussianPolicyNet,
    batch: &crate::replay::Batch,
    alpha: f64,
    gamma: f64,
    next_noise: &Tensor,
    label: &str,
) -> Result<CriticLoss> {
    let next = sample_gaussian(policy, &batch.next_states, next_noise)?;
    let rewards = [batch.reward_column(policy.task())];
    let y = soft_targets(targets, &batch.next_states, &rewards, &[next], &[alpha], gamma, &[label])?;
    critic_loss(online, &batch.states, &batch.actions, &y)
}

/// `mean(minᵢ Qᵢʰ(s, a) − α·log π)` on the graph, Q parameters held fixed.
fn soft_value(
    g: &mut Graph,
    online: &[MultiHeadQNet; 2],
    states: Var,
    action: Var,
    log_prob: Var,
    head: usize,
    alpha: f64,
) -> Result<Var> {
    let q1 = online[0].forward_heads(g, states, action, &[head], "", |_| false)?[0];
    let q2 = online[1].forward_heads(g, states, action, &[head], "", |_| false)?[0];
    let q = g.min(q1, q2)?;
    let ent = g.scale(log_prob, alpha);
    let v = g.sub(q, ent)?;
    Ok(g.mean(v))
}

fn finish_actor(g: Graph, terms: Vec<Var>, log_probs: Vec<Tensor>) -> Result<ActorLoss> {
    let mut g = g;
    let per_task: Vec<f64> = terms.iter().map(|&t| -g.value(t).item()).collect();
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    let loss = g.neg(total);
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Divergence("policy loss".into()));
    }
    let kink_margin = g.kink_margin();
    let grads = g.backward(loss)?;
    Ok(ActorLoss {
        loss: value,
        per_task,
        log_probs,
        grads,
        kink_margin,
    })
}

/// `−mean Σ_k [minᵢ Qᵢᵏ(s, ãᵏ) − αᵏ·log πᵏ(ãᵏ|s)]` with gradients only for
/// the trunk and the composable heads. `noise` holds one batch per composable
/// task and `alphas` at least one entry per composable task.
pub fn composable_policy_loss(
    online: &[MultiHeadQNet; 2],
    policy: &HierarchicalPolicyNet,
    states: &Tensor,
    alphas: &[f64],
    noise: &[Tensor],
) -> Result<ActorLoss> {
    use crate::nets::Actor;
    let k = policy.num_policies();
    if noise.len() != k || alphas.len() < k {
        return Err(Error::InvalidInput(format!("need {k} noise batches and temperatures")));
    }
    let mut g = Graph::new();
    let s = g.constant(states.clone());
    let out = policy.forward_graph(&mut g, s, "", is_task_param)?;
    let mut terms = Vec::with_capacity(k);
    let mut log_probs = Vec::with_capacity(k);
    for j in 0..k {
        let (a, lp) = sample_squashed_on_graph(&mut g, out.means[j], out.log_stds[j], &noise[j], policy.a_max())?;
        log_probs.push(g.value(lp).clone());
        terms.push(soft_value(&mut g, online, s, a, lp, j, alphas[j])?);
    }
    finish_actor(g, terms, log_probs)
}

/// `−mean [minᵢ Qᵢᴹ(s, ãᴹ) − αᴹ·log πᴹ(ãᴹ|s)]` with gradients only for the
/// activation head; the composable Gaussians are held fixed.
pub fn compound_policy_loss(
    online: &[MultiHeadQNet; 2],
    policy: &HierarchicalPolicyNet,
    states: &Tensor,
    alpha: f64,
    noise: &Tensor,
) -> Result<ActorLoss> {
    use crate::nets::Actor;
    let mut g = Graph::new();
    let s = g.constant(states.clone());
    let out = policy.forward_graph(&mut g, s, "", is_weight_param)?;
    let (a, lp) = sample_squashed_on_graph(&mut g, out.compound_mean, out.compound_log_std, noise, policy.a_max())?;
    let log_probs = vec![g.value(lp).clone()];
    let term = soft_value(&mut g, online, s, a, lp, policy.num_policies(), alpha)?;
    finish_actor(g, vec![term], log_probs)
}

/// Actor loss of the single-task learner (Q head 0).
pub fn single_policy_loss(
    online: &[MultiHeadQNet; 2],
    policy: &GaussianPolicyNet,
    states: &Tensor,
    alpha: f64,
    noise: &Tensor,
) -> Result<ActorLoss> {
    use crate::nets::Actor;
    let mut g = Graph::new();
    let s = g.constant(states.clone());
    let (m, l) = policy.forward_graph(&mut g, s, "", |_| true)?;
    let (a, lp) = sample_squashed_on_graph(&mut g, m, l, noise, policy.a_max())?;
    let log_probs = vec![g.value(lp).clone()];
    let term = soft_value(&mut g, online, s, a, lp, 0, alpha)?;
    finish_actor(g, vec![term], log_probs)
}

/// `mean(−α·(log π + H̄))` with `log π` detached, and its derivative in `log α`.
pub fn alpha_loss(log_alpha: f64, log_probs: &Tensor, entropy_target: f64) -> Result<(f64, f64)> {
    if log_probs.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut g = Graph::new();
    let la = g.param("log_alpha", Tensor::scalar(log_alpha));
    let alpha = g.exp(la);
    let lp = g.constant(log_probs.clone());
    let shifted = g.add_scalar(lp, entropy_target);
    let weighted = g.scale_by(shifted, alpha)?;
    let neg = g.neg(weighted);
    let loss = g.mean(neg);
    let value = g.value(loss).item();
    let grads = g.backward(loss)?;
    let grad = grads.get("log_alpha").map(|t| t.item()).unwrap_or(0.0);
    Ok((value, grad))
}
