use rand::Rng;

use super::layers::{init_linear, Bound, FINAL_LAYER_BOUND};
use crate::error::{Error, Result};
use crate::grad::{Graph, ParamSet, Tensor, Var};

/// Q network over `state ⊕ action` with a shared first layer and one output
/// head per task, ordered `[task 1 … task K, compound]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadQNet {
    state_dim: usize,
    action_dim: usize,
    heads: usize,
    hidden: usize,
    pub params: ParamSet,
}

impl MultiHeadQNet {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        heads: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if state_dim == 0 || action_dim == 0 || heads == 0 || hidden == 0 {
            return Err(Error::InvalidInput("Q network dimensions must be positive".into()));
        }
        let mut params = ParamSet::new();
        init_linear(&mut params, rng, "trunk", state_dim + action_dim, hidden, None);
        for j in 0..heads {
            init_linear(&mut params, rng, &format!("head{j}.hidden"), hidden, hidden, None);
            init_linear(&mut params, rng, &format!("head{j}.out"), hidden, 1, Some(FINAL_LAYER_BOUND));
        }
        Ok(Self {
            state_dim,
            action_dim,
            heads,
            hidden,
            params,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Outputs of the selected heads, each `[batch, 1]`.
    pub fn forward_heads(
        &self,
        g: &mut Graph,
        states: Var,
        actions: Var,
        heads: &[usize],
        prefix: &str,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<Vec<Var>> {
        let (sc, ac) = (g.value(states).cols(), g.value(actions).cols());
        if sc != self.state_dim || ac != self.action_dim {
            return Err(Error::shape(
                "q_forward",
                format!(
                    "state/action have {sc}/{ac} entries, network expects {}/{}",
                    self.state_dim, self.action_dim
                ),
            ));
        }
        if let Some(&j) = heads.iter().find(|&&j| j >= self.heads) {
            return Err(Error::InvalidInput(format!("Q head {j} out of {}", self.heads)));
        }
        let p = Bound::new(&self.params, g, prefix, trainable);
        let input = g.concat(&[states, actions])?;
        let features = p.dense_relu(g, input, "trunk")?;
        heads
            .iter()
            .map(|j| {
                let h = p.dense_relu(g, features, &format!("head{j}.hidden"))?;
                p.linear(g, h, &format!("head{j}.out"))
            })
            .collect()
    }

    /// All heads as one `[batch, heads]` matrix.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        states: Var,
        actions: Var,
        prefix: &str,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<Var> {
        let all: Vec<usize> = (0..self.heads).collect();
        let outs = self.forward_heads(g, states, actions, &all, prefix, trainable)?;
        g.concat(&outs)
    }

    /// One value per head for a single state-action pair.
    pub fn q_values(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let s = g.constant(Tensor::row(state));
        let a = g.constant(Tensor::row(action));
        let out = self.forward_graph(&mut g, s, a, "", |_| false)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Per-head values for a batch of pairs: `[batch, heads]`.
    pub fn q_batch(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let s = g.constant(states.clone());
        let a = g.constant(actions.clone());
        let out = self.forward_graph(&mut g, s, a, "", |_| false)?;
        Ok(g.value(out).clone())
    }
}

/// `target ← ρ·online + (1 − ρ)·target`, elementwise.
pub fn polyak_update(target: &mut ParamSet, online: &ParamSet, rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!("polyak coefficient {rho} outside [0, 1]")));
    }
    target.check_same_layout(online)?;
    for ((_, t), (_, o)) in target.iter_mut().zip(online.iter()) {
        for (t, &o) in t.data_mut().iter_mut().zip(o.data()) {
            *t = rho * o + (1.0 - rho) * *t;
        }
    }
    Ok(())
}

/// Two independently trained Q networks and their slow-moving copies.
#[derive(Clone, Debug, PartialEq)]
pub struct TwinQ {
    pub online: [MultiHeadQNet; 2],
    pub target: [MultiHeadQNet; 2],
}

impl TwinQ {
    /// Targets start as exact copies of the online networks.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        heads: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let q1 = MultiHeadQNet::new(state_dim, action_dim, heads, hidden, rng)?;
        let q2 = MultiHeadQNet::new(state_dim, action_dim, heads, hidden, rng)?;
        Ok(Self {
            target: [q1.clone(), q2.clone()],
            online: [q1, q2],
        })
    }

    pub fn polyak_update(&mut self, rho: f64) -> Result<()> {
        for (t, o) in self.target.iter_mut().zip(&self.online) {
            polyak_update(&mut t.params, &o.params, rho)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qnet() -> MultiHeadQNet {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        MultiHeadQNet::new(2, 2, 3, 16, &mut rng).unwrap()
    }

    #[test]
    fn one_output_per_task() {
        let q = qnet();
        assert_eq!(q.q_values(&[1.0, 2.0], &[0.5, -0.5]).unwrap().len(), 3);
    }

    #[test]
    fn zeroed_final_layers_output_zero() {
        let mut q = qnet();
        for (name, t) in q.params.iter_mut() {
            if name.contains(".out.") {
                t.data_mut().fill(0.0);
            }
        }
        assert_eq!(q.q_values(&[4.0, 4.0], &[1.0, -1.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn heads_are_local() {
        let q = qnet();
        let (s, a) = ([0.7, -2.0], [1.5, 0.2]);
        let base = q.q_values(&s, &a).unwrap();
        for j in 0..3 {
            let mut p = q.clone();
            for (name, t) in p.params.iter_mut() {
                if name.starts_with(&format!("head{j}.")) {
                    t.data_mut().iter_mut().for_each(|v| *v += 0.1);
                }
            }
            let out = p.q_values(&s, &a).unwrap();
            for i in 0..3 {
                if i == j {
                    assert_ne!(out[i], base[i]);
                } else {
                    assert_eq!(out[i], base[i]);
                }
            }
        }
    }

    #[test]
    fn rejects_wrong_dims() {
        let q = qnet();
        assert!(q.q_values(&[1.0], &[0.5, -0.5]).is_err());
        assert!(q.q_values(&[1.0, 2.0], &[0.5]).is_err());
    }

    #[test]
    fn polyak_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut twin = TwinQ::new(2, 2, 3, 8, &mut rng).unwrap();
        assert_eq!(twin.online[0], twin.target[0]);
        for net in twin.online.iter_mut() {
            for (_, t) in net.params.iter_mut() {
                t.data_mut().fill(1.0);
            }
        }
        for net in twin.target.iter_mut() {
            for (_, t) in net.params.iter_mut() {
                t.data_mut().fill(0.0);
            }
        }
        let mut frozen = twin.clone();
        frozen.polyak_update(0.0).unwrap();
        assert_eq!(frozen.target, twin.target);

        let mut small = twin.clone();
        small.polyak_update(5e-3).unwrap();
        assert!(small.target[1].params.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.005)));

        let mut full = twin.clone();
        full.polyak_update(1.0).unwrap();
        assert_eq!(full.target, full.online);

        assert!(twin.polyak_update(1.5).is_err());
    }

    #[test]
    fn polyak_contracts_toward_online() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let online = MultiHeadQNet::new(2, 2, 3, 8, &mut rng).unwrap();
        let mut target = MultiHeadQNet::new(2, 2, 3, 8, &mut rng).unwrap();
        let before = target.clone();
        let rho = 0.3;
        polyak_update(&mut target.params, &online.params, rho).unwrap();
        for (((_, t), (_, b)), (_, o)) in target.params.iter().zip(before.params.iter()).zip(online.params.iter()) {
            for ((t, b), o) in t.data().iter().zip(b.data()).zip(o.data()) {
                assert!(((t - o).abs() - (1.0 - rho) * (b - o).abs()).abs() < 1e-12);
            }
        }
    }
}
