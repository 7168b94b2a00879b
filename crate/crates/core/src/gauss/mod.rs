//! Diagonal Gaussian policies, activation weights, and tanh-squashed sampling.

mod compose;

pub use compose::{
    compose_linear, compose_product, composition_rules, CompositionRule, LinearComposition, ProductComposition,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{sech2, Graph, Tensor, Var};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Added inside the log of the tanh Jacobian.
pub const JACOBIAN_FLOOR: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_std: Vec<f64>,
}

impl DiagGaussian {
    /// `log_std` is clamped into `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() || mean.is_empty() {
            return Err(Error::shape(
                "gaussian",
                format!("mean has {} entries, log_std {}", mean.len(), log_std.len()),
            ));
        }
        if mean.iter().chain(&log_std).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("gaussian parameters must be finite".into()));
        }
        let log_std = log_std.into_iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        Ok(Self { mean, log_std })
    }

    pub fn from_std(mean: Vec<f64>, std: &[f64]) -> Result<Self> {
        Self::new(mean, std.iter().map(|s| s.ln()).collect())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| (2.0 * l).exp()).collect()
    }
}

/// Per-dimension mixing weights `w_i^[k]`, stored `K × d_A` row-major.
///
/// Every column lies on the probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationWeights {
    k: usize,
    dim: usize,
    weights: Vec<f64>,
}

impl ActivationWeights {
    pub const SIMPLEX_TOL: f64 = 1e-9;

    pub fn new(k: usize, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if k == 0 || dim == 0 || weights.len() != k * dim {
            return Err(Error::shape("activation weights", format!("{k}×{dim} needs {} values", k * dim)));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidInput("activation weights must lie in [0, 1]".into()));
        }
        for i in 0..dim {
            let total: f64 = (0..k).map(|j| weights[j * dim + i]).sum();
            if (total - 1.0).abs() > Self::SIMPLEX_TOL {
                return Err(Error::InvalidInput(format!("weights of dimension {i} sum to {total}")));
            }
        }
        Ok(Self { k, dim, weights })
    }

    /// Softmax over the `K` policies, independently per action dimension.
    /// `logits` is `K × d_A` row-major.
    pub fn from_logits(k: usize, dim: usize, logits: &[f64]) -> Result<Self> {
        if k == 0 || dim == 0 || logits.len() != k * dim {
            return Err(Error::shape("weights_from_logits", format!("{k}×{dim} needs {} logits", k * dim)));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("logits must be finite".into()));
        }
        let mut weights = vec![0.0; k * dim];
        for i in 0..dim {
            let max = (0..k).map(|j| logits[j * dim + i]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..k {
                let e = (logits[j * dim + i] - max).exp();
                weights[j * dim + i] = e;
                total += e;
            }
            for j in 0..k {
                weights[j * dim + i] /= total;
            }
        }
        Ok(Self { k, dim, weights })
    }

    pub fn one_hot(k: usize, dim: usize, selected: usize) -> Result<Self> {
        let mut weights = vec![0.0; k * dim];
        if selected >= k {
            return Err(Error::InvalidInput(format!("policy {selected} out of {k}")));
        }
        weights[selected * dim..(selected + 1) * dim].fill(1.0);
        Self::new(k, dim, weights)
    }

    pub fn num_policies(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, policy: usize, dim: usize) -> f64 {
        self.weights[policy * self.dim + dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SquashedSample {
    pub action: Vec<f64>,
    pub pre_squash: Vec<f64>,
    pub log_prob: f64,
}

/// Reparameterized draw `u = m + σ⊙noise`, squashed to `a_max⊙tanh(u)`.
pub fn sample_squashed(g: &DiagGaussian, noise: &[f64], a_max: &[f64]) -> Result<SquashedSample> {
    check_dims(g, noise.len(), a_max)?;
    let pre_squash: Vec<f64> = g
        .mean
        .iter()
        .zip(&g.log_std)
        .zip(noise)
        .map(|((m, l), n)| m + l.exp() * n)
        .collect();
    let action = pre_squash.iter().zip(a_max).map(|(u, a)| a * u.tanh()).collect();
    let log_prob = log_prob_squashed(g, &pre_squash, a_max)?;
    Ok(SquashedSample {
        action,
        pre_squash,
        log_prob,
    })
}

/// Log-density of the squashed action whose pre-squash value is `pre_squash`.
pub fn log_prob_squashed(g: &DiagGaussian, pre_squash: &[f64], a_max: &[f64]) -> Result<f64> {
    check_dims(g, pre_squash.len(), a_max)?;
    if pre_squash.iter().any(|u| !u.is_finite()) {
        return Err(Error::InvalidInput("pre-squash value must be finite".into()));
    }
    let mut total = 0.0;
    for i in 0..g.dim() {
        let (m, l, u) = (g.mean[i], g.log_std[i], pre_squash[i]);
        let z = (u - m) / l.exp();
        let log_normal = -0.5 * (z * z) - l + -HALF_LN_2PI;
        let log_jac = (a_max[i] * sech2(u) + JACOBIAN_FLOOR).ln();
        total += log_normal - log_jac;
    }
    Ok(total)
}

fn check_dims(g: &DiagGaussian, n: usize, a_max: &[f64]) -> Result<()> {
    if n != g.dim() || a_max.len() != g.dim() {
        return Err(Error::shape(
            "squashed gaussian",
            format!("gaussian dim {}, vector {n}, bound {}", g.dim(), a_max.len()),
        ));
    }
    Ok(())
}

/// Batched squashed sample on a graph.
///
/// `mean` and `log_std` are `[batch, d_A]`; returns the action `[batch, d_A]`
/// and its log-probability `[batch, 1]`, both differentiable in `mean` and
/// `log_std`.
pub fn sample_squashed_on_graph(
    g: &mut Graph,
    mean: Var,
    log_std: Var,
    noise: &Tensor,
    a_max: &[f64],
) -> Result<(Var, Var)> {
    let (batch, dim) = g.value(mean).dims2();
    if noise.dims2() != (batch, dim) || a_max.len() != dim {
        return Err(Error::shape(
            "sample_squashed",
            format!("mean {:?}, noise {:?}, bound {}", g.value(mean).shape(), noise.shape(), a_max.len()),
        ));
    }
    let bound = g.constant(broadcast_rows(a_max, batch));
    let noise = g.constant(noise.clone());
    let std = g.exp(log_std);
    let spread = g.mul(std, noise)?;
    let u = g.add(mean, spread)?;

    let centered = g.sub(u, mean)?;
    let z = g.div(centered, std)?;
    let z2 = g.square(z);
    let quad = g.scale(z2, -0.5);
    let log_normal = g.sub(quad, log_std)?;
    let log_normal = g.add_scalar(log_normal, -HALF_LN_2PI);

    let t = g.tanh(u);
    let action = g.mul(t, bound)?;
    let slope = g.sech2(u);
    let jac = g.mul(bound, slope)?;
    let jac = g.add_scalar(jac, JACOBIAN_FLOOR);
    let log_jac = g.log(jac);
    let per_dim = g.sub(log_normal, log_jac)?;
    let log_prob = g.sum_columns(per_dim);
    Ok((action, log_prob))
}

pub(crate) fn broadcast_rows(row: &[f64], rows: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * row.len());
    for _ in 0..rows {
        data.extend_from_slice(row);
    }
    Tensor::new(vec![rows, row.len()], data).expect("non-empty row")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    #[test]
    fn logits_to_weights_examples() {
        let w = ActivationWeights::from_logits(2, 1, &[0.0, 0.0]).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.5]);

        let w = ActivationWeights::from_logits(2, 1, &[40.0, -40.0]).unwrap();
        assert!((w.get(0, 0) - 1.0).abs() < 1e-15);
        assert!(w.get(1, 0) < 1e-15);

        let w = ActivationWeights::from_logits(2, 1, &[1.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((w.get(0, 0) - e / (e + 1.0)).abs() < 1e-15);
        assert!((w.get(0, 0) - 0.7311).abs() < 1e-4);
        assert!((w.get(1, 0) - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn weights_reject_off_simplex() {
        assert!(ActivationWeights::new(2, 1, vec![0.6, 0.6]).is_err());
        assert!(ActivationWeights::new(2, 1, vec![1.5, -0.5]).is_err());
        assert!(ActivationWeights::new(2, 2, vec![0.3, 1.0, 0.7, 0.0]).is_ok());
    }

    #[test]
    fn log_std_is_clamped() {
        let g = DiagGaussian::new(vec![0.0, 0.0], vec![-50.0, 9.0]).unwrap();
        assert_eq!(g.log_std(), &[LOG_STD_MIN, LOG_STD_MAX]);
        assert!(g.std().iter().all(|&s| s > 0.0));
    }

    #[test]
    fn zero_noise_sample_is_squashed_mean() {
        let g = DiagGaussian::new(vec![0.3, -1.2], vec![0.1, -0.4]).unwrap();
        let s = sample_squashed(&g, &[0.0, 0.0], &[2.0, 4.0]).unwrap();
        assert_eq!(s.pre_squash, vec![0.3, -1.2]);
        assert_eq!(s.action, vec![2.0 * 0.3f64.tanh(), 4.0 * (-1.2f64).tanh()]);
    }

    #[test]
    fn standard_log_prob_value() {
        let g = DiagGaussian::new(vec![0.0], vec![0.0]).unwrap();
        let s = sample_squashed(&g, &[0.0], &[1.0]).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln() - (1.0f64 + 1e-6).ln();
        assert!((s.log_prob - expected).abs() < 1e-15);
        assert!((s.log_prob + 0.91894).abs() < 1e-5);
    }

    #[test]
    fn density_integrates_to_one() {
        // Midpoint rule over the open action interval, 10⁶ cells.
        let a_max = 1.7;
        let g = DiagGaussian::new(vec![0.4], vec![-0.3]).unwrap();
        let n = 1_000_000;
        let da = 2.0 * a_max / n as f64;
        let mut total = 0.0;
        for j in 0..n {
            let a = -a_max + (j as f64 + 0.5) * da;
            let u = (a / a_max).atanh();
            total += log_prob_squashed(&g, &[u], &[a_max]).unwrap().exp() * da;
        }
        assert!((total - 1.0).abs() < 0.01, "{total}");
    }

    #[test]
    fn log_prob_round_trips_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let unif = Uniform::new(-2.0, 1.0).unwrap();
        for _ in 0..1000 {
            let mean: Vec<f64> = (0..3).map(|_| 2.0 * unif.sample(&mut rng)).collect();
            let log_std: Vec<f64> = (0..3).map(|_| unif.sample(&mut rng)).collect();
            let noise: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let g = DiagGaussian::new(mean, log_std).unwrap();
            let a_max = [1.0, 2.0, 4.0];
            let s = sample_squashed(&g, &noise, &a_max).unwrap();
            assert_eq!(log_prob_squashed(&g, &s.pre_squash, &a_max).unwrap(), s.log_prob);
            assert!(s.log_prob.is_finite());
            assert!(s.action.iter().zip(&a_max).all(|(a, m)| a.abs() <= *m));
        }
    }

    #[test]
    fn log_prob_grows_as_std_shrinks() {
        let mut last = f64::NEG_INFINITY;
        for l in [0.0, -1.0, -2.0, -4.0, -8.0, -16.0] {
            let g = DiagGaussian::new(vec![0.2], vec![l]).unwrap();
            let lp = log_prob_squashed(&g, &[0.2], &[1.0]).unwrap();
            assert!(lp > last);
            last = lp;
        }
    }

    #[test]
    fn log_prob_factorizes_over_dimensions() {
        let g = DiagGaussian::new(vec![0.1, -0.5], vec![-0.2, 0.3]).unwrap();
        let u = [0.7, -1.1];
        let joint = log_prob_squashed(&g, &u, &[1.0, 3.0]).unwrap();
        let g0 = DiagGaussian::new(vec![0.1], vec![-0.2]).unwrap();
        let g1 = DiagGaussian::new(vec![-0.5], vec![0.3]).unwrap();
        let split = log_prob_squashed(&g0, &u[..1], &[1.0]).unwrap() + log_prob_squashed(&g1, &u[1..], &[3.0]).unwrap();
        assert!((joint - split).abs() < 1e-14);
    }

    #[test]
    fn graph_sampling_matches_value_path() {
        let g = DiagGaussian::new(vec![0.1, -0.5], vec![-0.2, 0.3]).unwrap();
        let noise = [0.4, -1.3];
        let a_max = [2.0, 3.0];
        let s = sample_squashed(&g, &noise, &a_max).unwrap();

        let mut graph = Graph::new();
        let m = graph.constant(Tensor::row(g.mean()));
        let l = graph.constant(Tensor::row(g.log_std()));
        let (a, lp) = sample_squashed_on_graph(&mut graph, m, l, &Tensor::row(&noise), &a_max).unwrap();
        for (x, y) in graph.value(a).data().iter().zip(&s.action) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!((graph.value(lp).item() - s.log_prob).abs() < 1e-12);
    }
}
