//! The two rules that merge `K` composable Gaussians into a compound one.

use super::{ActivationWeights, DiagGaussian, LOG_STD_MAX, LOG_STD_MIN};
use crate::error::{Error, Result};
use crate::grad::{Graph, Var};
use crate::registry::Registry;

/// A composition function `f(W, Π)` producing a Gaussian compound policy.
pub trait CompositionRule: Send + Sync {
    fn name(&self) -> &'static str;

    fn compose(&self, policies: &[DiagGaussian], weights: &ActivationWeights) -> Result<DiagGaussian>;

    /// Batched form on a graph. Every input is `[batch, d_A]`, one entry per
    /// composable policy; returns the compound `(mean, log_std)` with the
    /// log-std clamp applied.
    fn compose_on_graph(&self, g: &mut Graph, means: &[Var], log_stds: &[Var], weights: &[Var]) -> Result<(Var, Var)>;
}

/// Action is a per-dimension convex combination of composable actions.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinearComposition;

/// Per-dimension weighted product of the composable densities.
#[derive(Clone, Copy, Debug, Default)]
pub struct ProductComposition;

pub type CompositionFactory = fn() -> Box<dyn CompositionRule>;

pub fn composition_rules() -> Registry<CompositionFactory> {
    let mut r: Registry<CompositionFactory> = Registry::new("composition rule");
    r.register("linear", "convex combination of composable actions", || Box::new(LinearComposition));
    r.register("product", "weighted product of composable densities", || Box::new(ProductComposition));
    r
}

fn check_inputs(policies: &[DiagGaussian], weights: &ActivationWeights) -> Result<usize> {
    let Some(first) = policies.first() else {
        return Err(Error::InvalidInput("no policies to compose".into()));
    };
    let dim = first.dim();
    if policies.iter().any(|p| p.dim() != dim) {
        return Err(Error::shape("compose", "policies differ in action dimension"));
    }
    if weights.num_policies() != policies.len() || weights.dim() != dim {
        return Err(Error::shape(
            "compose",
            format!(
                "{} policies of dim {dim}, weights {}×{}",
                policies.len(),
                weights.num_policies(),
                weights.dim()
            ),
        ));
    }
    Ok(dim)
}

/// `m_i = Σ_k w_i^k m_i^k`, `c_i = Σ_k (w_i^k σ_i^k)²`.
pub fn compose_linear(policies: &[DiagGaussian], weights: &ActivationWeights) -> Result<DiagGaussian> {
    let dim = check_inputs(policies, weights)?;
    let mut mean = vec![0.0; dim];
    let mut log_std = vec![0.0; dim];
    for i in 0..dim {
        let mut m = 0.0;
        let mut c = 0.0;
        for (k, p) in policies.iter().enumerate() {
            let w = weights.get(k, i);
            m += w * p.mean()[i];
            let s = w * p.log_std()[i].exp();
            c += s * s;
        }
        mean[i] = m;
        log_std[i] = 0.5 * c.ln();
    }
    DiagGaussian::new(mean, log_std)
}

/// `c_i = (Σ_k w_i^k / (σ_i^k)²)⁻¹`, `m_i = c_i Σ_k (w_i^k / (σ_i^k)²) m_i^k`.
pub fn compose_product(policies: &[DiagGaussian], weights: &ActivationWeights) -> Result<DiagGaussian> {
    let dim = check_inputs(policies, weights)?;
    let mut mean = vec![0.0; dim];
    let mut log_std = vec![0.0; dim];
    for i in 0..dim {
        let mut precision = 0.0;
        let mut weighted = 0.0;
        for (k, p) in policies.iter().enumerate() {
            let prec = weights.get(k, i) * (-2.0 * p.log_std()[i]).exp();
            precision += prec;
            weighted += prec * p.mean()[i];
        }
        mean[i] = weighted / precision;
        log_std[i] = -0.5 * precision.ln();
    }
    DiagGaussian::new(mean, log_std)
}

fn check_graph_inputs(means: &[Var], log_stds: &[Var], weights: &[Var]) -> Result<()> {
    if means.is_empty() || means.len() != log_stds.len() || means.len() != weights.len() {
        return Err(Error::shape(
            "compose_on_graph",
            format!("{} means, {} log-stds, {} weights", means.len(), log_stds.len(), weights.len()),
        ));
    }
    Ok(())
}

impl CompositionRule for LinearComposition {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn compose(&self, policies: &[DiagGaussian], weights: &ActivationWeights) -> Result<DiagGaussian> {
        compose_linear(policies, weights)
    }

    fn compose_on_graph(&self, g: &mut Graph, means: &[Var], log_stds: &[Var], weights: &[Var]) -> Result<(Var, Var)> {
        check_graph_inputs(means, log_stds, weights)?;
        let mut mean = None;
        let mut var = None;
        for ((&m, &l), &w) in means.iter().zip(log_stds).zip(weights) {
            let wm = g.mul(w, m)?;
            let s = g.exp(l);
            let ws = g.mul(w, s)?;
            let c = g.square(ws);
            mean = Some(match mean {
                Some(acc) => g.add(acc, wm)?,
                None => wm,
            });
            var = Some(match var {
                Some(acc) => g.add(acc, c)?,
                None => c,
            });
        }
        let (mean, var) = (mean.unwrap(), var.unwrap());
        let log_var = g.log(var);
        let log_std = g.scale(log_var, 0.5);
        let log_std = g.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX);
        Ok((mean, log_std))
    }
}

impl CompositionRule for ProductComposition {
    fn name(&self) -> &'static str {
        "product"
    }

    fn compose(&self, policies: &[DiagGaussian], weights: &ActivationWeights) -> Result<DiagGaussian> {
        compose_product(policies, weights)
    }

    fn compose_on_graph(&self, g: &mut Graph, means: &[Var], log_stds: &[Var], weights: &[Var]) -> Result<(Var, Var)> {
        check_graph_inputs(means, log_stds, weights)?;
        let mut precision = None;
        let mut weighted = None;
        for ((&m, &l), &w) in means.iter().zip(log_stds).zip(weights) {
            let inv_var = g.scale(l, -2.0);
            let inv_var = g.exp(inv_var);
            let prec = g.mul(w, inv_var)?;
            let pm = g.mul(prec, m)?;
            precision = Some(match precision {
                Some(acc) => g.add(acc, prec)?,
                None => prec,
            });
            weighted = Some(match weighted {
                Some(acc) => g.add(acc, pm)?,
                None => pm,
            });
        }
        let (precision, weighted) = (precision.unwrap(), weighted.unwrap());
        let mean = g.div(weighted, precision)?;
        let log_prec = g.log(precision);
        let log_std = g.scale(log_prec, -0.5);
        let log_std = g.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX);
        Ok((mean, log_std))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::Tensor;
    use proptest::prelude::*;

    fn gauss(mean: &[f64], std: &[f64]) -> DiagGaussian {
        DiagGaussian::from_std(mean.to_vec(), std).unwrap()
    }

    #[test]
    fn linear_examples() {
        let a = gauss(&[0.5, -1.0], &[0.3, 2.0]);
        let b = gauss(&[2.0, 3.0], &[1.0, 0.5]);
        // column weights (1, 0) in dimension 0
        let w = ActivationWeights::new(2, 2, vec![1.0, 0.5, 0.0, 0.5]).unwrap();
        let c = compose_linear(&[a.clone(), b.clone()], &w).unwrap();
        assert_eq!(c.mean()[0], a.mean()[0]);
        assert!((c.log_std()[0] - a.log_std()[0]).abs() < 1e-15);

        let a = gauss(&[0.0], &[1.0]);
        let b = gauss(&[2.0], &[1.0]);
        let w = ActivationWeights::new(2, 1, vec![0.5, 0.5]).unwrap();
        let c = compose_linear(&[a, b], &w).unwrap();
        assert!((c.mean()[0] - 1.0).abs() < 1e-15);
        assert!((c.variance()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn product_examples() {
        let a = gauss(&[0.5, -1.0], &[0.3, 2.0]);
        let b = gauss(&[2.0, 3.0], &[1.0, 0.5]);
        let w = ActivationWeights::new(2, 2, vec![1.0, 0.5, 0.0, 0.5]).unwrap();
        let c = compose_product(&[a.clone(), b], &w).unwrap();
        assert!((c.mean()[0] - a.mean()[0]).abs() < 1e-15);
        assert!((c.log_std()[0] - a.log_std()[0]).abs() < 1e-15);

        let a = gauss(&[0.0], &[1.0]);
        let b = gauss(&[2.0], &[1.0]);
        let w = ActivationWeights::new(2, 1, vec![0.5, 0.5]).unwrap();
        let c = compose_product(&[a, b], &w).unwrap();
        assert!((c.mean()[0] - 1.0).abs() < 1e-15);
        assert!((c.variance()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_policies_compose_to_themselves_under_product() {
        let p = gauss(&[0.7, -0.2, 1.5], &[0.4, 1.3, 0.9]);
        let w = ActivationWeights::from_logits(3, 3, &[0.1, 2.0, -1.0, 0.5, 0.0, 0.3, -0.7, 1.1, 0.0]).unwrap();
        let c = compose_product(&[p.clone(), p.clone(), p.clone()], &w).unwrap();
        for i in 0..3 {
            assert!((c.mean()[i] - p.mean()[i]).abs() < 1e-12);
            assert!((c.log_std()[i] - p.log_std()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let a = gauss(&[0.0, 0.0], &[1.0, 1.0]);
        let b = gauss(&[0.0], &[1.0]);
        let w = ActivationWeights::new(2, 2, vec![0.5; 4]).unwrap();
        assert!(compose_linear(&[a.clone(), b], &w).is_err());
        let w3 = ActivationWeights::new(3, 2, vec![1.0 / 3.0; 6]).unwrap();
        assert!(compose_product(&[a.clone(), a], &w3).is_err());
        assert!(compose_linear(&[], &w).is_err());
    }

    #[test]
    fn registry_resolves_both_rules() {
        let rules = composition_rules();
        assert_eq!(rules.get("linear").unwrap()().name(), "linear");
        assert_eq!(rules.get("product").unwrap()().name(), "product");
        assert!(rules.get("sum").is_err());
    }

    fn arb_case() -> impl Strategy<Value = (Vec<DiagGaussian>, ActivationWeights)> {
        (2usize..=4, 1usize..=3).prop_flat_map(|(k, d)| {
            (
                prop::collection::vec((prop::collection::vec(-3.0..3.0f64, d), prop::collection::vec(-2.0..1.0f64, d)), k),
                prop::collection::vec(-4.0..4.0f64, k * d),
            )
                .prop_map(move |(ps, logits)| {
                    let policies = ps.into_iter().map(|(m, l)| DiagGaussian::new(m, l).unwrap()).collect();
                    (policies, ActivationWeights::from_logits(k, d, &logits).unwrap())
                })
        })
    }

    proptest! {
        #[test]
        fn weights_lie_on_simplex(k in 1usize..5, d in 1usize..4, seed in prop::collection::vec(-50.0..50.0f64, 16)) {
            let logits: Vec<f64> = seed.iter().cycle().take(k * d).copied().collect();
            let w = ActivationWeights::from_logits(k, d, &logits).unwrap();
            for i in 0..d {
                let total: f64 = (0..k).map(|j| w.get(j, i)).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                prop_assert!((0..k).all(|j| (0.0..=1.0).contains(&w.get(j, i))));
            }
        }

        #[test]
        fn composed_mean_stays_in_convex_range((policies, w) in arb_case()) {
            for c in [compose_linear(&policies, &w).unwrap(), compose_product(&policies, &w).unwrap()] {
                for i in 0..c.dim() {
                    let lo = policies.iter().map(|p| p.mean()[i]).fold(f64::INFINITY, f64::min);
                    let hi = policies.iter().map(|p| p.mean()[i]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(c.mean()[i] >= lo - 1e-12 && c.mean()[i] <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn composed_variance_bounds((policies, w) in arb_case()) {
            let lin = compose_linear(&policies, &w).unwrap();
            let prod = compose_product(&policies, &w).unwrap();
            for i in 0..lin.dim() {
                let vars: Vec<f64> = policies.iter().map(|p| p.variance()[i]).collect();
                let lo = vars.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vars.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lin.variance()[i] <= hi * (1.0 + 1e-12));
                prop_assert!(prod.variance()[i] >= lo * (1.0 - 1e-12));
                prop_assert!(prod.variance()[i] <= hi * (1.0 + 1e-12));
            }
        }

        #[test]
        fn one_hot_reproduces_selected_policy((policies, _) in arb_case(), pick in 0usize..4) {
            let k = policies.len();
            let pick = pick % k;
            let w = ActivationWeights::one_hot(k, policies[0].dim(), pick).unwrap();
            for c in [compose_linear(&policies, &w).unwrap(), compose_product(&policies, &w).unwrap()] {
                for i in 0..c.dim() {
                    prop_assert!((c.mean()[i] - policies[pick].mean()[i]).abs() < 1e-12);
                    prop_assert!((c.log_std()[i] - policies[pick].log_std()[i]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn equal_means_are_preserved((policies, w) in arb_case(), mu in -2.0..2.0f64) {
            let shared: Vec<DiagGaussian> = policies
                .iter()
                .map(|p| DiagGaussian::new(vec![mu; p.dim()], p.log_std().to_vec()).unwrap())
                .collect();
            for c in [compose_linear(&shared, &w).unwrap(), compose_product(&shared, &w).unwrap()] {
                prop_assert!(c.mean().iter().all(|m| (m - mu).abs() < 1e-12));
            }
        }

        #[test]
        fn graph_form_matches_value_form((policies, w) in arb_case()) {
            let k = policies.len();
            let d = policies[0].dim();
            for rule in [&LinearComposition as &dyn CompositionRule, &ProductComposition] {
                let expected = rule.compose(&policies, &w).unwrap();
                let mut g = Graph::new();
                let means: Vec<Var> = policies.iter().map(|p| g.constant(Tensor::row(p.mean()))).collect();
                let logs: Vec<Var> = policies.iter().map(|p| g.constant(Tensor::row(p.log_std()))).collect();
                let ws: Vec<Var> = (0..k)
                    .map(|j| g.constant(Tensor::row(&w.as_slice()[j * d..(j + 1) * d])))
                    .collect();
                let (m, l) = rule.compose_on_graph(&mut g, &means, &logs, &ws).unwrap();
                for i in 0..d {
                    prop_assert!((g.value(m).data()[i] - expected.mean()[i]).abs() < 1e-12);
                    prop_assert!((g.value(l).data()[i] - expected.log_std()[i]).abs() < 1e-12);
                }
            }
        }
    }
}
