//! Self-checks: finite-difference gradient checks of every loss and the
//! Monte-Carlo / grid oracles of the two composition rules.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::gauss::{
    compose_linear, compose_product, sample_squashed_on_graph, ActivationWeights, CompositionRule, DiagGaussian,
    LinearComposition, ProductComposition,
};
use crate::grad::{finite_diff_check, FdReport, Gradients, Graph, ParamSet, Tensor};
use crate::nets::{is_task_param, is_weight_param, GaussianPolicyNet, HierarchicalPolicyNet, MultiHeadQNet};
use crate::replay::{Batch, Transition};
use crate::trainer::losses::{
    alpha_loss, composable_policy_loss, compound_policy_loss, hierarchical_q_loss, single_policy_loss, single_q_loss,
    Q_PREFIXES,
};

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;
/// Draws whose closest ReLU / min / clamp input sits nearer than this to its
/// kink are redrawn, since central differences straddling a kink are wrong.
pub const KINK_MARGIN: f64 = 1e-4;
pub const LINEAR_TOLERANCE: f64 = 0.01;
pub const PRODUCT_TOLERANCE: f64 = 1e-3;

const HIDDEN: usize = 6;
const BATCH: usize = 4;
const STATE_DIM: usize = 2;
const ACTION_DIM: usize = 2;
const K: usize = 2;

pub const GRAD_CHECKS: [&str; 9] = [
    "mlp",
    "q_loss",
    "composable_loss",
    "compound_loss/linear",
    "compound_loss/product",
    "compound_log_prob",
    "sac_q_loss",
    "sac_policy_loss",
    "alpha_loss",
];

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: String,
    pub cases: usize,
    /// Worst error over all cases, in the unit `tolerance` is given in.
    pub error: f64,
    pub tolerance: f64,
    pub note: String,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.error < self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}/{}: error {:.3e} (tolerance {:.0e}, {} cases)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.error,
            self.tolerance,
            self.cases
        )?;
        if !self.note.is_empty() {
            write!(f, " {}", self.note)?;
        }
        Ok(())
    }
}

/// Options of the gradient suite. `broken` names a check whose analytic
/// gradient is deliberately halved, to show the harness catches it.
#[derive(Clone, Debug)]
pub struct GradSuite {
    pub draws: usize,
    pub seed: u64,
    pub broken: Option<String>,
}

impl Default for GradSuite {
    fn default() -> Self {
        Self {
            draws: 20,
            seed: 0,
            broken: None,
        }
    }
}

type Eval<'a> = Box<dyn Fn(&ParamSet) -> Result<(f64, Gradients, f64)> + 'a>;

fn gaussian_params(params: &mut ParamSet, rng: &mut ChaCha8Rng, scale: f64) {
    let dist = Normal::new(0.0, scale).expect("positive scale");
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v = dist.sample(rng);
        }
    }
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(vec![rows, cols], data).expect("positive dims")
}

fn subset(params: &ParamSet, keep: impl Fn(&str) -> bool) -> ParamSet {
    let mut out = ParamSet::new();
    for (n, t) in params.iter().filter(|(n, _)| keep(n)) {
        out.insert(n, t.clone());
    }
    out
}

fn overwrite(dst: &mut ParamSet, src: &ParamSet, prefix: &str) {
    for (n, t) in src.iter() {
        if let Some(local) = n.strip_prefix(prefix) {
            if let Some(slot) = dst.get_mut(local) {
                *slot = t.clone();
            }
        }
    }
}

fn q_pair(rng: &mut ChaCha8Rng, heads: usize) -> Result<[MultiHeadQNet; 2]> {
    let mut q = [
        MultiHeadQNet::new(STATE_DIM, ACTION_DIM, heads, HIDDEN, rng)?,
        MultiHeadQNet::new(STATE_DIM, ACTION_DIM, heads, HIDDEN, rng)?,
    ];
    for net in &mut q {
        gaussian_params(&mut net.params, rng, 0.5);
    }
    Ok(q)
}

fn hierarchical(rng: &mut ChaCha8Rng, rule: Arc<dyn CompositionRule>) -> Result<HierarchicalPolicyNet> {
    let mut p = HierarchicalPolicyNet::new(STATE_DIM, ACTION_DIM, K, HIDDEN, vec![1.5, 0.5], rule, rng)?;
    gaussian_params(&mut p.params, rng, 0.5);
    Ok(p)
}

fn batch(rng: &mut ChaCha8Rng, reward_cols: usize) -> Result<Batch> {
    let items: Vec<Transition> = (0..BATCH)
        .map(|_| Transition {
            state: normal(rng, 1, STATE_DIM).into_data(),
            action: normal(rng, 1, ACTION_DIM).into_data(),
            rewards: normal(rng, 1, reward_cols).into_data(),
            next_state: normal(rng, 1, STATE_DIM).into_data(),
            done: false,
        })
        .collect();
    Batch::from_transitions(&items.iter().collect::<Vec<_>>())
}

fn temperature(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.05..1.0)
}

/// One random instance of a check: the parameters and a closure returning
/// `(loss, analytic gradient, kink margin)` at any parameter value.
fn instance<'a>(name: &str, rng: &mut ChaCha8Rng) -> Result<(ParamSet, Eval<'a>)> {
    match name {
        "mlp" => {
            let mut params = ParamSet::new();
            params.insert("l1.w", normal(rng, 3, HIDDEN));
            params.insert("l1.b", Tensor::vector(&normal(rng, 1, HIDDEN).into_data()));
            params.insert("l2.w", normal(rng, HIDDEN, 2));
            params.insert("l2.b", Tensor::vector(&normal(rng, 1, 2).into_data()));
            let x = normal(rng, BATCH, 3);
            let y = normal(rng, BATCH, 2);
            let eval = move |p: &ParamSet| {
                let mut g = Graph::new();
                let vars = p.bind(&mut g, "", |_| true);
                let names: Vec<&str> = p.names().collect();
                let v = |n: &str| vars[names.iter().position(|m| *m == n).expect("known parameter")];
                let xv = g.constant(x.clone());
                let h = g.linear(xv, v("l1.w"), v("l1.b"))?;
                let h = g.relu(h);
                let out = g.linear(h, v("l2.w"), v("l2.b"))?;
                let target = g.constant(y.clone());
                let diff = g.sub(out, target)?;
                let sq = g.square(diff);
                let loss = g.mean(sq);
                let (value, margin) = (g.value(loss).item(), g.kink_margin());
                Ok((value, g.backward(loss)?, margin))
            };
            Ok((params, Box::new(eval)))
        }
        "q_loss" => {
            let policy = hierarchical(rng, Arc::new(LinearComposition))?;
            let online = q_pair(rng, K + 1)?;
            let targets = q_pair(rng, K + 1)?;
            let b = batch(rng, K + 1)?;
            let alphas: Vec<f64> = (0..=K).map(|_| temperature(rng)).collect();
            let next_noise: Vec<Tensor> = (0..=K).map(|_| normal(rng, BATCH, ACTION_DIM)).collect();
            let mut params = ParamSet::new();
            for (net, prefix) in online.iter().zip(Q_PREFIXES) {
                for (n, t) in net.params.iter() {
                    params.insert(format!("{prefix}{n}"), t.clone());
                }
            }
            let eval = move |p: &ParamSet| {
                let mut nets = online.clone();
                for (net, prefix) in nets.iter_mut().zip(Q_PREFIXES) {
                    overwrite(&mut net.params, p, prefix);
                }
                let l = hierarchical_q_loss(&nets, &targets, &policy, &b, &alphas, 0.99, &next_noise, &["1", "2", "M"])?;
                let mut grads = Gradients::default();
                for (g, prefix) in l.grads.iter().zip(Q_PREFIXES) {
                    for (n, t) in g.iter() {
                        grads.insert(format!("{prefix}{n}"), t.clone());
                    }
                }
                Ok((l.loss, grads, l.kink_margin))
            };
            Ok((params, Box::new(eval)))
        }
        "composable_loss" => {
            let policy = hierarchical(rng, Arc::new(ProductComposition))?;
            let q = q_pair(rng, K + 1)?;
            let states = normal(rng, BATCH, STATE_DIM);
            let alphas: Vec<f64> = (0..K).map(|_| temperature(rng)).collect();
            let noise: Vec<Tensor> = (0..K).map(|_| normal(rng, BATCH, ACTION_DIM)).collect();
            let params = subset(&policy.params, is_task_param);
            let eval = move |p: &ParamSet| {
                let mut probe = policy.clone();
                overwrite(&mut probe.params, p, "");
                let l = composable_policy_loss(&q, &probe, &states, &alphas, &noise)?;
                Ok((l.loss, l.grads, l.kink_margin))
            };
            Ok((params, Box::new(eval)))
        }
        "compound_loss/linear" | "compound_loss/product" => {
            let rule: Arc<dyn CompositionRule> = if name.ends_with("linear") {
                Arc::new(LinearComposition)
            } else {
                Arc::new(ProductComposition)
            };
            let policy = hierarchical(rng, rule)?;
            let q = q_pair(rng, K + 1)?;
            let states = normal(rng, BATCH, STATE_DIM);
            let alpha = temperature(rng);
            let noise = normal(rng, BATCH, ACTION_DIM);
            let params = subset(&policy.params, is_weight_param);
            let eval = move |p: &ParamSet| {
                let mut probe = policy.clone();
                overwrite(&mut probe.params, p, "");
                let l = compound_policy_loss(&q, &probe, &states, alpha, &noise)?;
                Ok((l.loss, l.grads, l.kink_margin))
            };
            Ok((params, Box::new(eval)))
        }
        "compound_log_prob" => {
            let rule: Arc<dyn CompositionRule> = if rng.random_bool(0.5) {
                Arc::new(LinearComposition)
            } else {
                Arc::new(ProductComposition)
            };
            let policy = hierarchical(rng, rule)?;
            let states = normal(rng, BATCH, STATE_DIM);
            let noise = normal(rng, BATCH, ACTION_DIM);
            let params = policy.params.clone();
            let eval = move |p: &ParamSet| {
                use crate::nets::Actor;
                let mut probe = policy.clone();
                probe.params = p.clone();
                let mut g = Graph::new();
                let s = g.constant(states.clone());
                let out = probe.forward_graph(&mut g, s, "", |_| true)?;
                let (_, lp) =
                    sample_squashed_on_graph(&mut g, out.compound_mean, out.compound_log_std, &noise, probe.a_max())?;
                let loss = g.mean(lp);
                let (value, margin) = (g.value(loss).item(), g.kink_margin());
                Ok((value, g.backward(loss)?, margin))
            };
            Ok((params, Box::new(eval)))
        }
        "sac_q_loss" => {
            let mut policy = GaussianPolicyNet::new(STATE_DIM, ACTION_DIM, HIDDEN, 1, vec![1.0, 1.0], rng)?;
            gaussian_params(&mut policy.params, rng, 0.5);
            let online = q_pair(rng, 1)?;
            let targets = q_pair(rng, 1)?;
            let b = batch(rng, K + 1)?;
            let alpha = temperature(rng);
            let next_noise = normal(rng, BATCH, ACTION_DIM);
            let mut params = ParamSet::new();
            for (net, prefix) in online.iter().zip(Q_PREFIXES) {
                for (n, t) in net.params.iter() {
                    params.insert(format!("{prefix}{n}"), t.clone());
                }
            }
            let eval = move |p: &ParamSet| {
                let mut nets = online.clone();
                for (net, prefix) in nets.iter_mut().zip(Q_PREFIXES) {
                    overwrite(&mut net.params, p, prefix);
                }
                let l = single_q_loss(&nets, &targets, &policy, &b, alpha, 0.99, &next_noise, "2")?;
                let mut grads = Gradients::default();
                for (g, prefix) in l.grads.iter().zip(Q_PREFIXES) {
                    for (n, t) in g.iter() {
                        grads.insert(format!("{prefix}{n}"), t.clone());
                    }
                }
                Ok((l.loss, grads, l.kink_margin))
            };
            Ok((params, Box::new(eval)))
        }
        "sac_policy_loss" => {
            let mut policy = GaussianPolicyNet::new(STATE_DIM, ACTION_DIM, HIDDEN, 2, vec![1.0, 2.0], rng)?;
            gaussian_params(&mut policy.params, rng, 0.5);
            let q = q_pair(rng, 1)?;
            let states = normal(rng, BATCH, STATE_DIM);
            let alpha = temperature(rng);
            let noise = normal(rng, BATCH, ACTION_DIM);
            let params = policy.params.clone();
            let eval = move |p: &ParamSet| {
                let mut probe = policy.clone();
                probe.params = p.clone();
                let l = single_policy_loss(&q, &probe, &states, alpha, &noise)?;
                Ok((l.loss, l.grads, l.kink_margin))
            };
            Ok((params, Box::new(eval)))
        }
        "alpha_loss" => {
            let mut params = ParamSet::new();
            params.insert("log_alpha", Tensor::scalar(rng.random_range(-3.0..1.0)));
            let log_probs = normal(rng, BATCH, 1);
            let target = rng.random_range(-3.0..3.0);
            let eval = move |p: &ParamSet| {
                let (value, grad) = alpha_loss(p.get("log_alpha").expect("log_alpha").item(), &log_probs, target)?;
                let mut grads = Gradients::default();
                grads.insert("log_alpha".into(), Tensor::scalar(grad));
                Ok((value, grads, f64::INFINITY))
            };
            Ok((params, Box::new(eval)))
        }
        other => Err(Error::UnknownName {
            kind: "gradient check",
            name: other.to_string(),
            known: GRAD_CHECKS.join(", "),
        }),
    }
}

/// Finite-difference check of one loss over `suite.draws` random instances.
pub fn grad_check(name: &str, suite: &GradSuite) -> Result<CheckResult> {
    let broken = suite.broken.as_deref() == Some(name);
    let mut rng = ChaCha8Rng::seed_from_u64(suite.seed);
    rng.set_stream(GRAD_CHECKS.iter().position(|c| *c == name).unwrap_or(0) as u64);
    let (mut accepted, mut rejected, mut worst) = (0, 0, 0.0f64);
    let mut worst_at = String::new();
    while accepted < suite.draws {
        if rejected > 10 * suite.draws.max(1) {
            return Err(Error::InvalidInput(format!("{name}: too many draws near a kink")));
        }
        let (params, eval) = instance(name, &mut rng)?;
        let (_, _, margin) = eval(&params)?;
        if margin < KINK_MARGIN {
            rejected += 1;
            continue;
        }
        let report: FdReport = finite_diff_check(
            |p| {
                let (v, mut grads, _) = eval(p)?;
                if broken {
                    let names: Vec<String> = grads.iter().map(|(n, _)| n.to_string()).collect();
                    for n in names {
                        let t = grads.get_mut(&n).expect("listed");
                        *t = t.map(|x| 0.5 * x);
                    }
                }
                Ok((v, grads))
            },
            &params,
            FD_STEP,
        )?;
        if report.max_rel_error >= worst {
            worst = report.max_rel_error;
            if let Some((n, i)) = &report.worst {
                worst_at = format!("{n}[{i}]");
            }
        }
        accepted += 1;
    }
    Ok(CheckResult {
        suite: "grad",
        name: name.to_string(),
        cases: accepted,
        error: worst,
        tolerance: GRAD_TOLERANCE,
        note: if rejected > 0 {
            format!("(worst at {worst_at}, {rejected} draws near a kink redrawn)")
        } else {
            format!("(worst at {worst_at})")
        },
    })
}

pub fn grad_suite(suite: &GradSuite) -> Result<Vec<CheckResult>> {
    if let Some(b) = &suite.broken {
        if !GRAD_CHECKS.contains(&b.as_str()) {
            return Err(Error::UnknownName {
                kind: "gradient check",
                name: b.clone(),
                known: GRAD_CHECKS.join(", "),
            });
        }
    }
    GRAD_CHECKS.iter().map(|n| grad_check(n, suite)).collect()
}

fn random_case(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> Result<(Vec<DiagGaussian>, ActivationWeights)> {
    let means = Uniform::new(-2.0, 2.0).expect("range");
    let log_stds = Uniform::new(-1.5, 0.5).expect("range");
    let policies = (0..k)
        .map(|_| {
            DiagGaussian::new(
                (0..dim).map(|_| means.sample(rng)).collect(),
                (0..dim).map(|_| log_stds.sample(rng)).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let logits: Vec<f64> = (0..k * dim).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect();
    Ok((policies, ActivationWeights::from_logits(k, dim, &logits)?))
}

/// Samples `a_i = Σ_k w_i^k a_i^k` with independent `a^k ~ π^k` and compares
/// the empirical moments with the linear rule. The mean error is measured in
/// units of the composed standard deviation, the variance error relatively.
pub fn linear_oracle(cases: usize, draws: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let k = rng.random_range(1..=4);
        let dim = rng.random_range(1..=3);
        let (policies, weights) = random_case(&mut rng, k, dim)?;
        let composed = compose_linear(&policies, &weights)?;
        let stds: Vec<Vec<f64>> = policies.iter().map(DiagGaussian::std).collect();
        let (mut sum, mut sum_sq) = (vec![0.0; dim], vec![0.0; dim]);
        for _ in 0..draws {
            for i in 0..dim {
                let mut a = 0.0;
                for (j, p) in policies.iter().enumerate() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    a += weights.get(j, i) * (p.mean()[i] + stds[j][i] * z);
                }
                sum[i] += a;
                sum_sq[i] += a * a;
            }
        }
        let n = draws as f64;
        let var = composed.variance();
        for i in 0..dim {
            let mean = sum[i] / n;
            let emp_var = sum_sq[i] / n - mean * mean;
            worst = worst
                .max((mean - composed.mean()[i]).abs() / var[i].sqrt())
                .max((emp_var - var[i]).abs() / var[i]);
        }
    }
    Ok(CheckResult {
        suite: "oracle",
        name: "linear_monte_carlo".into(),
        cases,
        error: worst,
        tolerance: LINEAR_TOLERANCE,
        note: format!("({draws} draws each)"),
    })
}

/// Normalizes `∏_k N(a; m^k, (σ^k)²)^{w^k}` on a dense 1-D grid and compares
/// its moments with the product rule.
pub fn product_oracle(cases: usize, points: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let k = rng.random_range(1..=4);
        let (policies, weights) = random_case(&mut rng, k, 1)?;
        let composed = compose_product(&policies, &weights)?;
        let max_std = policies.iter().map(|p| p.std()[0]).fold(0.0, f64::max);
        let lo = policies.iter().map(|p| p.mean()[0]).fold(f64::INFINITY, f64::min) - 12.0 * max_std;
        let hi = policies.iter().map(|p| p.mean()[0]).fold(f64::NEG_INFINITY, f64::max) + 12.0 * max_std;
        let step = (hi - lo) / (points - 1) as f64;
        let log_density = |a: f64| -> f64 {
            policies
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let z = (a - p.mean()[0]) / p.std()[0];
                    weights.get(j, 0) * (-0.5 * z * z - p.log_std()[0])
                })
                .sum()
        };
        let logs: Vec<f64> = (0..points).map(|i| log_density(lo + i as f64 * step)).collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut mass, mut first, mut second) = (0.0, 0.0, 0.0);
        for (i, l) in logs.iter().enumerate() {
            let a = lo + i as f64 * step;
            let p = (l - top).exp();
            mass += p;
            first += p * a;
            second += p * a * a;
        }
        let mean = first / mass;
        let var = second / mass - mean * mean;
        worst = worst
            .max((mean - composed.mean()[0]).abs())
            .max((var - composed.variance()[0]).abs());
    }
    Ok(CheckResult {
        suite: "oracle",
        name: "product_grid".into(),
        cases,
        error: worst,
        tolerance: PRODUCT_TOLERANCE,
        note: format!("({points}-point grid)"),
    })
}

pub fn oracle_suite(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![linear_oracle(100, 1_000_000, seed)?, product_oracle(100, 200_001, seed)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> GradSuite {
        GradSuite {
            draws: 2,
            seed: 1,
            broken: None,
        }
    }

    #[test]
    fn every_check_passes_on_a_few_draws() {
        for r in grad_suite(&quick()).unwrap() {
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn broken_gradient_is_caught() {
        let suite = GradSuite {
            broken: Some("alpha_loss".into()),
            ..quick()
        };
        let r = grad_check("alpha_loss", &suite).unwrap();
        assert!(!r.passed());
        assert!(r.to_string().starts_with("FAIL grad/alpha_loss"));
        assert!(grad_check("mlp", &suite).unwrap().passed());
    }

    #[test]
    fn unknown_broken_check_is_rejected() {
        let suite = GradSuite {
            broken: Some("nope".into()),
            ..quick()
        };
        assert!(matches!(grad_suite(&suite), Err(Error::UnknownName { .. })));
    }

    #[test]
    fn oracles_pass_on_small_runs() {
        assert!(linear_oracle(5, 200_000, 3).unwrap().passed());
        assert!(product_oracle(20, 20_001, 3).unwrap().passed());
    }
}
