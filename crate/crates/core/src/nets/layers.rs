use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::Result;
use crate::grad::{Graph, ParamSet, Tensor, Var};

/// Bound for output layers that should start near zero.
pub const FINAL_LAYER_BOUND: f64 = 3e-3;

/// Adds `{name}.w: [n_in, n_out]` and `{name}.b: [n_out]`, both drawn from
/// `Uniform(±bound)`. Hidden layers use `bound = 1/√n_in`.
pub(crate) fn init_linear<R: Rng + ?Sized>(
    params: &mut ParamSet,
    rng: &mut R,
    name: &str,
    n_in: usize,
    n_out: usize,
    bound: Option<f64>,
) {
    let bound = bound.unwrap_or(1.0 / (n_in as f64).sqrt());
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let w = (0..n_in * n_out).map(|_| dist.sample(rng)).collect();
    let b = (0..n_out).map(|_| dist.sample(rng)).collect();
    params.insert(format!("{name}.w"), Tensor::new(vec![n_in, n_out], w).expect("positive dims"));
    params.insert(format!("{name}.b"), Tensor::new(vec![n_out], b).expect("positive dims"));
}

/// Looks up bound parameter handles by name.
pub(crate) struct Bound<'a> {
    params: &'a ParamSet,
    vars: Vec<Var>,
}

impl<'a> Bound<'a> {
    pub fn new(params: &'a ParamSet, g: &mut Graph, prefix: &str, trainable: impl Fn(&str) -> bool) -> Self {
        let vars = params.bind(g, prefix, trainable);
        Self { params, vars }
    }

    pub fn var(&self, name: &str) -> Var {
        let idx = self
            .params
            .names()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("network has no parameter `{name}`"));
        self.vars[idx]
    }

    pub fn linear(&self, g: &mut Graph, x: Var, layer: &str) -> Result<Var> {
        let w = self.var(&format!("{layer}.w"));
        let b = self.var(&format!("{layer}.b"));
        g.linear(x, w, b)
    }

    pub fn dense_relu(&self, g: &mut Graph, x: Var, layer: &str) -> Result<Var> {
        let y = self.linear(g, x, layer)?;
        Ok(g.relu(y))
    }
}
