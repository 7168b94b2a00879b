//! Central finite-difference gradient checker.

use super::graph::Gradients;
use super::params::ParamSet;
use crate::error::Result;

/// Denominator floor for the relative error, so that gradients which are
/// zero up to rounding do not inflate the ratio.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// Parameter and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floored(analytic, numeric, RELATIVE_FLOOR)
}

fn relative_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central differences of a loss of size `|f|` carry round-off of roughly
/// `ε·|f|/h`. Scaling that by 1e5 keeps it a tenth of a 1e-4 tolerance.
pub fn round_off_floor(loss: f64, h: f64) -> f64 {
    RELATIVE_FLOOR.max(1e5 * f64::EPSILON * loss.abs() / h)
}

/// Compares the analytic gradient of `f` at `params` with
/// `(f(p + h) − f(p − h)) / 2h`, coordinate by coordinate.
///
/// `f` returns the loss and its analytic gradients and must be deterministic.
/// Parameters absent from the analytic gradients are treated as having zero
/// gradient, so a loss that ignores some parameters is checked too. The
/// relative error's denominator is floored at [`round_off_floor`].
pub fn finite_diff_check<F>(mut f: F, params: &ParamSet, h: f64) -> Result<FdReport>
where
    F: FnMut(&ParamSet) -> Result<(f64, Gradients)>,
{
    let (base, analytic) = f(params)?;
    let floor = round_off_floor(base, h);
    let mut probe = params.clone();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.get(&name).map(|t| t.len()).unwrap_or(0);
        for i in 0..n {
            let orig = params.get(&name).unwrap().data()[i];
            probe.get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let (plus, _) = f(&probe)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let (minus, _) = f(&probe)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(&name).map(|t| t.data()[i]).unwrap_or(0.0);
            let err = relative_error_floored(a, numeric, floor);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{Graph, Tensor};

    #[test]
    fn quadratic_is_exact() {
        let mut params = ParamSet::new();
        params.insert("p", Tensor::vector(&[0.3, -1.7, 2.2, 0.01]));
        let coeffs = [1.0, 3.0, -0.5, 10.0];
        let f = |p: &ParamSet| {
            let mut g = Graph::new();
            let x = g.param("p", p.get("p").unwrap().clone());
            let sq = g.square(x);
            let c = g.constant(Tensor::vector(&coeffs));
            let y = g.mul(sq, c)?;
            let loss = g.sum(y);
            let v = g.value(loss).item();
            Ok((v, g.backward(loss)?))
        };
        let report = finite_diff_check(f, &params, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(report.coords_checked, 4);
    }

    #[test]
    fn floor_grows_with_the_loss() {
        assert_eq!(round_off_floor(0.1, 1e-5), RELATIVE_FLOOR);
        assert!((round_off_floor(100.0, 1e-5) - 1e5 * f64::EPSILON * 1e7).abs() < 1e-18);
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut params = ParamSet::new();
        params.insert("p", Tensor::vector(&[1.0, 2.0]));
        let f = |p: &ParamSet| {
            let v: f64 = p.get("p").unwrap().data().iter().map(|x| x * x).sum();
            let mut grads = Gradients::default();
            // missing factor 2
            grads.insert("p".into(), p.get("p").unwrap().clone());
            Ok((v, grads))
        };
        let report = finite_diff_check(f, &params, 1e-5).unwrap();
        assert!(report.max_rel_error > 0.4);
    }
}
