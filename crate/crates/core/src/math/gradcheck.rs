//! Central-difference gradient verification.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    scaled_error(analytic, numeric, 0.0)
}

/// `|a − n| / max(|a|, |n|, floor, 1e-8)`.
pub fn scaled_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor).max(1e-8)
}

/// Share of a tensor's largest analytic gradient below which entries are
/// compared on the tensor's scale.
pub const SCALE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor, in input order.
    pub per_param: Vec<f64>,
    pub max_rel_error: f64,
    /// `(param index, flat element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares reverse-mode gradients of the scalar `f` against
/// `(f(x+h) − f(x−h)) / 2h` for every element of every parameter.
///
/// Each element's error is taken relative to
/// `max(|a|, |n|, 1e-3 · max|a| over its tensor, 1e-8)`. Entries far below
/// the tensor's gradient scale sit under the rounding noise of the
/// difference quotient, so they are judged on that scale instead.
///
/// `f` receives a graph and one leaf per parameter and must return a
/// one-element node. It must be deterministic.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| graph.leaf(p.clone())).collect();
    let out = f(&mut graph, &vars)?;
    let base = graph.value(out).item();
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("f(x) = {base}")));
    }
    let grads = graph.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p))
        .collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::inference();
        let vs: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let o = f(&mut g, &vs)?;
        let y = g.value(o).item();
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::NonFinite(format!("f(x ± h) = {y}")))
        }
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut per_param = Vec::with_capacity(params.len());
    let mut max_rel_error = 0.0;
    let mut worst = None;
    for p in 0..params.len() {
        let mut num = Tensor::zeros(params[p].dims());
        let mut param_max: f64 = 0.0;
        let floor = SCALE_FLOOR * analytic[p].data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..params[p].len() {
            let x0 = params[p].data()[i];
            work[p].data_mut()[i] = x0 + h;
            let plus = eval(&work)?;
            work[p].data_mut()[i] = x0 - h;
            let minus = eval(&work)?;
            work[p].data_mut()[i] = x0;
            let n = (plus - minus) / (2.0 * h);
            num.data_mut()[i] = n;
            let err = scaled_error(analytic[p].data()[i], n, floor);
            param_max = param_max.max(err);
            if err > max_rel_error {
                max_rel_error = err;
                worst = Some((p, i));
            }
        }
        per_param.push(param_max);
        numeric.push(num);
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
        worst,
        analytic,
        numeric,
    })
}
