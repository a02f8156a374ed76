//! Central finite-difference checks of tape gradients.
//!
//! The numeric side never touches [`Graph::backward`]: it only re-evaluates
//! the scalar loss with perturbed parameters.

use crate::autodiff::{Graph, ParamStore, Var};

/// Anything that owns a [`ParamStore`].
pub trait HasParams {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
}

impl HasParams for ParamStore {
    fn params(&self) -> &ParamStore {
        self
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        self
    }
}

/// Step that balances truncation and rounding error for losses of order 1-10
/// in f64.
pub const DEFAULT_EPS: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric gradient at the worst coordinate.
    pub worst_values: (f64, f64),
    /// Coordinates with a nonzero analytic gradient.
    pub nonzero: usize,
    /// Largest analytic gradient magnitude seen on a frozen parameter.
    pub frozen_max_abs: f64,
}

/// Relative error with a small absolute floor so coordinates whose true
/// gradient is zero do not divide rounding noise by zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Compares analytic and central-difference gradients of `loss` for every
/// scalar of every trainable parameter. `loss` must be deterministic.
pub fn check_gradients<M: HasParams>(
    model: &mut M,
    eps: f64,
    loss: impl Fn(&M, &mut Graph) -> Var,
) -> GradCheckReport {
    let mut g = Graph::new();
    let out = loss(model, &mut g);
    let grads = g.backward(out);
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        nonzero: 0,
        frozen_max_abs: 0.0,
    };
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        if model.params().is_frozen(id) {
            if let Some(gr) = grads.param(id) {
                let m = gr.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                report.frozen_max_abs = report.frozen_max_abs.max(m);
            }
            continue;
        }
        let analytic = grads.param(id).cloned();
        let n = model.params().get(id).len();
        for flat in 0..n {
            let a = analytic
                .as_ref()
                .map(|gr| *gr.iter().nth(flat).unwrap())
                .unwrap_or(0.0);
            let orig = *model.params().get(id).iter().nth(flat).unwrap();
            let numeric = {
                *model.params_mut().get_mut(id).iter_mut().nth(flat).unwrap() = orig + eps;
                let mut gp = Graph::new();
                let vp = loss(model, &mut gp);
                let fp = gp.scalar(vp);
                *model.params_mut().get_mut(id).iter_mut().nth(flat).unwrap() = orig - eps;
                let mut gm = Graph::new();
                let vm = loss(model, &mut gm);
                let fm = gm.scalar(vm);
                *model.params_mut().get_mut(id).iter_mut().nth(flat).unwrap() = orig;
                (fp - fm) / (2.0 * eps)
            };
            let err = relative_error(a, numeric);
            report.checked += 1;
            if a != 0.0 {
                report.nonzero += 1;
            }
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((model.params().name(id).to_string(), flat));
                report.worst_values = (a, numeric);
            }
        }
    }
    report
}
