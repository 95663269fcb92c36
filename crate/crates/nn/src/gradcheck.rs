//! Central finite-difference verification of analytic gradients.

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Base step, scaled by `max(1, |θ|)`.
    pub eps: f64,
    /// Per parameter tensor the error is `max|a - n| / max(max|a|, max|n|, floor)`.
    pub floor: f64,
    /// Check at most this many evenly strided elements per parameter.
    pub max_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            floor: 1e-4,
            max_per_param: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

fn eval<F>(store: &ParamStore<f64>, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let out = f(&mut g)?;
    let t = g.value(out);
    if t.len() != 1 {
        return Err(NnError::Argument("grad_check: objective is not a scalar".into()));
    }
    Ok(t.data()[0])
}

pub fn grad_check<F>(store: &ParamStore<f64>, cfg: GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    grad_check_with(store, cfg, f, |_| {})
}

/// Like [`grad_check`], but lets the caller tamper with the analytic gradients
/// first (negative controls for the harness itself).
pub fn grad_check_with<F, C>(
    store: &ParamStore<f64>,
    cfg: GradCheckConfig,
    f: F,
    corrupt: C,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
    C: FnOnce(&mut [Vec<f64>]),
{
    let mut analytic: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.value(id).len()]).collect();
    {
        let mut g = Graph::new(store);
        let out = f(&mut g)?;
        g.backward(out)?;
        for (id, grad) in g.into_param_grads() {
            analytic[id.index()] = grad;
        }
    }
    corrupt(&mut analytic);

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for id in store.ids() {
        let n = store.value(id).len();
        let stride = match cfg.max_per_param {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let (mut diff, mut scale, mut worst) = (0.0f64, 0.0f64, 0usize);
        for e in (0..n).step_by(stride) {
            let orig = store.value(id).data()[e];
            let h = cfg.eps * orig.abs().max(1.0);
            work.value_mut(id).data_mut()[e] = orig + h;
            let fp = eval(&work, &f)?;
            work.value_mut(id).data_mut()[e] = orig - h;
            let fm = eval(&work, &f)?;
            work.value_mut(id).data_mut()[e] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[id.index()][e];
            let d = (a - numeric).abs();
            if d > diff || d.is_nan() {
                diff = if d.is_nan() { f64::INFINITY } else { d };
                worst = e;
            }
            scale = scale.max(a.abs()).max(numeric.abs());
            report.checked += 1;
        }
        let rel = diff / scale.max(cfg.floor);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_param = store.name(id).to_string();
            report.worst_index = worst;
        }
    }
    Ok(report)
}
