use alloc::vec::Vec;

use super::graph::{Graph, Var};
use super::params::{Gradients, ParamId, ParamStore};
use super::AutodiffError;

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a - n| / max(1e-8, |a| + |n|)` over checked entries.
    pub max_rel_error: f64,
    pub worst_param: Option<ParamId>,
    pub worst_index: usize,
    pub checked: usize,
}

/// Pins the higher-ranked signature expected by the checks onto a closure.
pub fn loss_fn<L>(f: L) -> L
where
    L: for<'a> Fn(&mut Graph<'a, f64>, &'a ParamStore<f64>) -> Result<Var, AutodiffError>,
{
    f
}

/// Gradients of the scalar built by `f` with respect to every parameter.
pub fn analytic_gradients<L>(f: &L, store: &ParamStore<f64>) -> Result<Gradients<f64>, AutodiffError>
where
    L: for<'a> Fn(&mut Graph<'a, f64>, &'a ParamStore<f64>) -> Result<Var, AutodiffError>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    g.backward(loss)?;
    Ok(g.param_gradients(store))
}

fn eval<L>(f: &L, store: &ParamStore<f64>) -> Result<f64, AutodiffError>
where
    L: for<'a> Fn(&mut Graph<'a, f64>, &'a ParamStore<f64>) -> Result<Var, AutodiffError>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let v = g.value(loss);
    if v.len() != 1 {
        return Err(AutodiffError::NonScalarOutput(v.len()));
    }
    Ok(v[0])
}

/// Compares `grads` against central differences `(f(x+e) - f(x-e)) / 2e`
/// for every element of the parameters in `params` (all when empty).
/// Parameters absent from `grads` are treated as zero gradient.
pub fn compare_with_finite_differences<L>(
    f: &L,
    store: &ParamStore<f64>,
    grads: &Gradients<f64>,
    params: &[ParamId],
    eps: f64,
) -> Result<GradCheckReport, AutodiffError>
where
    L: for<'a> Fn(&mut Graph<'a, f64>, &'a ParamStore<f64>) -> Result<Var, AutodiffError>,
{
    let ids: Vec<ParamId> = if params.is_empty() { store.ids().collect() } else { params.to_vec() };
    let mut work = store.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_param: None, worst_index: 0, checked: 0 };
    for id in ids {
        for i in 0..store.get(id).numel() {
            let x = store.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = x + eps;
            let up = eval(f, &work)?;
            work.get_mut(id).data_mut()[i] = x - eps;
            let down = eval(f, &work)?;
            work.get_mut(id).data_mut()[i] = x;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.get(id).map_or(0.0, |g| g[i]);
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst_param.is_none() {
                report.max_rel_error = rel;
                report.worst_param = Some(id);
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

/// [`analytic_gradients`] followed by [`compare_with_finite_differences`]
/// over all parameters.
pub fn grad_check<L>(f: &L, store: &ParamStore<f64>, eps: f64) -> Result<GradCheckReport, AutodiffError>
where
    L: for<'a> Fn(&mut Graph<'a, f64>, &'a ParamStore<f64>) -> Result<Var, AutodiffError>,
{
    let grads = analytic_gradients(f, store)?;
    compare_with_finite_differences(f, store, &grads, &[], eps)
}
