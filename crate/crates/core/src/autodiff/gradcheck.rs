//! Central finite-difference verification of tape gradients.

use super::params::ParamStore;
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Perturbation step.
    pub h: f64,
    /// Maximum relative error where `|analytic| > abs_floor`.
    pub rel_tol: f64,
    pub abs_floor: f64,
    /// Below `abs_floor`, the numeric derivative must stay under this.
    pub abs_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-8,
            abs_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Scalars whose ±h perturbation switches a max/rectifier branch.
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub failures: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn total_checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn total_skipped(&self) -> usize {
        self.params.iter().map(|p| p.skipped).sum()
    }
}

/// Gradient of the built scalar with respect to every parameter tensor.
pub fn analytic_gradients<F>(build: &F, store: &ParamStore) -> Result<Vec<Tensor>>
where
    F: Fn(&ParamStore) -> Result<(Tape, NodeId)>,
{
    let mut store = store.clone();
    store.zero_grad();
    let (tape, out) = build(&store)?;
    let grads = tape.backward(out)?;
    tape.accumulate_param_grads(&grads, &mut store, 1.0);
    Ok(store.ids().map(|id| store.grad(id).clone()).collect())
}

/// Compares `analytic` against central differences of `build`.
pub fn compare_gradients<F>(
    build: &F,
    store: &ParamStore,
    analytic: &[Tensor],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(Tape, NodeId)>,
{
    let base_sig = build(store)?.0.kink_signature();
    let mut work = store.clone();
    let mut report = GradCheckReport::default();
    for id in store.ids() {
        let mut check = ParamCheck {
            name: store.name(id).to_string(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
        };
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data[i];
            work.value_mut(id).data[i] = orig + cfg.h;
            let (tp, op) = build(&work)?;
            work.value_mut(id).data[i] = orig - cfg.h;
            let (tm, om) = build(&work)?;
            work.value_mut(id).data[i] = orig;

            if tp.kink_signature() != base_sig || tm.kink_signature() != base_sig {
                check.skipped += 1;
                continue;
            }
            let numeric = (tp.value(op).item() - tm.value(om).item()) / (2.0 * cfg.h);
            let a = analytic[id.index()].data[i];
            check.checked += 1;
            let ok = if a.abs() > cfg.abs_floor {
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
                check.max_rel_error = check.max_rel_error.max(rel);
                rel < cfg.rel_tol
            } else {
                numeric.abs() < cfg.abs_tol
            };
            if !ok {
                report.failures.push(GradMismatch {
                    param: check.name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

pub fn grad_check<F>(build: &F, store: &ParamStore, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(Tape, NodeId)>,
{
    let analytic = analytic_gradients(build, store)?;
    compare_gradients(build, store, &analytic, cfg)
}
