//! Finite-difference validation of backpropagated gradients.
//!
//! The checker perturbs every parameter entry by `±step`, recomputes the
//! scalar loss from scratch on a fresh tape, and compares the central
//! difference against the analytic gradient. It is deliberately independent
//! of the backward pass: the only thing shared is the forward computation.

use crate::autograd::{BoundParams, ParamSet, Tape, Var};

/// Outcome of a gradient check over a whole parameter set.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest guarded relative error across all parameter entries.
    pub max_rel_error: f64,
    /// `name[row,col]` of the worst entry, for diagnostics.
    pub worst: String,
    /// Number of scalar entries compared.
    pub entries: usize,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compare analytic gradients of `loss_fn` against central finite
/// differences with the given step size.
///
/// `loss_fn` must build the loss from the bound parameters alone so that
/// re-running it under a perturbed [`ParamSet`] reproduces the same graph.
/// Any data captured by the closure (inputs, labels) is held fixed.
pub fn check_loss_gradients<F>(params: &ParamSet, step: f64, loss_fn: F) -> GradCheckReport
where
    F: Fn(&mut Tape, &BoundParams) -> Var,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = loss_fn(&mut tape, &bound);
    tape.backward(loss);
    let grads = bound.gradients(&tape, params);

    let eval = |p: &ParamSet| -> f64 {
        let mut t = Tape::new();
        let b = p.bind(&mut t);
        let l = loss_fn(&mut t, &b);
        t.scalar(l)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        entries: 0,
    };
    let mut work = params.clone();
    for (name, grad) in &grads {
        let (rows, cols) = grad.dim();
        for i in 0..rows {
            for j in 0..cols {
                let orig = work.get(name)[[i, j]];
                work.get_mut(name)[[i, j]] = orig + step;
                let plus = eval(&work);
                work.get_mut(name)[[i, j]] = orig - step;
                let minus = eval(&work);
                work.get_mut(name)[[i, j]] = orig;
                let numeric = (plus - minus) / (2.0 * step);
                let err = rel_error(grad[[i, j]], numeric);
                report.entries += 1;
                if err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst = format!("{name}[{i},{j}]");
                }
            }
        }
    }
    report
}
