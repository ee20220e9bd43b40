//! Fitting a random target matrix with a structured projection.
//!
//! Measures how much of an arbitrary `width × width` linear map each
//! projection family can represent for its FLOP and parameter budget.

use super::{ProjKind, Projection, ProjectionSpec};
use crate::error::{size_err, Error, Result};
use crate::flops::{projection_flops, projection_params};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxHyper {
    /// Fixed gradient-descent step on the relative squared error.
    pub lr: f64,
    pub steps: usize,
}

impl ApproxHyper {
    /// Step sizes that are stable for each family at the default init.
    ///
    /// Scaling every stage of an `s`-stage stack by the same factor moves the
    /// output `s` times as fast, so the curvature along that direction grows
    /// like `s²`; the step is divided by it.
    pub fn default_for(kind: ProjKind) -> Self {
        let lr = match kind {
            ProjKind::Dense => 0.25,
            ProjKind::Bh { stages, .. } => 0.5 / (stages * stages) as f64,
            ProjKind::Acdc { depth } => 0.5 / (4 * depth * depth) as f64,
            ProjKind::SignFlip => 0.0,
        };
        Self { lr, steps: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxResult {
    /// Mean squared entry error `‖R − T‖² / width²`.
    pub mse: f64,
    /// `‖R − T‖² / ‖T‖²`.
    pub rel_error: f64,
    pub initial_rel_error: f64,
    pub flops: u64,
    pub params: usize,
}

/// Runs plain gradient descent on `‖R_θ − target‖² / ‖target‖²`, where
/// `R_θ` is materialized by pushing the identity through the projection.
///
/// The dense step is scaled by the width so that `lr` has the same meaning
/// (fraction of the residual removed per step) for every family.
pub fn matrix_approx_experiment(
    target: &Matrix,
    kind: ProjKind,
    hyper: &ApproxHyper,
    seed: u64,
) -> Result<ApproxResult> {
    let (n, m) = target.shape();
    if n != m || n == 0 || !n.is_power_of_two() {
        return Err(size_err!("target must be square with power-of-two side, got {n}x{m}"));
    }
    target.ensure_finite("approximation target")?;
    let spec = ProjectionSpec::new(n, n, kind)?;
    let mut proj = Projection::init(spec, seed);
    let eye = Matrix::identity(n);
    let target_sq = target.frobenius_sq().max(f64::MIN_POSITIVE);
    let lr = match kind {
        ProjKind::Dense => hyper.lr * n as f64,
        _ => hyper.lr,
    };

    let rel_of = |r: &Matrix| residual(r, target).frobenius_sq() / target_sq;
    let initial = rel_of(&proj.apply(&eye)?);
    let mut last = initial;
    if proj.is_trainable() {
        for step in 0..hyper.steps {
            let (r, cache) = proj.forward(&eye).map_err(|e| diverged_or(e, step, lr))?;
            let mut grad = residual(&r, target);
            last = grad.frobenius_sq() / target_sq;
            if !last.is_finite() || last > 1e6 * initial.max(1.0) {
                return Err(Error::Diverged { step, loss: last, lr });
            }
            let scale = 2.0 / target_sq;
            grad.data_mut().iter_mut().for_each(|g| *g *= scale);
            let (_, gp) = proj.backward(&grad, &cache)?;
            for (p, g) in proj.params_mut().iter_mut().zip(&gp) {
                *p -= lr * g;
            }
        }
        last = rel_of(&proj.apply(&eye).map_err(|e| diverged_or(e, hyper.steps, lr))?);
    }
    Ok(ApproxResult {
        mse: last * target_sq / (n * n) as f64,
        rel_error: last,
        initial_rel_error: initial,
        flops: projection_flops(&spec),
        params: projection_params(&spec),
    })
}

fn residual(r: &Matrix, target: &Matrix) -> Matrix {
    let mut d = r.clone();
    for (a, b) in d.data_mut().iter_mut().zip(target.data()) {
        *a -= b;
    }
    d
}

fn diverged_or(e: Error, step: usize, lr: f64) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Diverged {
            step,
            loss: f64::NAN,
            lr,
        },
        other => other,
    }
}
