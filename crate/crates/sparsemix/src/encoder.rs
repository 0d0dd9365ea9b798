//! Unrolled sparse encoders. Each cluster encodes a sample by running a
//! fixed number of ISTA or FISTA iterations on
//!
//!   min_x ||y - A x||^2 + sparsity * ||x||_1
//!
//! from x = 0. The proximal step applies the exact gradient of the unhalved
//! quadratic, x <- f_{eta*sparsity}(x + 2 eta A^T (y - A x)), so the fixed
//! points are minimizers of the objective above and descent is guaranteed
//! for eta <= 1/(2 sigma_max(A)^2). Each iteration's pre-threshold argument
//! is recorded so the backward pass can rebuild the computation exactly.

use crate::model::{HyperParams, Solver, StepMode};
use crate::numkernel::{
    l1_norm, soft_threshold_scalar, spectral_norm_sq, Matrix,
};
use crate::{Error, Result};

/// One recorded iteration: the argument handed to the soft threshold and the
/// momentum coefficient used to build the extrapolation point.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub pre_threshold: Vec<f64>,
    pub momentum: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodeResult {
    pub code: Vec<f64>,
    pub trace: Vec<TraceStep>,
    /// Sparse-coding objective of `code`, restricted to observed coordinates
    /// when a mask was in play.
    pub objective: f64,
}

/// Solver constants with the step size already resolved to a number.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveParams {
    pub sparsity: f64,
    pub step: f64,
    pub iters: usize,
    pub solver: Solver,
}

impl SolveParams {
    pub fn resolve(a: &Matrix, hyper: &HyperParams) -> SolveParams {
        SolveParams {
            sparsity: hyper.sparsity,
            step: resolve_step(a, hyper),
            iters: hyper.iters,
            solver: hyper.solver,
        }
    }
}

/// Step size for one dictionary: the configured constant, or 1/(2 sigma^2)
/// from power iteration in auto mode.
pub fn resolve_step(a: &Matrix, hyper: &HyperParams) -> f64 {
    match hyper.step_mode {
        StepMode::Fixed => hyper.step_size,
        StepMode::Auto => {
            let s = spectral_norm_sq(a);
            if s > 0.0 {
                1.0 / (2.0 * s)
            } else {
                1.0
            }
        }
    }
}

/// ||y - A x||^2 + lambda ||x||_1, with no 1/2 factors anywhere.
pub fn sparse_objective(y: &[f64], a: &Matrix, x: &[f64], lambda: f64) -> Result<f64> {
    check_shapes(y, None, a, Some(x))?;
    Ok(objective_with_mask(y, None, a, x, lambda))
}

fn objective_with_mask(y: &[f64], mask: Option<&[bool]>, a: &Matrix, x: &[f64], lambda: f64) -> f64 {
    let mut ax = vec![0.0; a.rows()];
    a.matvec_into(x, &mut ax);
    let mut quad = 0.0;
    for i in 0..y.len() {
        if mask.is_none_or(|m| m[i]) {
            let r = y[i] - ax[i];
            quad += r * r;
        }
    }
    quad + lambda * l1_norm(x)
}

/// One proximal-gradient step at `x_prev` with threshold eta*lambda.
pub fn ista_step(x_prev: &[f64], y: &[f64], a: &Matrix, eta: f64, lambda: f64) -> Result<Vec<f64>> {
    check_shapes(y, None, a, Some(x_prev))?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size must be > 0, got {eta}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("sparsity must be >= 0, got {lambda}")));
    }
    let mut resid = vec![0.0; a.rows()];
    a.matvec_into(x_prev, &mut resid);
    for i in 0..resid.len() {
        resid[i] = y[i] - resid[i];
    }
    let mut u = vec![0.0; a.cols()];
    a.matvec_t_into(&resid, &mut u);
    let alpha = eta * lambda;
    let two_eta = 2.0 * eta;
    for j in 0..u.len() {
        u[j] = soft_threshold_scalar(x_prev[j] + two_eta * u[j], alpha);
    }
    Ok(u)
}

/// Runs the configured solver for `hyper.iters` iterations from zero.
pub fn encode(y: &[f64], a: &Matrix, hyper: &HyperParams) -> Result<EncodeResult> {
    let params = SolveParams::resolve(a, hyper);
    encode_with(y, None, a, &params)
}

/// Like [`encode`] but for a partially observed sample: `y_obs` holds only
/// the observed values, in coordinate order. Equivalent to encoding against
/// the row subset of A selected by the mask; implemented by zeroing the
/// residual at unobserved coordinates instead of materializing the subset.
pub fn encode_masked(
    y_obs: &[f64],
    mask: &[bool],
    a: &Matrix,
    hyper: &HyperParams,
) -> Result<EncodeResult> {
    let observed = mask.iter().filter(|&&b| b).count();
    if observed == 0 {
        return Err(Error::InvalidArgument("mask observes no coordinates".into()));
    }
    if y_obs.len() != observed {
        return Err(Error::ShapeMismatch(format!(
            "{} observed values for a mask with {} true entries",
            y_obs.len(),
            observed
        )));
    }
    let mut y_full = vec![0.0; mask.len()];
    let mut next = 0;
    for (i, &keep) in mask.iter().enumerate() {
        if keep {
            y_full[i] = y_obs[next];
            next += 1;
        }
    }
    let params = SolveParams::resolve(a, hyper);
    encode_with(&y_full, Some(mask), a, &params)
}

/// Shared solver kernel. With `mask == None` and an all-true mask the
/// arithmetic is identical bit for bit.
pub fn encode_with(
    y: &[f64],
    mask: Option<&[bool]>,
    a: &Matrix,
    params: &SolveParams,
) -> Result<EncodeResult> {
    check_shapes(y, mask, a, None)?;
    if !(params.step > 0.0 && params.step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step size must be > 0, got {}",
            params.step
        )));
    }
    if !(params.sparsity >= 0.0 && params.sparsity.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sparsity must be >= 0, got {}",
            params.sparsity
        )));
    }
    if params.iters == 0 {
        return Err(Error::InvalidArgument("iteration count must be >= 1".into()));
    }
    if let Some(m) = mask {
        if !m.iter().any(|&b| b) {
            return Err(Error::InvalidArgument("mask observes no coordinates".into()));
        }
    }
    let d = a.cols();
    let alpha = params.step * params.sparsity;
    let two_eta = 2.0 * params.step;
    let mut x = vec![0.0; d];
    let mut x_prev = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut u = vec![0.0; d];
    let mut resid = vec![0.0; a.rows()];
    let mut t_prev = 1.0f64;
    let mut t = 1.0f64;
    let mut trace = Vec::with_capacity(params.iters);
    for iter in 1..=params.iters {
        let beta = match params.solver {
            Solver::Ista => 0.0,
            // t_1 = 1 makes the coefficient 0 at iteration 2 as well; real
            // momentum starts at iteration 3.
            Solver::Fista => {
                if iter == 1 {
                    0.0
                } else {
                    (t_prev - 1.0) / t
                }
            }
        };
        for j in 0..d {
            z[j] = x[j] + beta * (x[j] - x_prev[j]);
        }
        a.matvec_into(&z, &mut resid);
        match mask {
            None => {
                for i in 0..resid.len() {
                    resid[i] = y[i] - resid[i];
                }
            }
            Some(m) => {
                for i in 0..resid.len() {
                    resid[i] = if m[i] { y[i] - resid[i] } else { 0.0 };
                }
            }
        }
        a.matvec_t_into(&resid, &mut u);
        for j in 0..d {
            u[j] = z[j] + two_eta * u[j];
        }
        if let Some(pos) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericDivergence {
                iteration: iter,
                detail: format!(
                    "pre-threshold coordinate {pos} is not finite; the step size is too large"
                ),
            });
        }
        std::mem::swap(&mut x_prev, &mut x);
        for j in 0..d {
            x[j] = soft_threshold_scalar(u[j], alpha);
        }
        trace.push(TraceStep { pre_threshold: u.clone(), momentum: beta });
        if params.solver == Solver::Fista {
            t_prev = t;
            t = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        }
    }
    let objective = objective_with_mask(y, mask, a, &x, params.sparsity);
    Ok(EncodeResult { code: x, trace, objective })
}

fn check_shapes(y: &[f64], mask: Option<&[bool]>, a: &Matrix, x: Option<&[f64]>) -> Result<()> {
    if y.len() != a.rows() {
        return Err(Error::ShapeMismatch(format!(
            "sample length {} vs dictionary with {} rows",
            y.len(),
            a.rows()
        )));
    }
    if let Some(m) = mask {
        if m.len() != a.rows() {
            return Err(Error::ShapeMismatch(format!(
                "mask length {} vs dictionary with {} rows",
                m.len(),
                a.rows()
            )));
        }
    }
    if let Some(x) = x {
        if x.len() != a.cols() {
            return Err(Error::ShapeMismatch(format!(
                "code length {} vs dictionary with {} columns",
                x.len(),
                a.cols()
            )));
        }
    }
    Ok(())
}
