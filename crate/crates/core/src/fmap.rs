//! The implicit per-step map and its solvers.
//!
//! Each implicit step of the scheme solves `F(x) = b` where
//!
//! ```text
//! F(x) = x - theta f(x) dt + sigma/2 L1g(x) dt.
//! ```
//!
//! Under the one-sided Lipschitz and monotone conditions, `F` is strictly
//! increasing and coercive whenever `dt < (theta (K+1))^-1`, so the root is
//! unique. Models whose `f` and `L1g` are polynomials of degree <= 2 get a
//! closed-form quadratic solve (stable positive branch); everything else goes
//! through a safeguarded Newton iteration with a bisection fallback inside a
//! verified bracket, the bracket being expanded geometrically using the
//! coercivity of `F`.

use thiserror::Error;

use crate::model::{Domain, ModelError, SdeModel};
use crate::scheme::SchemeParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("step restriction violated: dt = {dt} not below (theta (K+1))^-1 = {limit}")]
    StepRestriction { dt: f64, limit: f64 },
    #[error("no non-negative root: rhs {b} lies below F(0) = {f_at_zero}")]
    NoNonNegativeRoot { b: f64, f_at_zero: f64 },
    #[error("bracket expansion failed after {doublings} doublings for rhs {b}")]
    BracketFailure { b: f64, doublings: u32 },
    #[error("no convergence within {max_iter} iterations for rhs {b} (residual {residual})")]
    NoConvergence { b: f64, max_iter: u32, residual: f64 },
    #[error("negative discriminant {discriminant} for rhs {b}")]
    NegativeDiscriminant { b: f64, discriminant: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Solver tolerances and caps. Failures are loud because `F` is strictly
/// monotone: a non-converging solve signals broken assumptions, not an
/// unlucky starting point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative residual tolerance: accept `|F(x) - b| <= rel_tol * max(1, |b|)`.
    pub rel_tol: f64,
    pub max_iter: u32,
    pub max_bracket_doublings: u32,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            max_iter: 100,
            max_bracket_doublings: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    ClosedForm,
    NewtonBisection,
    /// `theta = sigma = 0`: `F` is the identity, nothing to solve.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOutcome {
    pub root: f64,
    pub residual: f64,
    pub iterations: u32,
    pub method: SolveMethod,
}

/// Largest step size for which the monotonicity argument certifies a unique
/// solvable step: `(theta (K+1))^-1`.
///
/// Returns infinity for `theta = 0` (explicit in the drift, no restriction)
/// and for `K <= -1` (the restriction is vacuous).
pub fn max_stable_dt(model: &SdeModel, theta: f64) -> f64 {
    let k = model.constants().one_sided_lipschitz_k;
    if theta <= 0.0 || k <= -1.0 {
        f64::INFINITY
    } else {
        1.0 / (theta * (k + 1.0))
    }
}

fn check_step_restriction(model: &SdeModel, params: &SchemeParams) -> Result<(), SolveError> {
    let limit = max_stable_dt(model, params.theta());
    if params.dt() < limit {
        Ok(())
    } else {
        Err(SolveError::StepRestriction {
            dt: params.dt(),
            limit,
        })
    }
}

/// Evaluates `F(x) = x - theta f(x) dt + sigma/2 L1g(x) dt`.
pub fn eval_f_map(model: &SdeModel, params: &SchemeParams, x: f64) -> Result<f64, ModelError> {
    let dt = params.dt();
    Ok(x - params.theta() * model.drift(x)? * dt + 0.5 * params.sigma() * model.l1g(x)? * dt)
}

/// `F(0)`, the infimum of `F` on the half line for half-line models.
fn f_at_zero(model: &SdeModel, params: &SchemeParams) -> f64 {
    let dt = params.dt();
    -params.theta() * model.drift_at_zero() * dt
        + 0.5 * params.sigma() * model.l1g_at_zero() * dt
}

/// Quadratic representation `F(x) = A x^2 + B x + C` when both `f` and `L1g`
/// are polynomials of degree <= 2.
fn quadratic_coeffs(model: &SdeModel, params: &SchemeParams) -> Option<(f64, f64, f64)> {
    let fp = model.drift_poly()?;
    let lp = model.l1g_poly()?;
    let dt = params.dt();
    let th = params.theta();
    let sg = 0.5 * params.sigma();
    let a = -th * fp[2] * dt + sg * lp[2] * dt;
    let b = 1.0 - th * fp[1] * dt + sg * lp[1] * dt;
    let c = -th * fp[0] * dt + sg * lp[0] * dt;
    Some((a, b, c))
}

/// Solves `F(x) = b` for the unique root, using the closed form when the
/// model declares quadratic structure and the safeguarded iteration otherwise.
///
/// For half-line models the search is confined to `[0, inf)`; an rhs below
/// `F(0)` has no admissible root and fails loudly rather than evaluating the
/// coefficients outside their domain.
pub fn solve_f_map(
    model: &SdeModel,
    params: &SchemeParams,
    b: f64,
    opts: &SolverOptions,
) -> Result<SolveOutcome, SolveError> {
    check_step_restriction(model, params)?;

    if params.theta() == 0.0 && params.sigma() == 0.0 {
        if model.domain() == Domain::NonNegativeHalfLine && b < 0.0 {
            return Err(SolveError::NoNonNegativeRoot { b, f_at_zero: 0.0 });
        }
        return Ok(SolveOutcome {
            root: b,
            residual: 0.0,
            iterations: 0,
            method: SolveMethod::Explicit,
        });
    }

    if let Some(out) = try_closed_form(model, params, b, opts)? {
        return Ok(out);
    }
    solve_f_map_iterative(model, params, b, opts)
}

fn try_closed_form(
    model: &SdeModel,
    params: &SchemeParams,
    b: f64,
    opts: &SolverOptions,
) -> Result<Option<SolveOutcome>, SolveError> {
    let Some((qa, qb, qc)) = quadratic_coeffs(model, params) else {
        return Ok(None);
    };
    // B > 0 holds under the step restriction for the shipped models; a
    // non-increasing linearization means the quadratic route is unusable.
    if qb <= 0.0 {
        return Ok(None);
    }
    let rhs = b - qc;
    let tol_abs = opts.rel_tol * b.abs().max(1.0);

    let root = if qa == 0.0 {
        rhs / qb
    } else if qa > 0.0 && model.domain() == Domain::NonNegativeHalfLine {
        let disc = qb * qb + 4.0 * qa * rhs;
        if disc < 0.0 {
            return Err(SolveError::NegativeDiscriminant {
                b,
                discriminant: disc,
            });
        }
        // Unique root in [0, inf): the increasing branch, in the
        // cancellation-free form 2 rhs / (B + sqrt(disc)).
        2.0 * rhs / (qb + disc.sqrt())
    } else {
        // A quadratic F is not monotone on the whole line.
        return Ok(None);
    };

    let root = match model.domain() {
        Domain::NonNegativeHalfLine if root < 0.0 => {
            if qc - b <= tol_abs {
                // rhs within tolerance of F(0): boundary state, absorb to 0.
                0.0
            } else {
                return Err(SolveError::NoNonNegativeRoot { b, f_at_zero: qc });
            }
        }
        _ => root,
    };

    let residual = (eval_f_map(model, params, root)? - b).abs();
    if residual <= tol_abs {
        Ok(Some(SolveOutcome {
            root,
            residual,
            iterations: 0,
            method: SolveMethod::ClosedForm,
        }))
    } else {
        // Closed form degraded (extreme parameters); let the bracketed
        // iteration have it.
        Ok(None)
    }
}

/// Safeguarded Newton–bisection solve, bypassing the closed form. This is the
/// reference path used to cross-validate the quadratic solver.
pub fn solve_f_map_iterative(
    model: &SdeModel,
    params: &SchemeParams,
    b: f64,
    opts: &SolverOptions,
) -> Result<SolveOutcome, SolveError> {
    check_step_restriction(model, params)?;
    let tol_abs = opts.rel_tol * b.abs().max(1.0);
    let half_line = model.domain() == Domain::NonNegativeHalfLine;

    if half_line {
        let f0 = f_at_zero(model, params);
        if b < f0 {
            if f0 - b <= tol_abs {
                return Ok(SolveOutcome {
                    root: 0.0,
                    residual: f0 - b,
                    iterations: 0,
                    method: SolveMethod::NewtonBisection,
                });
            }
            return Err(SolveError::NoNonNegativeRoot { b, f_at_zero: f0 });
        }
    }

    // Bracket the root: F is increasing, so walk lo down / hi up geometrically.
    let start = if half_line { b.max(0.0) } else { b };
    let mut delta = start.abs().max(1.0);
    let mut lo = start;
    let mut hi = start;
    let mut doublings = 0u32;
    while eval_f_map(model, params, lo)? > b {
        if half_line && lo == 0.0 {
            break; // F(0) <= b already established
        }
        lo = if half_line {
            (lo - delta).max(0.0)
        } else {
            lo - delta
        };
        delta *= 2.0;
        doublings += 1;
        if doublings > opts.max_bracket_doublings {
            return Err(SolveError::BracketFailure { b, doublings });
        }
    }
    delta = start.abs().max(1.0);
    while eval_f_map(model, params, hi)? < b {
        hi += delta;
        delta *= 2.0;
        doublings += 1;
        if doublings > opts.max_bracket_doublings {
            return Err(SolveError::BracketFailure { b, doublings });
        }
    }

    let mut x = 0.5 * (lo + hi);
    for iteration in 1..=opts.max_iter {
        let fx = eval_f_map(model, params, x)? - b;
        if fx.abs() <= tol_abs {
            return Ok(SolveOutcome {
                root: x,
                residual: fx.abs(),
                iterations: iteration,
                method: SolveMethod::NewtonBisection,
            });
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }

        // Newton step on a finite-difference derivative, clipped to the
        // bracket; bisect whenever the step is unusable.
        let h = x.abs().max(1.0) * 7.5e-6;
        let x_minus = if half_line { (x - h).max(0.0) } else { x - h };
        let df = (eval_f_map(model, params, x + h)? - eval_f_map(model, params, x_minus)?)
            / (x + h - x_minus);
        let newton = x - fx / df;
        x = if df > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };

        if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()).max(1.0) {
            let residual = (eval_f_map(model, params, x)? - b).abs();
            if residual <= tol_abs {
                return Ok(SolveOutcome {
                    root: x,
                    residual,
                    iterations: iteration,
                    method: SolveMethod::NewtonBisection,
                });
            }
            return Err(SolveError::NoConvergence {
                b,
                max_iter: iteration,
                residual,
            });
        }
    }
    let residual = (eval_f_map(model, params, x)? - b).abs();
    Err(SolveError::NoConvergence {
        b,
        max_iter: opts.max_iter,
        residual,
    })
}

/// Explicit solve of the double-implicit step for the Heston 3/2 model:
/// the unique non-negative root of `(alpha + 3/4 beta^2) dt x^2 + (1 - mu dt) x = b`,
///
/// ```text
/// x = [ -(1 - mu dt) + sqrt((1 - mu dt)^2 + 4 (alpha + 3/4 beta^2) dt b) ]
///     / (2 (alpha + 3/4 beta^2) dt).
/// ```
pub fn closed_form_heston_step(
    mu: f64,
    alpha: f64,
    beta: f64,
    dt: f64,
    b: f64,
) -> Result<f64, SolveError> {
    let qa = (alpha + 0.75 * beta * beta) * dt;
    let qb = 1.0 - mu * dt;
    let disc = qb * qb + 4.0 * qa * b;
    if disc < 0.0 {
        return Err(SolveError::NegativeDiscriminant {
            b,
            discriminant: disc,
        });
    }
    if qb >= 0.0 {
        Ok(2.0 * b / (qb + disc.sqrt()))
    } else {
        Ok((-qb + disc.sqrt()) / (2.0 * qa))
    }
}
