//! Linear mean-square stability analysis and the nonlinear Lyapunov harness.
//!
//! On the linear test equation `dx = alpha x dt + mu x dw`, the SDE is
//! mean-square stable iff `2 alpha + mu^2 < 0`, and the scheme iff
//!
//! ```text
//! (2 alpha + mu^2) + dt alpha^2 (1 - 2 theta) + dt mu^2 / 2 (2 sigma alpha + mu^2) < 0.
//! ```
//!
//! The scheme step on the linear equation is the exact one-dimensional
//! recurrence `X_{k+1} = X_k (p + q xi + r xi^2)` with standard normal `xi`,
//! whose second moment multiplies by `p^2 + q^2 + 3 r^2 + 2 p r` each step; the
//! stability predicate, the growth factor and the recurrence therefore give
//! three independent routes to the same classification, and the tests hold
//! them to agreement.
//!
//! Conventions: stability is the strict inequality, boundary points classify
//! unstable, and `q` is stored non-negative (only `q^2` enters second-moment
//! analysis).

use thiserror::Error;

use crate::exec;
use crate::fmap::SolverOptions;
use crate::increments::IncrementStream;
use crate::model::{ModelError, SdeModel};
use crate::scheme::{SchemeError, SchemeParams};
use crate::stepper::{PathError, Scheme, Stepper};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("singular parameterization: 1 - theta x + sigma y / 2 = 0 at (x, y) = ({x}, {y})")]
    SingularParameterization { x: f64, y: f64 },
    #[error("raster y-range [{lo}, {hi}] must lie in [0, inf) with lo < hi")]
    BadYRange { lo: f64, hi: f64 },
    #[error("raster x-range [{lo}, {hi}] must satisfy lo < hi")]
    BadXRange { lo: f64, hi: f64 },
    #[error("raster resolution {0}x{1} must be at least 2 per axis")]
    BadResolution(usize, usize),
    #[error("Lyapunov condition fails at probe x = {x}: lhs = {lhs} > -z = {neg_z}")]
    LyapunovViolated { x: f64, lhs: f64, neg_z: f64 },
    #[error("z must be positive away from the origin: z({x}) = {z}")]
    BadZ { x: f64, z: f64 },
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Path(#[from] PathError),
}

/// Coefficients of the one-step recurrence on the linear test equation, in
/// the scaled coordinates `x = alpha dt`, `y = mu^2 dt`:
///
/// ```text
/// p = (1 + (1-theta) x - (1-sigma)/2 y) / d,   q = sqrt(y) / d,
/// r = (y/2) / d,                               d = 1 - theta x + sigma/2 y.
/// ```
pub fn pqr(theta: f64, sigma: f64, x: f64, y: f64) -> Result<(f64, f64, f64), StabilityError> {
    let d = 1.0 - theta * x + 0.5 * sigma * y;
    if d == 0.0 {
        return Err(StabilityError::SingularParameterization { x, y });
    }
    let p = (1.0 + (1.0 - theta) * x - 0.5 * (1.0 - sigma) * y) / d;
    let q = (y.sqrt() / d).abs();
    let r = 0.5 * y / d;
    Ok((p, q, r))
}

/// Exact per-step multiplier of `E|X_k|^2`: `(p+r)^2 + q^2 + 2 r^2`.
pub fn growth_factor(theta: f64, sigma: f64, x: f64, y: f64) -> Result<f64, StabilityError> {
    let (p, q, r) = pqr(theta, sigma, x, y)?;
    Ok((p + r) * (p + r) + q * q + 2.0 * r * r)
}

/// Exact per-step multiplier of `E|X_k|^4`, from the Gaussian moments of
/// `(p + q xi + r xi^2)^4`. Together with [`growth_factor`] this gives the
/// exact relative variance of a Monte Carlo second-moment estimate, which the
/// validation harness uses to confirm its own standard errors are meaningful.
pub fn fourth_moment_growth_factor(
    theta: f64,
    sigma: f64,
    x: f64,
    y: f64,
) -> Result<f64, StabilityError> {
    let (p, q, r) = pqr(theta, sigma, x, y)?;
    let (p2, q2, r2) = (p * p, q * q, r * r);
    Ok(p2 * p2
        + 4.0 * p2 * p * r
        + 6.0 * p2 * q2
        + 18.0 * p2 * r2
        + 36.0 * p * q2 * r
        + 60.0 * p * r2 * r
        + 3.0 * q2 * q2
        + 90.0 * q2 * r2
        + 105.0 * r2 * r2)
}

/// Left-hand side of the scheme stability condition.
pub fn ms_lhs(theta: f64, sigma: f64, alpha: f64, mu2: f64, dt: f64) -> f64 {
    (2.0 * alpha + mu2)
        + dt * alpha * alpha * (1.0 - 2.0 * theta)
        + 0.5 * dt * mu2 * (2.0 * sigma * alpha + mu2)
}

/// Scheme mean-square stability on the linear test equation (strict).
pub fn scheme_ms_stable(theta: f64, sigma: f64, alpha: f64, mu2: f64, dt: f64) -> bool {
    ms_lhs(theta, sigma, alpha, mu2, dt) < 0.0
}

/// SDE mean-square stability `2 alpha + mu^2 < 0` (strict).
pub fn sde_ms_stable(alpha: f64, mu2: f64) -> bool {
    2.0 * alpha + mu2 < 0.0
}

/// Stability condition in the scaled raster coordinates `x = alpha dt`,
/// `y = mu^2 dt` (the condition times `dt`).
pub fn scaled_ms_lhs(theta: f64, sigma: f64, x: f64, y: f64) -> f64 {
    (2.0 * x + y) + x * x * (1.0 - 2.0 * theta) + 0.5 * y * (2.0 * sigma * x + y)
}

/// One classified cell of the stability raster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityPoint {
    pub x: f64,
    pub y: f64,
    pub sde_stable: bool,
    pub scheme_stable: bool,
    pub growth_factor: f64,
}

/// Rasterized classification of the `(alpha dt, mu^2 dt)` plane.
#[derive(Debug, Clone)]
pub struct StabilityGrid {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    points: Vec<StabilityPoint>,
}

impl StabilityGrid {
    /// Cells in row-major order (y varies slowest).
    pub fn points(&self) -> &[StabilityPoint] {
        &self.points
    }

    pub fn at(&self, ix: usize, iy: usize) -> &StabilityPoint {
        &self.points[iy * self.nx + ix]
    }

    /// The cell whose center is nearest to `(x, y)`.
    pub fn cell_near(&self, x: f64, y: f64) -> &StabilityPoint {
        let dx = (self.x_range.1 - self.x_range.0) / self.nx as f64;
        let dy = (self.y_range.1 - self.y_range.0) / self.ny as f64;
        let ix = (((x - self.x_range.0) / dx - 0.5).round().max(0.0) as usize).min(self.nx - 1);
        let iy = (((y - self.y_range.0) / dy - 0.5).round().max(0.0) as usize).min(self.ny - 1);
        self.at(ix, iy)
    }
}

/// Classifies every cell center of the requested raster. Rows are computed
/// in parallel; boundary cells (condition exactly zero) classify unstable.
pub fn raster_region(
    theta: f64,
    sigma: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
    resolution: (usize, usize),
) -> Result<StabilityGrid, StabilityError> {
    let (nx, ny) = resolution;
    if nx < 2 || ny < 2 {
        return Err(StabilityError::BadResolution(nx, ny));
    }
    if !(x_range.0 < x_range.1) {
        return Err(StabilityError::BadXRange {
            lo: x_range.0,
            hi: x_range.1,
        });
    }
    if !(y_range.0 < y_range.1) || y_range.0 < 0.0 {
        return Err(StabilityError::BadYRange {
            lo: y_range.0,
            hi: y_range.1,
        });
    }
    let dx = (x_range.1 - x_range.0) / nx as f64;
    let dy = (y_range.1 - y_range.0) / ny as f64;
    let rows = exec::map_collect(ny, |iy| {
        let y = y_range.0 + (iy as f64 + 0.5) * dy;
        let mut row = Vec::with_capacity(nx);
        for ix in 0..nx {
            let x = x_range.0 + (ix as f64 + 0.5) * dx;
            let scheme_stable = scaled_ms_lhs(theta, sigma, x, y) < 0.0;
            let growth = growth_factor(theta, sigma, x, y).unwrap_or(f64::NAN);
            row.push(StabilityPoint {
                x,
                y,
                sde_stable: 2.0 * x + y < 0.0,
                scheme_stable,
                growth_factor: growth,
            });
        }
        row
    });
    Ok(StabilityGrid {
        x_range,
        y_range,
        nx,
        ny,
        points: rows.into_iter().flatten().collect(),
    })
}

/// Left-hand side of the nonlinear Lyapunov condition for the scheme:
///
/// ```text
/// 2 x f(x) + g(x)^2 + (1 - 2 theta) f(x)^2 dt + dt/2 L1g(x) (2 sigma f(x) + L1g(x)).
/// ```
///
/// The caller compares against a supplied `-z(x)`.
pub fn lyapunov_lhs(
    model: &SdeModel,
    theta: f64,
    sigma: f64,
    dt: f64,
    x: f64,
) -> Result<f64, ModelError> {
    let f = model.drift(x)?;
    let g = model.diffusion(x)?;
    let l1g = model.l1g(x)?;
    Ok(2.0 * x * f
        + g * g
        + (1.0 - 2.0 * theta) * f * f * dt
        + 0.5 * dt * l1g * (2.0 * sigma * f + l1g))
}

/// Evidence from an empirical almost-sure decay run.
///
/// Finite samples cannot certify `limsup |X|^2 < inf`; the report carries the
/// observed supremum and the fraction of paths below each terminal threshold
/// as evidence, not proof.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub thresholds: Vec<f64>,
    /// Fraction of (non-failed) paths whose terminal `|X|` is below the
    /// corresponding threshold.
    pub fractions: Vec<f64>,
    /// Supremum of `|X_k|^2` over all paths and steps.
    pub sup_square: f64,
    pub paths: u64,
    pub failed_paths: u64,
}

/// Simulates the implicit family and reports terminal decay statistics.
///
/// When `z` is supplied, the Lyapunov condition `lhs(x) <= -z(x)` is verified
/// on `z_probe_grid` first and the run refuses to start on a violation.
#[allow(clippy::too_many_arguments)]
pub fn empirical_decay(
    model: &SdeModel,
    params: &SchemeParams,
    x0: f64,
    t_end: f64,
    paths: u64,
    seed: u64,
    z: Option<&(dyn Fn(f64) -> f64 + Sync)>,
    z_probe_grid: &[f64],
    opts: &SolverOptions,
) -> Result<DecayReport, StabilityError> {
    if let Some(z_fn) = z {
        for &x in z_probe_grid {
            let zx = z_fn(x);
            if x != 0.0 && !(zx > 0.0) {
                return Err(StabilityError::BadZ { x, z: zx });
            }
            let lhs = lyapunov_lhs(model, params.theta(), params.sigma(), params.dt(), x)?;
            let neg_z = -zx;
            if lhs > neg_z + 1e-12 * (1.0 + lhs.abs() + zx.abs()) {
                return Err(StabilityError::LyapunovViolated { x, lhs, neg_z });
            }
        }
    }

    let thresholds: Vec<f64> = (1..=6).map(|k| 10f64.powi(-k)).collect();
    let stepper = Stepper::new(model, *params, Scheme::ThetaSigma, *opts)
        .map_err(PathError::from)?;

    struct Acc {
        below: Vec<u64>,
        sup_square: f64,
        failed: u64,
        done: u64,
    }
    let n_thresholds = thresholds.len();
    let chunks = exec::chunk_collect(paths as usize, 64, |range| {
        let mut acc = Acc {
            below: vec![0; n_thresholds],
            sup_square: 0.0,
            failed: 0,
            done: 0,
        };
        for i in range {
            let mut stream = IncrementStream::new(seed, i as u64, params.dt());
            let result = stepper
                .simulate(x0, t_end, &mut stream, true)
                .expect("validated preconditions");
            for &s in result.states.as_deref().unwrap_or(&[]) {
                acc.sup_square = acc.sup_square.max(s * s);
            }
            if result.failed {
                acc.failed += 1;
                continue;
            }
            acc.done += 1;
            for (j, &t) in thresholds.iter().enumerate() {
                if result.terminal_state.abs() < t {
                    acc.below[j] += 1;
                }
            }
        }
        acc
    });

    let mut below = vec![0u64; n_thresholds];
    let mut sup_square = 0.0f64;
    let mut failed = 0u64;
    let mut done = 0u64;
    for acc in chunks {
        for (b, a) in below.iter_mut().zip(&acc.below) {
            *b += a;
        }
        sup_square = sup_square.max(acc.sup_square);
        failed += acc.failed;
        done += acc.done;
    }
    let denom = done.max(1) as f64;
    Ok(DecayReport {
        fractions: below.iter().map(|&b| b as f64 / denom).collect(),
        thresholds,
        sup_square,
        paths,
        failed_paths: failed,
    })
}
