//! Strong-error measurement against a fine-step reference on coupled Brownian
//! paths, log-log rate fitting, and second-moment boundedness checks.
//!
//! The strong endpoint error `E|x(T) - X_T|` is estimated by simulating a
//! reference path at a fine `dt` and re-running the scheme at coarser steps on
//! the *same* Brownian motion: coarse increments are exact sums of the fine
//! ones, so the comparison isolates discretization error. The per-path work
//! (one fine path plus all coarse paths) is the parallel unit; accumulation
//! runs in fixed path order so results are independent of the worker count.

use thiserror::Error;

use crate::exec;
use crate::fmap::{eval_f_map, SolveError, SolverOptions};
use crate::increments::IncrementStream;
use crate::model::{audit_assumptions, ModelError, SdeModel};
use crate::scheme::{SchemeError, SchemeParams};
use crate::stepper::{PathError, Scheme, Stepper};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvergenceError {
    #[error("need at least two (dt, error) points for a rate fit, got {0}")]
    TooFewPoints(usize),
    #[error("error value {value} at index {index} must be positive for a log-log fit")]
    NonPositiveError { index: usize, value: f64 },
    #[error("test dt {dt} is not a power-of-two multiple of the reference dt {reference_dt}")]
    BadDtRatio { dt: f64, reference_dt: f64 },
    #[error("{failed} of {paths} paths failed at dt = {dt} (more than 1%)")]
    TooManyFailures { dt: f64, failed: u64, paths: u64 },
    #[error("moment bound needs theta > 0 (Young's inequality splits on theta)")]
    ThetaZeroUnsupported,
    #[error("coercivity lost: c1 = {c1} <= 0 at this step size")]
    CoercivityLost { c1: f64 },
    #[error("monotone-type audit reports {0} violations; the moment bound does not apply")]
    AuditViolations(usize),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Path(#[from] PathError),
}

/// Endpoint error statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMetric {
    /// `E|X_T^ref - X_T|` — the strong endpoint error.
    MeanAbs,
    /// `(E|X_T^ref - X_T|^2)^{1/2}`.
    RootMeanSquare,
}

/// Experiment description for [`strong_error`].
#[derive(Debug, Clone)]
pub struct StrongErrorConfig {
    pub scheme: Scheme,
    pub theta: f64,
    pub sigma: f64,
    pub reference_dt: f64,
    /// Power-of-two multiples of `reference_dt`.
    pub test_dts: Vec<f64>,
    pub x0: f64,
    pub t_end: f64,
    pub paths: u64,
    pub seed: u64,
    pub metric: ErrorMetric,
    pub solver: SolverOptions,
}

/// Per-`dt` strong-error estimates with confidence intervals and the fitted
/// log-log rate.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    /// Strictly decreasing toward `reference_dt`.
    pub dts: Vec<f64>,
    pub mean_errors: Vec<f64>,
    /// 95% normal-approximation half-widths.
    pub ci_halfwidths: Vec<f64>,
    /// Failed-and-excluded path count per dt (reference failures count
    /// against every dt).
    pub n_failed: Vec<u64>,
    /// `None` when the fit is degenerate (some mean error is zero).
    pub fitted: Option<RateFit>,
    pub paths: u64,
    pub reference_dt: f64,
    pub metric: ErrorMetric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub rate: f64,
    /// Root mean squared log-deviation of the fit.
    pub residual: f64,
}

/// Ordinary least squares of `log(error)` on `log(dt)`.
pub fn fit_rate(dts: &[f64], errors: &[f64]) -> Result<RateFit, ConvergenceError> {
    if dts.len() != errors.len() || dts.len() < 2 {
        return Err(ConvergenceError::TooFewPoints(dts.len().min(errors.len())));
    }
    for (index, &value) in errors.iter().enumerate() {
        if !(value > 0.0) {
            return Err(ConvergenceError::NonPositiveError { index, value });
        }
    }
    let n = dts.len() as f64;
    let lx: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let rate = sxy / sxx;
    let intercept = my - rate * mx;
    let ss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let resid = y - (intercept + rate * x);
            resid * resid
        })
        .sum();
    Ok(RateFit {
        rate,
        residual: (ss / n).sqrt(),
    })
}

fn coarsening_factor(dt: f64, reference_dt: f64) -> Result<u64, ConvergenceError> {
    let ratio = dt / reference_dt;
    let m = ratio.round();
    let bad = ConvergenceError::BadDtRatio { dt, reference_dt };
    if !(m >= 2.0) || (ratio - m).abs() > 1e-9 * m {
        return Err(bad);
    }
    let m = m as u64;
    if !m.is_power_of_two() {
        return Err(bad);
    }
    Ok(m)
}

/// Estimates the strong endpoint error of the scheme at each test `dt`
/// against the same scheme at `reference_dt`, coupling all runs through one
/// Brownian stream per path.
pub fn strong_error(
    model: &SdeModel,
    config: &StrongErrorConfig,
) -> Result<ConvergenceReport, ConvergenceError> {
    let mut dts = config.test_dts.clone();
    dts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    dts.dedup();
    let factors: Vec<u64> = dts
        .iter()
        .map(|&dt| coarsening_factor(dt, config.reference_dt))
        .collect::<Result<_, _>>()?;

    let ref_params = SchemeParams::new(config.theta, config.sigma, config.reference_dt)?;
    let ref_stepper = Stepper::new(model, ref_params, config.scheme, config.solver)?;
    let coarse_steppers: Vec<(u64, SchemeParams)> = factors
        .iter()
        .zip(&dts)
        .map(|(&m, &dt)| Ok((m, SchemeParams::new(config.theta, config.sigma, dt)?)))
        .collect::<Result<_, ConvergenceError>>()?;
    // Fail fast on restriction violations before fanning out.
    for (_, p) in &coarse_steppers {
        Stepper::new(model, *p, config.scheme, config.solver)?;
    }

    let n_dts = dts.len();
    #[derive(Clone)]
    struct Acc {
        sum: Vec<f64>,
        sum_sq: Vec<f64>,
        count: Vec<u64>,
        failed: Vec<u64>,
    }
    let chunks = exec::chunk_collect(config.paths as usize, 64, |range| {
        let mut acc = Acc {
            sum: vec![0.0; n_dts],
            sum_sq: vec![0.0; n_dts],
            count: vec![0; n_dts],
            failed: vec![0; n_dts],
        };
        for i in range {
            let mut fine = IncrementStream::new(config.seed, i as u64, config.reference_dt);
            let reference = ref_stepper
                .simulate(config.x0, config.t_end, &mut fine, false)
                .expect("validated preconditions");
            if reference.failed {
                for j in 0..n_dts {
                    acc.failed[j] += 1;
                }
                continue;
            }
            for (j, (m, params)) in coarse_steppers.iter().enumerate() {
                let stream = IncrementStream::new(config.seed, i as u64, config.reference_dt);
                let mut coarse_stream = stream.coarsen(*m);
                let stepper = Stepper::new(model, *params, config.scheme, config.solver)
                    .expect("checked above");
                let coarse = stepper
                    .simulate(config.x0, config.t_end, &mut coarse_stream, false)
                    .expect("validated preconditions");
                if coarse.failed {
                    acc.failed[j] += 1;
                    continue;
                }
                let diff = (reference.terminal_state - coarse.terminal_state).abs();
                let sample = match config.metric {
                    ErrorMetric::MeanAbs => diff,
                    ErrorMetric::RootMeanSquare => diff * diff,
                };
                acc.sum[j] += sample;
                acc.sum_sq[j] += sample * sample;
                acc.count[j] += 1;
            }
        }
        acc
    });

    let mut sum = vec![0.0; n_dts];
    let mut sum_sq = vec![0.0; n_dts];
    let mut count = vec![0u64; n_dts];
    let mut failed = vec![0u64; n_dts];
    for acc in chunks {
        for j in 0..n_dts {
            sum[j] += acc.sum[j];
            sum_sq[j] += acc.sum_sq[j];
            count[j] += acc.count[j];
            failed[j] += acc.failed[j];
        }
    }

    for (j, &f) in failed.iter().enumerate() {
        if f as f64 > 0.01 * config.paths as f64 {
            return Err(ConvergenceError::TooManyFailures {
                dt: dts[j],
                failed: f,
                paths: config.paths,
            });
        }
    }

    let mut mean_errors = Vec::with_capacity(n_dts);
    let mut ci_halfwidths = Vec::with_capacity(n_dts);
    for j in 0..n_dts {
        let n = count[j].max(1) as f64;
        let mean = sum[j] / n;
        let var = ((sum_sq[j] - n * mean * mean) / (n - 1.0).max(1.0)).max(0.0);
        let half = 1.96 * (var / n).sqrt();
        match config.metric {
            ErrorMetric::MeanAbs => {
                mean_errors.push(mean);
                ci_halfwidths.push(half);
            }
            ErrorMetric::RootMeanSquare => {
                let rms = mean.sqrt();
                mean_errors.push(rms);
                // Delta method: d sqrt(m)/dm = 1/(2 sqrt(m)).
                ci_halfwidths.push(if rms > 0.0 { half / (2.0 * rms) } else { 0.0 });
            }
        }
    }

    let fitted = fit_rate(&dts, &mean_errors).ok();
    Ok(ConvergenceReport {
        dts,
        mean_errors,
        ci_halfwidths,
        n_failed: failed,
        fitted,
        paths: config.paths,
        reference_dt: config.reference_dt,
        metric: config.metric,
    })
}

/// Constants entering the second-moment bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentConstants {
    /// Monotone-type constants estimated by the audit at this scheme.
    pub a: f64,
    pub b: f64,
    /// Coercivity constants of `F`: `|F(x)|^2 >= c1 x^2 - c2 dt`.
    pub c1: f64,
    pub c2: f64,
    pub f_x0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentBoundReport {
    /// Running supremum over the horizon of the sample `E|X_k|^2`.
    pub sup_second_moment: f64,
    /// Gronwall-style analytic bound obtained from
    /// `(|F(x0)|^2 + (a + c2/c1) T) exp(b T / c1)` via the coercivity of `F`.
    pub bound: f64,
    pub exceeded: bool,
    pub constants: MomentConstants,
    pub steps: u64,
    pub paths: u64,
    pub failed_paths: u64,
}

/// Tracks the sample second moment of the implicit scheme along the horizon
/// and compares its supremum against the Gronwall-style bound computed from
/// audited model constants.
pub fn moment_bound_check(
    model: &SdeModel,
    params: &SchemeParams,
    x0: f64,
    t_end: f64,
    paths: u64,
    seed: u64,
    opts: &SolverOptions,
) -> Result<MomentBoundReport, ConvergenceError> {
    let theta = params.theta();
    if theta <= 0.0 {
        return Err(ConvergenceError::ThetaZeroUnsupported);
    }
    let audit = audit_assumptions(model, params, &model.default_grid(), 100_000)?;
    let mono_violations = audit
        .violations
        .iter()
        .filter(|v| v.condition == crate::model::ConditionKind::MonotoneType)
        .count();
    if mono_violations > 0 {
        return Err(ConvergenceError::AuditViolations(mono_violations));
    }
    let (a, b) = (audit.estimated_a, audit.estimated_b);
    let c1 = 1.0 - (theta * b + 0.5 * theta) * params.dt();
    if c1 <= 0.0 {
        return Err(ConvergenceError::CoercivityLost { c1 });
    }
    let l1g0 = model.l1g(0.0)?;
    let c2 = theta * a + params.sigma() * params.sigma() / (2.0 * theta) * l1g0 * l1g0;
    let f_x0 = eval_f_map(model, params, x0)?;
    // Gronwall chain: E|F(X_k)|^2 <= (|F(x0)|^2 + (a + c2/c1) T) exp(b T / c1),
    // then |F(x)|^2 >= c1 |x|^2 - c2 dt converts the bound to E|X_k|^2.
    let f_sq_bound = (f_x0 * f_x0 + (a + c2 / c1) * t_end) * (b / c1 * t_end).exp();
    let bound = (f_sq_bound + c2 * params.dt()) / c1;

    let stepper = Stepper::new(model, *params, Scheme::ThetaSigma, *opts)?;
    let n_steps = (t_end / params.dt()).round() as usize;

    struct Acc {
        sq_sums: Vec<f64>,
        failed: u64,
    }
    let chunks = exec::chunk_collect(paths as usize, 64, |range| {
        let mut acc = Acc {
            sq_sums: vec![0.0; n_steps + 1],
            failed: 0,
        };
        for i in range {
            let mut stream = IncrementStream::new(seed, i as u64, params.dt());
            let r = stepper
                .simulate(x0, t_end, &mut stream, true)
                .expect("validated preconditions");
            if r.failed {
                acc.failed += 1;
                continue;
            }
            for (k, &x) in r.states.as_deref().unwrap_or(&[]).iter().enumerate() {
                acc.sq_sums[k] += x * x;
            }
        }
        acc
    });

    let mut sq_sums = vec![0.0f64; n_steps + 1];
    let mut failed = 0u64;
    for acc in chunks {
        for (t, s) in sq_sums.iter_mut().zip(&acc.sq_sums) {
            *t += s;
        }
        failed += acc.failed;
    }
    if failed as f64 > 0.01 * paths as f64 {
        return Err(ConvergenceError::TooManyFailures {
            dt: params.dt(),
            failed,
            paths,
        });
    }
    let completed = (paths - failed).max(1) as f64;
    let sup = sq_sums
        .iter()
        .map(|s| s / completed)
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(MomentBoundReport {
        sup_second_moment: sup,
        bound,
        exceeded: sup > bound,
        constants: MomentConstants { a, b, c1, c2, f_x0 },
        steps: n_steps as u64,
        paths,
        failed_paths: failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_model;

    fn heston_paper() -> SdeModel {
        builtin_model("heston32", &[0.1, 0.2, 0.2f64.sqrt()]).unwrap()
    }

    #[test]
    fn fit_rate_exact_power_laws() {
        let dts = [0.2, 0.1, 0.05, 0.025];
        let linear: Vec<f64> = dts.iter().map(|d| 3.0 * d).collect();
        let fit = fit_rate(&dts, &linear).unwrap();
        assert!((fit.rate - 1.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);

        let quadratic: Vec<f64> = dts.iter().map(|d| 0.7 * d * d).collect();
        let fit = fit_rate(&dts, &quadratic).unwrap();
        assert!((fit.rate - 2.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn fit_rate_two_point_slope() {
        let fit = fit_rate(&[0.1, 0.025], &[0.1, 0.0251]).unwrap();
        let expected = (0.1f64 / 0.0251).ln() / 4.0f64.ln();
        assert!((fit.rate - expected).abs() < 1e-12);
        assert!((expected - 0.997).abs() < 1e-3);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn fit_rate_invariant_under_error_scaling() {
        let dts = [0.4, 0.2, 0.1, 0.05, 0.025];
        let errors: Vec<f64> = dts
            .iter()
            .map(|&d: &f64| 0.3 * d.powf(1.1) * (1.0 + 0.05 * d.sin()))
            .collect();
        let base = fit_rate(&dts, &errors).unwrap();
        let scaled: Vec<f64> = errors.iter().map(|e| 1e4 * e).collect();
        let fit = fit_rate(&dts, &scaled).unwrap();
        assert!((fit.rate - base.rate).abs() < 1e-12);
        assert!((fit.residual - base.residual).abs() < 1e-12);
    }

    #[test]
    fn fit_rate_rejects_nonpositive_and_short_input() {
        assert!(matches!(
            fit_rate(&[0.1], &[0.2]),
            Err(ConvergenceError::TooFewPoints(_))
        ));
        assert!(matches!(
            fit_rate(&[0.1, 0.05], &[0.2, 0.0]),
            Err(ConvergenceError::NonPositiveError { .. })
        ));
    }

    #[test]
    fn coarsening_factor_requires_power_of_two_multiple() {
        assert_eq!(coarsening_factor(0.5, 0.125).unwrap(), 4);
        assert!(coarsening_factor(0.375, 0.125).is_err());
        assert!(coarsening_factor(0.125, 0.125).is_err());
    }

    #[test]
    fn zero_coefficient_model_reports_degenerate_fit() {
        let m = builtin_model("linear", &[0.0, 0.0]).unwrap();
        let config = StrongErrorConfig {
            scheme: Scheme::ThetaSigma,
            theta: 1.0,
            sigma: 1.0,
            reference_dt: 1.0 / 64.0,
            test_dts: vec![1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0],
            x0: 1.0,
            t_end: 1.0,
            paths: 32,
            seed: 5,
            metric: ErrorMetric::MeanAbs,
            solver: SolverOptions::default(),
        };
        let report = strong_error(&m, &config).unwrap();
        assert!(report.fitted.is_none());
        assert!(report.mean_errors.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn linear_model_first_order_strong_rate() {
        let m = builtin_model("linear", &[-1.0, 1.0]).unwrap();
        let config = StrongErrorConfig {
            scheme: Scheme::ThetaSigma,
            theta: 1.0,
            sigma: 1.0,
            reference_dt: 1.0 / 2048.0,
            test_dts: (1..=5).map(|k| 1.0 / 2048.0 * f64::from(1 << (2 * k - 1) as u32)).collect(),
            x0: 1.0,
            t_end: 1.0,
            paths: 500,
            seed: 12,
            metric: ErrorMetric::MeanAbs,
            solver: SolverOptions::default(),
        };
        let report = strong_error(&m, &config).unwrap();
        let fit = report.fitted.unwrap();
        assert!(
            (fit.rate - 1.0).abs() <= 0.2,
            "rate {} errors {:?}",
            fit.rate,
            report.mean_errors
        );
        // Coupling sanity: error shrinks monotonically from coarsest to finest.
        let first = report.mean_errors.first().unwrap();
        let last = report.mean_errors.last().unwrap();
        assert!(last < first);
    }

    #[test]
    fn moment_bound_zero_model() {
        let m = builtin_model("linear", &[0.0, 0.0]).unwrap();
        let p = SchemeParams::new(1.0, 1.0, 0.25).unwrap();
        let report =
            moment_bound_check(&m, &p, 1.5, 2.0, 64, 3, &SolverOptions::default()).unwrap();
        assert_eq!(report.sup_second_moment, 2.25);
        assert!(!report.exceeded);
    }

    #[test]
    fn moment_bound_heston_paper_parameters() {
        let m = heston_paper();
        let p = SchemeParams::new(1.0, 1.0, 1.0 / 256.0).unwrap();
        let report =
            moment_bound_check(&m, &p, 0.5, 1.0, 2000, 17, &SolverOptions::default()).unwrap();
        assert_eq!(report.failed_paths, 0);
        assert!(
            !report.exceeded,
            "sup {} vs bound {}",
            report.sup_second_moment, report.bound
        );
        assert!(report.sup_second_moment > 0.0);
    }

    #[test]
    fn moment_bound_rejects_theta_zero() {
        let m = heston_paper();
        let p = SchemeParams::new(0.0, 1.0, 0.01).unwrap();
        assert!(matches!(
            moment_bound_check(&m, &p, 0.5, 1.0, 8, 3, &SolverOptions::default()),
            Err(ConvergenceError::ThetaZeroUnsupported)
        ));
    }

    #[test]
    fn linear_stable_second_moment_stays_near_initial_level() {
        // With the scheme stability condition satisfied the growth factor is
        // below one, so the sample second moment never strays far above x0^2.
        let m = builtin_model("linear", &[-1.0, 1.0]).unwrap();
        let p = SchemeParams::new(0.5, 1.0, 0.5).unwrap();
        assert!(crate::stability::scheme_ms_stable(0.5, 1.0, -1.0, 1.0, 0.5));
        let report =
            moment_bound_check(&m, &p, 1.0, 8.0, 4000, 23, &SolverOptions::default()).unwrap();
        // MC noise allowance over the early transient.
        assert!(
            report.sup_second_moment < 1.1,
            "sup {}",
            report.sup_second_moment
        );
        assert!(!report.exceeded);
    }
}
