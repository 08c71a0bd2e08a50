//! Positivity and non-negativity certificates for the implicit scheme family.
//!
//! For a half-line model with `f(0) >= 0`, `g(0) = 0`, `g^2 > 0` and
//! `L1g > 0` on `(0, inf)`, the scheme admits a unique positive
//! (non-negative) solution whenever the margin
//!
//! ```text
//! m(x) = x - g(x)^2 / (2 L1g(x)) + (1-theta) f(x) dt
//!        - (1-sigma)/2 L1g(x) dt + theta f(0) dt
//! ```
//!
//! is strictly positive (non-negative) for all `x > 0`. Certification here is
//! grid-based, not symbolic: the probe grid, the infimum location, and the
//! extrapolated behaviour at the `x -> 0+` boundary ship inside the
//! certificate so every claim is auditable. A grid cannot probe arbitrarily
//! small or large `x`; that limitation is inherent and stated, not resolved by
//! extrapolation.

use thiserror::Error;

use crate::model::{ModelError, SdeModel};
use crate::scheme::SchemeParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PositivityError {
    #[error("hypothesis violated: L1g({x}) = {l1g} is not positive")]
    HypothesisViolated { x: f64, l1g: f64 },
    #[error("certificate refused: {clause} fails ({detail})")]
    AssumptionRefused { clause: &'static str, detail: String },
    #[error("probe point {0} is not strictly positive")]
    NonPositiveProbe(f64),
    #[error("probe grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateKind {
    /// Strict margin, bounded away from zero at the boundary: positivity.
    Positive,
    /// Non-strict margin: non-negativity (zero is reachable and absorbing-consistent).
    NonNegative,
    /// Margin negative somewhere on the grid.
    None,
}

impl std::fmt::Display for CertificateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CertificateKind::Positive => "positive",
            CertificateKind::NonNegative => "non-negative",
            CertificateKind::None => "none",
        };
        write!(f, "{s}")
    }
}

/// Grid-audited certificate for one `(model, params)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PositivityCertificate {
    pub model_name: String,
    pub params: SchemeParams,
    pub kind: CertificateKind,
    /// Infimum of the margin over the probe grid.
    pub margin_min: f64,
    /// Probe point attaining the infimum.
    pub argmin_x: f64,
    /// Linear extrapolation of the margin to `x -> 0+` from the two smallest
    /// probe points; distinguishes margins bounded away from zero from
    /// margins that merely vanish at the boundary.
    pub boundary_limit: f64,
    /// Largest `dt` for which the margin stays non-negative on this grid
    /// (the margin is affine in `dt` pointwise), `inf` if unrestricted.
    pub dt_bound: f64,
    pub probe_points: usize,
}

/// Margin of the step-size condition at a single probe point `x > 0`.
pub fn margin(model: &SdeModel, params: &SchemeParams, x: f64) -> Result<f64, PositivityError> {
    let (base, slope) = margin_affine_parts(model, x)?;
    Ok(margin_at_dt(base, slope, params))
}

/// Decomposition `margin = base(x) + slope(x; theta, sigma) . dt` used by the
/// certificate and the step-size search. `slope` is returned as the pair of
/// `dt`-coefficients that do not yet depend on `(theta, sigma)`:
/// `(f(x), L1g(x), f(0))` folded by [`margin_at_dt`].
fn margin_affine_parts(model: &SdeModel, x: f64) -> Result<(f64, (f64, f64, f64)), PositivityError> {
    if !(x > 0.0) {
        return Err(PositivityError::NonPositiveProbe(x));
    }
    let g = model.diffusion(x)?;
    let l1g = model.l1g(x)?;
    if !(l1g > 0.0) {
        return Err(PositivityError::HypothesisViolated { x, l1g });
    }
    let f = model.drift(x)?;
    let base = x - g * g / (2.0 * l1g);
    Ok((base, (f, l1g, model.drift_at_zero())))
}

fn dt_slope(params: &SchemeParams, parts: (f64, f64, f64)) -> f64 {
    let (f, l1g, f0) = parts;
    (1.0 - params.theta()) * f - 0.5 * (1.0 - params.sigma()) * l1g + params.theta() * f0
}

fn margin_at_dt(base: f64, parts: (f64, f64, f64), params: &SchemeParams) -> f64 {
    base + dt_slope(params, parts) * params.dt()
}

fn check_assumptions(
    model: &SdeModel,
    probe_grid: &[f64],
) -> Result<(), PositivityError> {
    if probe_grid.is_empty() {
        return Err(PositivityError::EmptyGrid);
    }
    let f0 = model.drift_at_zero();
    if !(f0 >= 0.0) {
        return Err(PositivityError::AssumptionRefused {
            clause: "f(0) >= 0",
            detail: format!("f(0) = {f0}"),
        });
    }
    let g0 = model.diffusion_at_zero();
    if g0 != 0.0 {
        return Err(PositivityError::AssumptionRefused {
            clause: "g(0) = 0",
            detail: format!("g(0) = {g0}"),
        });
    }
    for &x in probe_grid {
        if !(x > 0.0) {
            return Err(PositivityError::NonPositiveProbe(x));
        }
        let g = model.diffusion(x)?;
        if !(g * g > 0.0) {
            return Err(PositivityError::AssumptionRefused {
                clause: "g^2(x) > 0 on (0, inf)",
                detail: format!("g({x}) = {g}"),
            });
        }
    }
    Ok(())
}

/// Certifies positivity / non-negativity of the scheme on a probe grid.
///
/// The margin is evaluated at every probe point; `Positive` additionally
/// requires the boundary extrapolation to stay bounded away from zero, since
/// a margin proportional to `x` vanishes at the absorbing boundary and only
/// supports the non-negativity claim.
pub fn certify(
    model: &SdeModel,
    params: &SchemeParams,
    probe_grid: &[f64],
) -> Result<PositivityCertificate, PositivityError> {
    check_assumptions(model, probe_grid)?;
    let mut grid: Vec<f64> = probe_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut margin_min = f64::INFINITY;
    let mut argmin_x = grid[0];
    let mut dt_bound = f64::INFINITY;
    let mut margins = Vec::with_capacity(grid.len());
    for &x in &grid {
        let (base, parts) = margin_affine_parts(model, x)?;
        let m = margin_at_dt(base, parts, params);
        margins.push(m);
        if m < margin_min {
            margin_min = m;
            argmin_x = x;
        }
        let slope = dt_slope(params, parts);
        if slope < 0.0 {
            let limit = if base >= 0.0 { base / (-slope) } else { 0.0 };
            dt_bound = dt_bound.min(limit);
        }
    }

    let boundary_limit = if grid.len() >= 2 {
        let (x1, x2) = (grid[0], grid[1]);
        let (m1, m2) = (margins[0], margins[1]);
        m1 - x1 * (m2 - m1) / (x2 - x1)
    } else {
        margins[0]
    };

    let weak_tol = 1e-12 * (1.0 + argmin_x.abs());
    let kind = if margin_min > 0.0 && boundary_limit > weak_tol {
        CertificateKind::Positive
    } else if margin_min >= -weak_tol {
        CertificateKind::NonNegative
    } else {
        CertificateKind::None
    };

    Ok(PositivityCertificate {
        model_name: model.name().to_string(),
        params: *params,
        kind,
        margin_min,
        argmin_x,
        boundary_limit,
        dt_bound,
        probe_points: grid.len(),
    })
}

/// Largest step size for which [`certify`] still yields a certificate on the
/// grid, located by bisection to 1e-6 relative accuracy.
///
/// Returns infinity when the `dt`-coefficient of the margin is non-negative
/// at every probe point (the condition then never degrades with `dt`), and
/// `0` when the margin is already negative in the `dt -> 0` limit.
pub fn max_dt_for_positivity(
    model: &SdeModel,
    theta: f64,
    sigma: f64,
    probe_grid: &[f64],
) -> Result<f64, PositivityError> {
    check_assumptions(model, probe_grid)?;
    let probe_params = |dt: f64| SchemeParams::new(theta, sigma, dt).expect("validated by caller");
    let passes = |dt: f64| -> Result<bool, PositivityError> {
        Ok(certify(model, &probe_params(dt), probe_grid)?.kind != CertificateKind::None)
    };

    let mut all_slopes_nonneg = true;
    let reference = probe_params(1.0);
    for &x in probe_grid {
        let (base, parts) = margin_affine_parts(model, x)?;
        if dt_slope(&reference, parts) < 0.0 {
            all_slopes_nonneg = false;
            if base <= 0.0 {
                // margin(x; dt) = base + slope dt stays negative for every
                // dt > 0: no admissible step size at all.
                return Ok(0.0);
            }
        }
    }
    if all_slopes_nonneg {
        return Ok(f64::INFINITY);
    }

    // Bracket the threshold, then bisect.
    let mut lo; // passing
    let mut hi; // failing
    if passes(1.0)? {
        lo = 1.0;
        hi = 2.0;
        let mut doublings = 0;
        while passes(hi)? {
            lo = hi;
            hi *= 2.0;
            doublings += 1;
            if doublings > 200 {
                return Ok(f64::INFINITY);
            }
        }
    } else {
        hi = 1.0;
        lo = 0.5;
        let mut halvings = 0;
        while !passes(lo)? {
            hi = lo;
            lo *= 0.5;
            halvings += 1;
            if halvings > 200 {
                return Ok(0.0);
            }
        }
    }
    while hi - lo > 1e-6 * lo {
        let mid = 0.5 * (lo + hi);
        if passes(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Default probe grid for certificates: the model grid restricted to
/// `(0, inf)`, densified near zero (where the condition is tight for
/// sublinear diffusions) and extended to large `x` (where the `dt`-dependent
/// terms of superlinear diffusions dominate).
pub fn default_probe_grid(model: &SdeModel) -> Vec<f64> {
    let mut grid: Vec<f64> = model.default_grid().into_iter().filter(|&x| x > 0.0).collect();
    for i in 0..64 {
        // 64 log-spaced points in [1e-8, 1e-1]
        grid.push(10f64.powf(-8.0 + 7.0 * i as f64 / 63.0));
    }
    for i in 1..=48 {
        // 48 log-spaced points in (10, 1e8]
        grid.push(10f64.powf(1.0 + 7.0 * i as f64 / 48.0));
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_model;

    fn heston_paper() -> SdeModel {
        builtin_model("heston32", &[0.1, 0.2, 0.2f64.sqrt()]).unwrap()
    }

    fn params(theta: f64, sigma: f64, dt: f64) -> SchemeParams {
        SchemeParams::new(theta, sigma, dt).unwrap()
    }

    #[test]
    fn heston_margin_is_two_thirds_x() {
        // g^2/(2 L1g) = x/3 for any beta, so the double-implicit margin is
        // (2/3) x independent of dt.
        let m = heston_paper();
        for &dt in &[1e-3, 1.0, 1e3] {
            let p = params(1.0, 1.0, dt);
            for &x in &[1e-6, 0.5, 7.0] {
                let got = margin(&m, &p, x).unwrap();
                assert!(
                    (got - 2.0 * x / 3.0).abs() <= 1e-12 * (1.0 + x),
                    "dt={dt} x={x}: {got}"
                );
            }
        }
    }

    #[test]
    fn meanrev_power_margin_formula() {
        // p = 1, theta = 1, sigma = 0: margin = x (1 - beta^2 dt)/2 + alpha mu dt.
        let (alpha, mu, beta) = (0.5, 1.0, 0.2f64.sqrt());
        let m = builtin_model("meanrev_power", &[alpha, mu, beta, 1.0]).unwrap();
        for &dt in &[0.1, 1.0, 4.9, 5.1] {
            let p = params(1.0, 0.0, dt);
            for &x in &[0.01, 1.0, 100.0] {
                let expected = x * (1.0 - beta * beta * dt) / 2.0 + alpha * mu * dt;
                let got = margin(&m, &p, x).unwrap();
                assert!((got - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
            }
        }
    }

    #[test]
    fn fully_implicit_margin_drops_dt_terms_except_drift_at_zero() {
        let m = builtin_model("meanrev_general", &[1.0, 1.5, 0.75]).unwrap();
        let p_small = params(1.0, 1.0, 1e-6);
        let p_large = params(1.0, 1.0, 1e3);
        let x = 0.7;
        // theta = sigma = 1 leaves only x - g^2/(2 L1g) + f(0) dt.
        let g = m.diffusion(x).unwrap();
        let l1g = m.l1g(x).unwrap();
        let base = x - g * g / (2.0 * l1g);
        for (p, dt) in [(p_small, 1e-6), (p_large, 1e3)] {
            let got = margin(&m, &p, x).unwrap();
            let expected = base + m.drift_at_zero() * dt;
            assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn heston_certificate_is_non_negative_for_any_dt() {
        let m = heston_paper();
        let grid = default_probe_grid(&m);
        for &dt in &[1e-3, 1.0, 1e3] {
            let cert = certify(&m, &params(1.0, 1.0, dt), &grid).unwrap();
            assert_eq!(cert.kind, CertificateKind::NonNegative, "dt={dt}");
            let expected_min = 2.0 / 3.0 * grid[0];
            assert!((cert.margin_min - expected_min).abs() <= 1e-12 * (1.0 + expected_min));
            assert_eq!(cert.dt_bound, f64::INFINITY);
        }
    }

    #[test]
    fn linear_model_refused_or_certified_consistently() {
        // g(0) = 0, f(0) = 0, g^2 > 0 away from zero and L1g = mu^2 x > 0, so
        // the hypotheses hold on (0, inf); margin = x - x/2 = x/2 vanishes at
        // the boundary, giving non-negativity.
        let m = builtin_model("linear", &[-1.0, 1.0]).unwrap();
        let grid: Vec<f64> = (1..=64).map(|i| i as f64 / 16.0).collect();
        let cert = certify(&m, &params(1.0, 1.0, 0.5), &grid).unwrap();
        assert_eq!(cert.kind, CertificateKind::NonNegative);
        assert!((cert.margin_min - grid[0] / 2.0).abs() < 1e-12);
    }

    #[test]
    fn meanrev_power_large_dt_loses_certificate_with_violating_region() {
        let (alpha, mu, beta) = (0.5, 1.0, 0.2f64.sqrt());
        let m = builtin_model("meanrev_power", &[alpha, mu, beta, 1.0]).unwrap();
        let grid = default_probe_grid(&m);
        let dt = 2.0 / (beta * beta); // twice the admissible step
        let cert = certify(&m, &params(1.0, 0.0, dt), &grid).unwrap();
        assert_eq!(cert.kind, CertificateKind::None);
        // Violation sits in the large-x region: x (1-2)/2 + alpha mu dt < 0
        // for x > 2 alpha mu dt.
        assert!(cert.argmin_x > 2.0 * alpha * mu * dt);
        assert!(cert.margin_min < 0.0);
    }

    #[test]
    fn positive_certificate_when_margin_bounded_away_from_zero() {
        // p = 0.5 with alpha mu > beta^2/4: margin = (alpha mu - beta^2/4) dt > 0
        // uniformly in x.
        let m = builtin_model("meanrev_power", &[0.5, 1.0, 0.2f64.sqrt(), 0.5]).unwrap();
        let cert = certify(&m, &params(1.0, 0.0, 0.5), &default_probe_grid(&m)).unwrap();
        assert_eq!(cert.kind, CertificateKind::Positive);
        assert!(cert.boundary_limit > 0.0);
    }

    #[test]
    fn max_dt_heston_unrestricted() {
        let m = heston_paper();
        let dt = max_dt_for_positivity(&m, 1.0, 1.0, &default_probe_grid(&m)).unwrap();
        assert_eq!(dt, f64::INFINITY);
    }

    #[test]
    fn max_dt_meanrev_power_p1_is_inverse_beta_sq() {
        let beta = 0.2f64.sqrt();
        let m = builtin_model("meanrev_power", &[0.5, 1.0, beta, 1.0]).unwrap();
        let dt = max_dt_for_positivity(&m, 1.0, 0.0, &default_probe_grid(&m)).unwrap();
        assert!(
            (dt - 1.0 / (beta * beta)).abs() < 1e-5,
            "max dt {dt} vs {}",
            1.0 / (beta * beta)
        );
    }

    #[test]
    fn max_dt_meanrev_power_p_half_unrestricted() {
        let m = builtin_model("meanrev_power", &[0.5, 1.0, 0.2f64.sqrt(), 0.5]).unwrap();
        let dt = max_dt_for_positivity(&m, 1.0, 0.0, &default_probe_grid(&m)).unwrap();
        assert_eq!(dt, f64::INFINITY);
    }

    #[test]
    fn max_dt_zero_when_margin_negative_in_dt_limit() {
        // p = 0.5 with alpha mu < beta^2/4 under (1, 0): margin is negative
        // for every positive dt.
        let m = builtin_model("meanrev_power", &[0.1, 0.1, 1.0, 0.5]).unwrap();
        let dt = max_dt_for_positivity(&m, 1.0, 0.0, &default_probe_grid(&m)).unwrap();
        assert_eq!(dt, 0.0);
    }

    #[test]
    fn margin_is_affine_in_sigma_with_nonnegative_coefficient() {
        let m = heston_paper();
        let x = 0.8;
        let dt = 0.7;
        let m0 = margin(&m, &params(0.6, 0.0, dt), x).unwrap();
        let mhalf = margin(&m, &params(0.6, 0.5, dt), x).unwrap();
        let m1 = margin(&m, &params(0.6, 1.0, dt), x).unwrap();
        let coeff = m.l1g(x).unwrap() / 2.0 * dt;
        assert!(coeff >= 0.0);
        assert!((m1 - m0 - coeff).abs() < 1e-12);
        assert!((mhalf - 0.5 * (m0 + m1)).abs() < 1e-12);
    }

    #[test]
    fn certificate_dt_bound_consistent_with_slope_sign_at_argmin() {
        let beta = 0.2f64.sqrt();
        let m = builtin_model("meanrev_power", &[0.5, 1.0, beta, 1.0]).unwrap();
        let grid = default_probe_grid(&m);
        let cert = certify(&m, &params(1.0, 0.0, 1.0), &grid).unwrap();
        assert_eq!(cert.kind, CertificateKind::Positive);
        // The affine dt-bound must agree with the bisection search.
        let searched = max_dt_for_positivity(&m, 1.0, 0.0, &grid).unwrap();
        assert!((cert.dt_bound - searched).abs() <= 2e-6 * searched);
    }

    #[test]
    fn refusal_names_the_violated_clause() {
        use crate::model::{AssumptionConstants, Domain};
        use std::sync::Arc;
        // f(0) < 0 violates the boundary assumption.
        let sinking = SdeModel::new(
            "sinking",
            Domain::NonNegativeHalfLine,
            Arc::new(|x| -1.0 - x),
            Arc::new(|x| x),
            Arc::new(|_| 1.0),
            Arc::new(|x| x),
            AssumptionConstants {
                one_sided_lipschitz_k: 0.0,
                monotone_growth_a: 10.0,
                monotone_growth_b: 10.0,
                poly_growth_h: 1.0,
                poly_growth_coeff: 2.0,
                domain: Domain::NonNegativeHalfLine,
            },
        )
        .unwrap();
        let err = certify(&sinking, &params(1.0, 1.0, 0.1), &[1.0]).unwrap_err();
        match err {
            PositivityError::AssumptionRefused { clause, .. } => {
                assert_eq!(clause, "f(0) >= 0");
            }
            other => panic!("unexpected error {other:?}"),
        }

        let m = builtin_model("meanrev_general", &[1.0, 1.0, 0.75]).unwrap();
        let err = certify(&m, &params(1.0, 1.0, 0.1), &[0.0, 1.0]).unwrap_err();
        assert!(matches!(err, PositivityError::NonPositiveProbe(_)));
    }
}
