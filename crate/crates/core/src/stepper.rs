//! One-step maps and full-path simulation.
//!
//! Three schemes share the driving increments:
//!
//! * `theta-sigma` — the implicit family; each step solves `F(X_{k+1}) = b(X_k, dW)`
//!   with `b(x, dw) = x + (1-theta) f(x) dt + g(x) dw + 1/2 L1g(x) dw^2 - (1-sigma)/2 L1g(x) dt`.
//!   With `theta = sigma = 0` this collapses to classical Milstein and skips
//!   the solve.
//! * `milstein` — the classical explicit Milstein baseline.
//! * `em` — Euler–Maruyama.
//!
//! On half-line models the explicit baselines can leave the domain; they apply
//! the common truncation fix (coefficients evaluated at `max(x, 0)`) and count
//! each negative state as an excursion, so the baseline's bias is measurable
//! instead of fatal. The implicit family never manufactures values outside the
//! model's validity: a step whose right-hand side admits no in-domain root
//! fails, and the failure is recorded on the path.

use thiserror::Error;

use crate::exec;
use crate::fmap::{max_stable_dt, solve_f_map, SolveError, SolverOptions};
use crate::increments::IncrementStream;
use crate::model::{Domain, ModelError, SdeModel};
use crate::scheme::SchemeParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    EulerMaruyama,
    Milstein,
    ThetaSigma,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scheme::EulerMaruyama => "em",
            Scheme::Milstein => "milstein",
            Scheme::ThetaSigma => "theta-sigma",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("t_end = {t_end} is not an integer multiple of dt = {dt}")]
    HorizonMismatch { t_end: f64, dt: f64 },
    #[error("initial state {x0} outside model domain")]
    InitialState { x0: f64 },
    #[error("increment stream at dt = {stream_dt} does not match scheme dt = {dt}")]
    StreamMismatch { stream_dt: f64, dt: f64 },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Outcome of simulating one path.
///
/// `failed` paths report the last valid state as `terminal_state` together
/// with the index of the failing step. `negative_excursions` counts steps on
/// which the state left the non-negative domain (explicit baselines only; a
/// certified implicit scheme never produces one).
#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub terminal_state: f64,
    pub states: Option<Vec<f64>>,
    pub negative_excursions: u64,
    pub failed: bool,
    pub failure_step: Option<u64>,
}

/// One-step integrator for a fixed `(model, params, scheme)`.
///
/// Construction performs the step-restriction check `dt < (theta (K+1))^-1`
/// once; stepping is then pure and safe to share across path workers.
#[derive(Debug, Clone)]
pub struct Stepper<'m> {
    model: &'m SdeModel,
    params: SchemeParams,
    scheme: Scheme,
    opts: SolverOptions,
}

impl<'m> Stepper<'m> {
    pub fn new(
        model: &'m SdeModel,
        params: SchemeParams,
        scheme: Scheme,
        opts: SolverOptions,
    ) -> Result<Self, SolveError> {
        if scheme == Scheme::ThetaSigma && params.theta() > 0.0 {
            let limit = max_stable_dt(model, params.theta());
            if !(params.dt() < limit) {
                return Err(SolveError::StepRestriction {
                    dt: params.dt(),
                    limit,
                });
            }
        }
        Ok(Self {
            model,
            params,
            scheme,
            opts,
        })
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Right-hand side of the implicit equation:
    /// `b = x + (1-theta) f dt + g dw + 1/2 L1g dw^2 - (1-sigma)/2 L1g dt`.
    pub fn b_rhs(&self, x: f64, dw: f64) -> Result<f64, ModelError> {
        let p = &self.params;
        let dt = p.dt();
        let f = self.model.drift(x)?;
        let g = self.model.diffusion(x)?;
        let l1g = self.model.l1g(x)?;
        Ok(x + (1.0 - p.theta()) * f * dt + g * dw + 0.5 * l1g * dw * dw
            - 0.5 * (1.0 - p.sigma()) * l1g * dt)
    }

    /// Advances the state by one step driven by the increment `dw`.
    pub fn step(&self, x: f64, dw: f64) -> Result<f64, SolveError> {
        match self.scheme {
            Scheme::ThetaSigma => {
                let b = self.b_rhs(x, dw)?;
                if self.params.theta() == 0.0 && self.params.sigma() == 0.0 {
                    // Classical Milstein: F is the identity.
                    if self.model.domain() == Domain::NonNegativeHalfLine && b < 0.0 {
                        return Err(SolveError::NoNonNegativeRoot { b, f_at_zero: 0.0 });
                    }
                    return Ok(b);
                }
                Ok(solve_f_map(self.model, &self.params, b, &self.opts)?.root)
            }
            Scheme::EulerMaruyama => {
                let xe = self.truncated(x);
                let f = self.model.drift(xe)?;
                let g = self.model.diffusion(xe)?;
                Ok(x + f * self.params.dt() + g * dw)
            }
            Scheme::Milstein => {
                let dt = self.params.dt();
                let xe = self.truncated(x);
                let f = self.model.drift(xe)?;
                let g = self.model.diffusion(xe)?;
                let l1g = self.model.l1g(xe)?;
                Ok(x + f * dt + g * dw + 0.5 * l1g * (dw * dw - dt))
            }
        }
    }

    fn truncated(&self, x: f64) -> f64 {
        match self.model.domain() {
            Domain::NonNegativeHalfLine => x.max(0.0),
            Domain::WholeLine => x,
        }
    }

    /// Simulates one path to `t_end`, which must be an integer multiple of
    /// `dt` (up to rounding in the last place). Step failures terminate the
    /// path and are recorded rather than propagated.
    pub fn simulate(
        &self,
        x0: f64,
        t_end: f64,
        stream: &mut IncrementStream,
        record: bool,
    ) -> Result<PathResult, PathError> {
        let dt = self.params.dt();
        if !self.model.domain().contains(x0) {
            return Err(PathError::InitialState { x0 });
        }
        let rel = (stream.level_dt() - dt).abs();
        if rel > 4.0 * f64::EPSILON * dt {
            return Err(PathError::StreamMismatch {
                stream_dt: stream.level_dt(),
                dt,
            });
        }
        let n_steps = steps_for_horizon(t_end, dt).ok_or(PathError::HorizonMismatch { t_end, dt })?;

        let mut states = if record {
            let mut v = Vec::with_capacity(n_steps as usize + 1);
            v.push(x0);
            Some(v)
        } else {
            None
        };
        let mut x = x0;
        let mut negative_excursions = 0u64;
        let counts_excursions = self.model.domain() == Domain::NonNegativeHalfLine
            && matches!(self.scheme, Scheme::EulerMaruyama | Scheme::Milstein);

        for k in 0..n_steps {
            let dw = stream.next_increment();
            match self.step(x, dw) {
                Ok(next) => {
                    if counts_excursions && next < 0.0 {
                        negative_excursions += 1;
                    }
                    x = next;
                    if let Some(v) = states.as_mut() {
                        v.push(x);
                    }
                }
                Err(_) => {
                    return Ok(PathResult {
                        terminal_state: x,
                        states,
                        negative_excursions,
                        failed: true,
                        failure_step: Some(k),
                    });
                }
            }
        }
        Ok(PathResult {
            terminal_state: x,
            states,
            negative_excursions,
            failed: false,
            failure_step: None,
        })
    }
}

/// Number of steps when `t_end` is an integer multiple of `dt` (within one
/// unit of rounding), `None` otherwise.
fn steps_for_horizon(t_end: f64, dt: f64) -> Option<u64> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return None;
    }
    let n = (t_end / dt).round();
    if n < 1.0 || (n * dt - t_end).abs() > 4.0 * f64::EPSILON * t_end.abs() {
        return None;
    }
    Some(n as u64)
}

/// Right-hand side `b(x, dw)` of the implicit scheme equation.
pub fn b_rhs(
    model: &SdeModel,
    params: &SchemeParams,
    x: f64,
    dw: f64,
) -> Result<f64, ModelError> {
    Stepper {
        model,
        params: *params,
        scheme: Scheme::ThetaSigma,
        opts: SolverOptions::default(),
    }
    .b_rhs(x, dw)
}

/// One implicit-family step: `solve_F(b_rhs(x, dw))`.
pub fn step(
    model: &SdeModel,
    params: &SchemeParams,
    x: f64,
    dw: f64,
    opts: &SolverOptions,
) -> Result<f64, SolveError> {
    Stepper::new(model, *params, Scheme::ThetaSigma, *opts)?.step(x, dw)
}

/// Simulates a single path; see [`Stepper::simulate`].
#[allow(clippy::too_many_arguments)]
pub fn simulate_path(
    model: &SdeModel,
    params: &SchemeParams,
    scheme: Scheme,
    x0: f64,
    t_end: f64,
    stream: &mut IncrementStream,
    record: bool,
    opts: &SolverOptions,
) -> Result<PathResult, PathError> {
    Stepper::new(model, *params, scheme, *opts)?.simulate(x0, t_end, stream, record)
}

/// Simulates `n_paths` independent paths with path index `i` driven by the
/// stream `(master_seed, i)`. Paths run in parallel; results come back in
/// path-index order, so the output is independent of the worker count.
#[allow(clippy::too_many_arguments)]
pub fn simulate_ensemble(
    model: &SdeModel,
    params: &SchemeParams,
    scheme: Scheme,
    x0: f64,
    t_end: f64,
    n_paths: u64,
    master_seed: u64,
    record: bool,
    opts: &SolverOptions,
) -> Result<Vec<PathResult>, PathError> {
    let stepper = Stepper::new(model, *params, scheme, *opts)?;
    if !model.domain().contains(x0) {
        return Err(PathError::InitialState { x0 });
    }
    steps_for_horizon(t_end, params.dt()).ok_or(PathError::HorizonMismatch {
        t_end,
        dt: params.dt(),
    })?;
    let results = exec::map_collect(n_paths as usize, |i| {
        let mut stream = IncrementStream::new(master_seed, i as u64, params.dt());
        stepper
            .simulate(x0, t_end, &mut stream, record)
            .expect("preconditions validated above")
    });
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, AssumptionConstants};
    use std::sync::Arc;

    fn heston_paper() -> SdeModel {
        builtin_model("heston32", &[0.1, 0.2, 0.2f64.sqrt()]).unwrap()
    }

    fn params(theta: f64, sigma: f64, dt: f64) -> SchemeParams {
        SchemeParams::new(theta, sigma, dt).unwrap()
    }

    fn zero_model() -> SdeModel {
        SdeModel::new(
            "zero",
            Domain::WholeLine,
            Arc::new(|_| 0.0),
            Arc::new(|_| 0.0),
            Arc::new(|_| 0.0),
            Arc::new(|_| 0.0),
            AssumptionConstants {
                one_sided_lipschitz_k: 0.0,
                monotone_growth_a: 0.0,
                monotone_growth_b: 0.0,
                poly_growth_h: 1.0,
                poly_growth_coeff: 1.0,
                domain: Domain::WholeLine,
            },
        )
        .unwrap()
    }

    #[test]
    fn b_rhs_of_zero_model_is_identity() {
        let m = zero_model();
        let p = params(0.3, 0.7, 0.5);
        for &(x, dw) in &[(0.0, 0.1), (-2.5, 1.3), (7.0, -0.4)] {
            assert_eq!(b_rhs(&m, &p, x, dw).unwrap(), x);
        }
    }

    #[test]
    fn b_rhs_double_implicit_zero_increment_is_state() {
        let m = heston_paper();
        let p = params(1.0, 1.0, 0.1);
        assert_eq!(b_rhs(&m, &p, 0.5, 0.0).unwrap(), 0.5);
    }

    #[test]
    fn b_rhs_linear_explicit_value() {
        let (alpha, mu) = (0.37, 0.81);
        let m = builtin_model("linear", &[alpha, mu]).unwrap();
        let p = params(0.0, 0.0, 0.1);
        let expected = 1.0 + 0.1 * alpha + 0.2 * mu + 0.5 * mu * mu * (0.04 - 0.1);
        let b = b_rhs(&m, &p, 1.0, 0.2).unwrap();
        assert!((b - expected).abs() < 1e-15);
    }

    #[test]
    fn explicit_family_step_matches_milstein_formula_on_linear() {
        let (alpha, mu, dt) = (-0.6, 0.8, 0.125);
        let m = builtin_model("linear", &[alpha, mu]).unwrap();
        let p = params(0.0, 0.0, dt);
        for &(x, dw) in &[(1.0, 0.2), (-3.0, -0.7), (0.5, 0.0)] {
            let expected = x * (1.0 + alpha * dt + mu * dw + 0.5 * mu * mu * (dw * dw - dt));
            let got = step(&m, &p, x, dw, &SolverOptions::default()).unwrap();
            assert!((got - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn heston_absorbs_zero_state() {
        let m = heston_paper();
        let p = params(1.0, 1.0, 0.1);
        for &dw in &[-1.0, 0.0, 2.3] {
            let next = step(&m, &p, 0.0, dw, &SolverOptions::default()).unwrap();
            assert_eq!(next, 0.0);
        }
    }

    #[test]
    fn heston_double_implicit_step_with_zero_increment() {
        // Solves 0.035 x^2 + 0.99 x = 0.5; the quadratic formula gives
        // x = (-0.99 + sqrt(0.99^2 + 4*0.035*0.5)) / (2*0.035).
        let m = heston_paper();
        let p = params(1.0, 1.0, 0.1);
        let expected = (-0.99 + (0.99f64 * 0.99 + 0.07).sqrt()) / 0.07;
        assert!((expected - 0.496_341_4).abs() < 1e-6);
        let got = step(&m, &p, 0.5, 0.0, &SolverOptions::default()).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_model_path_is_constant() {
        let m = zero_model();
        let p = params(0.5, 0.5, 0.25);
        let mut stream = IncrementStream::new(11, 0, 0.25);
        let r = simulate_path(
            &m,
            &p,
            Scheme::ThetaSigma,
            1.75,
            10.0,
            &mut stream,
            true,
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(!r.failed);
        assert_eq!(r.terminal_state, 1.75);
        assert!(r.states.unwrap().iter().all(|&x| x == 1.75));
    }

    #[test]
    fn heston_double_implicit_paths_stay_non_negative() {
        let m = heston_paper();
        let p = params(1.0, 1.0, 0.5);
        let results = simulate_ensemble(
            &m,
            &p,
            Scheme::ThetaSigma,
            0.5,
            50.0,
            64,
            2024,
            true,
            &SolverOptions::default(),
        )
        .unwrap();
        for r in &results {
            assert!(!r.failed);
            assert_eq!(r.negative_excursions, 0);
            assert!(r.states.as_ref().unwrap().iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn family_with_zero_weights_matches_dedicated_milstein() {
        let m = builtin_model("linear", &[-0.5, 0.7]).unwrap();
        let p = params(0.0, 0.0, 0.125);
        let opts = SolverOptions::default();
        for seed in 0..4 {
            let mut s1 = IncrementStream::new(seed, 17, 0.125);
            let mut s2 = IncrementStream::new(seed, 17, 0.125);
            let a = simulate_path(&m, &p, Scheme::ThetaSigma, 1.0, 4.0, &mut s1, true, &opts)
                .unwrap();
            let b = simulate_path(&m, &p, Scheme::Milstein, 1.0, 4.0, &mut s2, true, &opts)
                .unwrap();
            let xa = a.states.unwrap();
            let xb = b.states.unwrap();
            for (u, v) in xa.iter().zip(&xb) {
                assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn explicit_baselines_count_negative_excursions() {
        // Large steps on the Heston model push EM below zero; the truncation
        // fix keeps the path alive and the excursions are counted.
        let m = heston_paper();
        let p = params(0.0, 0.0, 0.9);
        let results = simulate_ensemble(
            &m,
            &p,
            Scheme::EulerMaruyama,
            8.0,
            90.0,
            256,
            7,
            false,
            &SolverOptions::default(),
        )
        .unwrap();
        let total: u64 = results.iter().map(|r| r.negative_excursions).sum();
        assert!(total > 0, "expected the baseline to leave the domain");
        assert!(results.iter().all(|r| !r.failed));
    }

    #[test]
    fn horizon_must_be_step_multiple() {
        let m = zero_model();
        let p = params(0.5, 0.5, 0.3);
        let mut stream = IncrementStream::new(0, 0, 0.3);
        let err = simulate_path(
            &m,
            &p,
            Scheme::ThetaSigma,
            0.0,
            1.0,
            &mut stream,
            false,
            &SolverOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, PathError::HorizonMismatch { .. }));
    }

    #[test]
    fn stream_dt_must_match_scheme_dt() {
        let m = zero_model();
        let p = params(0.5, 0.5, 0.25);
        let mut stream = IncrementStream::new(0, 0, 0.5);
        let err = simulate_path(
            &m,
            &p,
            Scheme::ThetaSigma,
            0.0,
            1.0,
            &mut stream,
            false,
            &SolverOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, PathError::StreamMismatch { .. }));
    }

    #[test]
    fn uncertified_step_size_fails_paths_not_process() {
        // meanrev_power p=1 at dt above beta^-2 loses the positivity
        // certificate: some increments drive the rhs below F(0), and those
        // paths must fail loudly instead of leaving the domain.
        let m = builtin_model("meanrev_power", &[0.6, 0.1, 1.0, 1.0]).unwrap();
        let p = params(1.0, 0.0, 2.0); // beta^-2 = 1; K = -0.6 keeps dt = 2 solvable
        let results = simulate_ensemble(
            &m,
            &p,
            Scheme::ThetaSigma,
            1.0,
            40.0,
            512,
            31,
            false,
            &SolverOptions::default(),
        )
        .unwrap();
        let failed = results.iter().filter(|r| r.failed).count();
        assert!(failed > 0, "expected failures above the certified step size");
        for r in results.iter().filter(|r| r.failed) {
            assert!(r.failure_step.is_some());
            assert!(r.terminal_state >= 0.0, "last valid state reported");
        }
    }

    #[test]
    fn coupled_fine_and_coarse_paths_converge_linearly() {
        // Strong error between a fine path and the coarse path on the same
        // Brownian stream is O(dt) for the globally Lipschitz linear model.
        let m = builtin_model("linear", &[-1.0, 0.8]).unwrap();
        let opts = SolverOptions::default();
        let t_end = 1.0;
        let fine_dt = 1.0 / 1024.0;
        let mut err = Vec::new();
        for m_factor in [8u64, 32] {
            let coarse_dt = fine_dt * m_factor as f64;
            let p_fine = params(1.0, 1.0, fine_dt);
            let p_coarse = params(1.0, 1.0, coarse_dt);
            let mut total = 0.0;
            let n = 400;
            for i in 0..n {
                let mut sf = IncrementStream::new(5, i, fine_dt);
                let xf = Stepper::new(&m, p_fine, Scheme::ThetaSigma, opts)
                    .unwrap()
                    .simulate(1.0, t_end, &mut sf, false)
                    .unwrap()
                    .terminal_state;
                let mut sc = IncrementStream::new(5, i, fine_dt).coarsen(m_factor);
                let xc = Stepper::new(&m, p_coarse, Scheme::ThetaSigma, opts)
                    .unwrap()
                    .simulate(1.0, t_end, &mut sc, false)
                    .unwrap()
                    .terminal_state;
                total += (xf - xc).abs();
            }
            err.push(total / n as f64);
        }
        let ratio = err[1] / err[0];
        // dt grows 4x; first-order coupling puts the ratio near 4.
        assert!(
            (2.0..8.0).contains(&ratio),
            "errors {err:?} gave ratio {ratio}"
        );
    }
}
