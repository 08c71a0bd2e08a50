//! Scalar SDE models: coefficients, their domains, certified assumption
//! constants, and a numerical audit of the structural assumptions.
//!
//! A model for `dx = f(x) dt + g(x) dw` carries `f`, `g`, `g'` and the
//! Milstein operator `L1g = g g'` as callable coefficients, together with the
//! constants used by step-size restrictions and moment bounds:
//!
//! * one-sided Lipschitz: `(x-y)(f(x)-f(y)) <= K (x-y)^2` on the model domain,
//! * monotone-type growth: the scheme's per-step dissipation expression is
//!   bounded by `a + b x^2`,
//! * polynomial growth: `|f| v |g| <= H (1 + |x|^h)`.
//!
//! Half-line models treat evaluation at `x < 0` as a contract violation and
//! return a domain error; no coefficient ever silently produces a NaN from a
//! fractional power of a negative number.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::scheme::SchemeParams;

/// Coefficient function of the state.
pub type CoefFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    WholeLine,
    NonNegativeHalfLine,
}

impl Domain {
    pub fn contains(&self, x: f64) -> bool {
        match self {
            Domain::WholeLine => x.is_finite(),
            Domain::NonNegativeHalfLine => x.is_finite() && x >= 0.0,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::WholeLine => write!(f, "whole-line"),
            Domain::NonNegativeHalfLine => write!(f, "non-negative-half-line"),
        }
    }
}

/// Constants certifying the structural assumptions on the model's domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionConstants {
    /// One-sided Lipschitz constant `K` of the drift.
    pub one_sided_lipschitz_k: f64,
    /// Constant `a` of the monotone-type bound `... <= a + b x^2`.
    pub monotone_growth_a: f64,
    /// Constant `b` of the monotone-type bound.
    pub monotone_growth_b: f64,
    /// Polynomial growth exponent `h >= 1`.
    pub poly_growth_h: f64,
    /// Polynomial growth coefficient `H > 0`.
    pub poly_growth_coeff: f64,
    /// Domain on which the constants are certified.
    pub domain: Domain,
}

impl AssumptionConstants {
    fn validate(&self) -> Result<(), ModelError> {
        let all_finite = self.one_sided_lipschitz_k.is_finite()
            && self.monotone_growth_a.is_finite()
            && self.monotone_growth_b.is_finite()
            && self.poly_growth_h.is_finite()
            && self.poly_growth_coeff.is_finite();
        if !all_finite || self.poly_growth_h < 1.0 || self.poly_growth_coeff <= 0.0 {
            return Err(ModelError::BadConstants);
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("model `{model}` expects {expected} parameters, got {got}")]
    ParamCount {
        model: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("model `{model}`: parameter {param} = {value} out of range ({requirement})")]
    ParamRange {
        model: &'static str,
        param: &'static str,
        value: f64,
        requirement: &'static str,
    },
    #[error("model `{model}`: {coefficient}({x}) evaluated outside domain ({domain})")]
    DomainViolation {
        model: String,
        coefficient: &'static str,
        x: f64,
        domain: Domain,
    },
    #[error("assumption constants must be finite with h >= 1, H > 0")]
    BadConstants,
}

/// A scalar SDE `dx = f(x) dt + g(x) dw` with its Milstein operator and
/// certified assumption constants.
///
/// Immutable after construction and cheap to clone (coefficients are shared),
/// so models can be handed to any number of concurrent path workers.
#[derive(Clone)]
pub struct SdeModel {
    name: String,
    drift: CoefFn,
    diffusion: CoefFn,
    diffusion_derivative: CoefFn,
    l1g: CoefFn,
    drift_at_zero: f64,
    diffusion_at_zero: f64,
    domain: Domain,
    constants: AssumptionConstants,
    // Coefficients [c0, c1, c2] of f and L1g when they are polynomials of
    // degree <= 2; lets the implicit solver take a closed-form path.
    drift_poly: Option<[f64; 3]>,
    l1g_poly: Option<[f64; 3]>,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

impl SdeModel {
    /// Builds a model from raw coefficient functions.
    ///
    /// `drift_at_zero` and `diffusion_at_zero` are evaluated here; zero is in
    /// the closure of both supported domains.
    pub fn new(
        name: impl Into<String>,
        domain: Domain,
        drift: CoefFn,
        diffusion: CoefFn,
        diffusion_derivative: CoefFn,
        l1g: CoefFn,
        constants: AssumptionConstants,
    ) -> Result<Self, ModelError> {
        constants.validate()?;
        let drift_at_zero = drift(0.0);
        let diffusion_at_zero = diffusion(0.0);
        Ok(Self {
            name: name.into(),
            drift,
            diffusion,
            diffusion_derivative,
            l1g,
            drift_at_zero,
            diffusion_at_zero,
            domain,
            constants,
            drift_poly: None,
            l1g_poly: None,
        })
    }

    /// Declares `f(x) = c0 + c1 x + c2 x^2`, enabling the closed-form solver.
    pub fn with_drift_poly(mut self, coeffs: [f64; 3]) -> Self {
        self.drift_poly = Some(coeffs);
        self
    }

    /// Declares `L1g(x) = c0 + c1 x + c2 x^2`, enabling the closed-form solver.
    pub fn with_l1g_poly(mut self, coeffs: [f64; 3]) -> Self {
        self.l1g_poly = Some(coeffs);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn constants(&self) -> &AssumptionConstants {
        &self.constants
    }

    pub fn drift_at_zero(&self) -> f64 {
        self.drift_at_zero
    }

    pub fn diffusion_at_zero(&self) -> f64 {
        self.diffusion_at_zero
    }

    pub fn drift_poly(&self) -> Option<[f64; 3]> {
        self.drift_poly
    }

    pub fn l1g_poly(&self) -> Option<[f64; 3]> {
        self.l1g_poly
    }

    fn check_domain(&self, coefficient: &'static str, x: f64) -> Result<(), ModelError> {
        if self.domain.contains(x) {
            Ok(())
        } else {
            Err(ModelError::DomainViolation {
                model: self.name.clone(),
                coefficient,
                x,
                domain: self.domain,
            })
        }
    }

    pub fn drift(&self, x: f64) -> Result<f64, ModelError> {
        self.check_domain("f", x)?;
        Ok((self.drift)(x))
    }

    pub fn diffusion(&self, x: f64) -> Result<f64, ModelError> {
        self.check_domain("g", x)?;
        Ok((self.diffusion)(x))
    }

    pub fn diffusion_derivative(&self, x: f64) -> Result<f64, ModelError> {
        self.check_domain("g'", x)?;
        Ok((self.diffusion_derivative)(x))
    }

    pub fn l1g(&self, x: f64) -> Result<f64, ModelError> {
        self.check_domain("L1g", x)?;
        Ok((self.l1g)(x))
    }

    /// `L1g(0)`; finite for every model with `g(0) = 0`.
    pub(crate) fn l1g_at_zero(&self) -> f64 {
        (self.l1g)(0.0)
    }

    /// Probe grid covering both the boundary and growth regimes of the domain:
    /// `{0} U {10^k : k = -4..1 step 0.25}`, mirrored for whole-line models.
    pub fn default_grid(&self) -> Vec<f64> {
        default_grid(self.domain)
    }
}

/// See [`SdeModel::default_grid`].
pub fn default_grid(domain: Domain) -> Vec<f64> {
    let mut grid = vec![0.0];
    let mut k = -16i32; // k/4 in -4..=1
    while k <= 4 {
        grid.push(10f64.powf(f64::from(k) / 4.0));
        k += 1;
    }
    if domain == Domain::WholeLine {
        let negatives: Vec<f64> = grid.iter().skip(1).map(|&x| -x).collect();
        grid.extend(negatives);
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid
}

fn require(
    ok: bool,
    model: &'static str,
    param: &'static str,
    value: f64,
    requirement: &'static str,
) -> Result<(), ModelError> {
    if ok {
        Ok(())
    } else {
        Err(ModelError::ParamRange {
            model,
            param,
            value,
            requirement,
        })
    }
}

fn expect_params(model: &'static str, params: &[f64], expected: usize) -> Result<(), ModelError> {
    if params.len() == expected {
        Ok(())
    } else {
        Err(ModelError::ParamCount {
            model,
            expected,
            got: params.len(),
        })
    }
}

/// Constructs a built-in model by name.
///
/// * `heston32(mu, alpha, beta)` — `dx = x(mu - alpha x) dt + beta x^{3/2} dw`
/// * `meanrev_power(alpha, mu, beta, p)` — `dx = alpha(mu - x) dt + beta x^p dw`, `p in [0.5, 1]`
/// * `linear(alpha, mu)` — `dx = alpha x dt + mu x dw`
/// * `cubic()` — `dx = -x^3 dt + x^2 dw`
/// * `meanrev_general(mu, q, p)` — `dx = (mu - x^q) dt + x^p dw`, `q > 0`, `p >= 0.5`
///
/// Construction is deterministic: identical inputs produce coefficient
/// functions that agree bit-exactly at every probe point.
pub fn builtin_model(name: &str, params: &[f64]) -> Result<SdeModel, ModelError> {
    match name {
        "heston32" => {
            expect_params("heston32", params, 3)?;
            let (mu, alpha, beta) = (params[0], params[1], params[2]);
            require(mu > 0.0, "heston32", "mu", mu, "mu > 0")?;
            require(alpha > 0.0, "heston32", "alpha", alpha, "alpha > 0")?;
            require(beta > 0.0, "heston32", "beta", beta, "beta > 0")?;
            let beta_sq = beta * beta;
            let model = SdeModel::new(
                "heston32",
                Domain::NonNegativeHalfLine,
                Arc::new(move |x| x * (mu - alpha * x)),
                Arc::new(move |x| beta * x * x.sqrt()),
                Arc::new(move |x| 1.5 * beta * x.sqrt()),
                Arc::new(move |x| 1.5 * beta_sq * x * x),
                AssumptionConstants {
                    // (x-y)(f(x)-f(y)) = (x-y)^2 (mu - alpha(x+y)) <= mu (x-y)^2 on R+.
                    one_sided_lipschitz_k: mu,
                    monotone_growth_a: 0.0, // estimated below
                    monotone_growth_b: 0.0,
                    poly_growth_h: 2.0,
                    poly_growth_coeff: mu + alpha + beta,
                    domain: Domain::NonNegativeHalfLine,
                },
            )?
            .with_drift_poly([0.0, mu, -alpha])
            .with_l1g_poly([0.0, 0.0, 1.5 * beta_sq]);
            Ok(with_estimated_growth(model))
        }
        "meanrev_power" => {
            expect_params("meanrev_power", params, 4)?;
            let (alpha, mu, beta, p) = (params[0], params[1], params[2], params[3]);
            require(alpha > 0.0, "meanrev_power", "alpha", alpha, "alpha > 0")?;
            require(mu > 0.0, "meanrev_power", "mu", mu, "mu > 0")?;
            require(beta > 0.0, "meanrev_power", "beta", beta, "beta > 0")?;
            require(
                (0.5..=1.0).contains(&p),
                "meanrev_power",
                "p",
                p,
                "0.5 <= p <= 1",
            )?;
            let beta_sq = beta * beta;
            let mut model = SdeModel::new(
                "meanrev_power",
                Domain::NonNegativeHalfLine,
                Arc::new(move |x| alpha * (mu - x)),
                Arc::new(move |x: f64| beta * x.powf(p)),
                Arc::new(move |x: f64| beta * p * x.powf(p - 1.0)),
                // L1g = p beta^2 x^{2p-1}; constant beta^2/2 when p = 0.5.
                Arc::new(move |x: f64| p * beta_sq * x.powf(2.0 * p - 1.0)),
                AssumptionConstants {
                    one_sided_lipschitz_k: -alpha,
                    monotone_growth_a: 0.0,
                    monotone_growth_b: 0.0,
                    poly_growth_h: 1.0,
                    poly_growth_coeff: (alpha * mu).max(alpha).max(beta),
                    domain: Domain::NonNegativeHalfLine,
                },
            )?
            .with_drift_poly([alpha * mu, -alpha, 0.0]);
            if p == 1.0 {
                model = model.with_l1g_poly([0.0, beta_sq, 0.0]);
            } else if p == 0.5 {
                model = model.with_l1g_poly([0.5 * beta_sq, 0.0, 0.0]);
            }
            Ok(with_estimated_growth(model))
        }
        "linear" => {
            expect_params("linear", params, 2)?;
            let (alpha, mu) = (params[0], params[1]);
            require(alpha.is_finite(), "linear", "alpha", alpha, "finite")?;
            require(mu.is_finite(), "linear", "mu", mu, "finite")?;
            let mu_sq = mu * mu;
            let model = SdeModel::new(
                "linear",
                Domain::WholeLine,
                Arc::new(move |x| alpha * x),
                Arc::new(move |x| mu * x),
                Arc::new(move |_| mu),
                Arc::new(move |x| mu_sq * x),
                AssumptionConstants {
                    one_sided_lipschitz_k: alpha,
                    monotone_growth_a: 0.0,
                    monotone_growth_b: 0.0,
                    poly_growth_h: 1.0,
                    poly_growth_coeff: alpha.abs().max(mu.abs()).max(1e-12),
                    domain: Domain::WholeLine,
                },
            )?
            .with_drift_poly([0.0, alpha, 0.0])
            .with_l1g_poly([0.0, mu_sq, 0.0]);
            Ok(with_estimated_growth(model))
        }
        "cubic" => {
            expect_params("cubic", params, 0)?;
            let model = SdeModel::new(
                "cubic",
                Domain::WholeLine,
                Arc::new(|x| -(x * x * x)),
                Arc::new(|x| x * x),
                Arc::new(|x| 2.0 * x),
                Arc::new(|x| 2.0 * x * x * x),
                AssumptionConstants {
                    // (x-y)(f(x)-f(y)) = -(x-y)^2 (x^2+xy+y^2) <= 0.
                    one_sided_lipschitz_k: 0.0,
                    monotone_growth_a: 0.0,
                    monotone_growth_b: 0.0,
                    poly_growth_h: 3.0,
                    poly_growth_coeff: 1.0,
                    domain: Domain::WholeLine,
                },
            )?;
            Ok(with_estimated_growth(model))
        }
        "meanrev_general" => {
            expect_params("meanrev_general", params, 3)?;
            let (mu, q, p) = (params[0], params[1], params[2]);
            require(mu > 0.0, "meanrev_general", "mu", mu, "mu > 0")?;
            require(q > 0.0, "meanrev_general", "q", q, "q > 0")?;
            require(p >= 0.5, "meanrev_general", "p", p, "p >= 0.5")?;
            let mut model = SdeModel::new(
                "meanrev_general",
                Domain::NonNegativeHalfLine,
                Arc::new(move |x: f64| mu - x.powf(q)),
                Arc::new(move |x: f64| x.powf(p)),
                Arc::new(move |x: f64| p * x.powf(p - 1.0)),
                Arc::new(move |x: f64| p * x.powf(2.0 * p - 1.0)),
                AssumptionConstants {
                    one_sided_lipschitz_k: 0.0,
                    monotone_growth_a: 0.0,
                    monotone_growth_b: 0.0,
                    poly_growth_h: q.max(p).max(1.0),
                    poly_growth_coeff: mu + 1.0,
                    domain: Domain::NonNegativeHalfLine,
                },
            )?;
            if q == 1.0 {
                model = model.with_drift_poly([mu, -1.0, 0.0]);
            } else if q == 2.0 {
                model = model.with_drift_poly([mu, 0.0, -1.0]);
            }
            if p == 1.0 {
                model = model.with_l1g_poly([0.0, 1.0, 0.0]);
            } else if p == 0.5 {
                model = model.with_l1g_poly([0.5, 0.0, 0.0]);
            }
            Ok(with_estimated_growth(model))
        }
        other => Err(ModelError::UnknownModel(other.to_string())),
    }
}

/// Monotone-type expression whose growth the constants `(a, b)` must bound:
///
/// ```text
/// 2 x f(x) + g(x)^2 + (1-2 theta) f(x)^2 dt + dt/2 L1g(x) (2 sigma f(x) + L1g(x))
/// ```
pub fn monotone_type_lhs(model: &SdeModel, scheme: &SchemeParams, x: f64) -> Result<f64, ModelError> {
    let f = model.drift(x)?;
    let g = model.diffusion(x)?;
    let l1g = model.l1g(x)?;
    let dt = scheme.dt();
    Ok(2.0 * x * f
        + g * g
        + (1.0 - 2.0 * scheme.theta()) * f * f * dt
        + 0.5 * dt * l1g * (2.0 * scheme.sigma() * f + l1g))
}

/// Ships `(a, b)` estimated by grid maximization for the double-implicit
/// scheme over `dt <= 1`: the expression is affine in `dt`, so its supremum on
/// that range is `u(x) + max(v(x), 0)` with `u` the `dt`-free part and `v` the
/// `dt`-coefficient; the estimate is `a = b = sup (.)^+ / (1 + x^2)` over the
/// default grid.
fn with_estimated_growth(mut model: SdeModel) -> SdeModel {
    let mut c: f64 = 0.0;
    for &x in &model.default_grid() {
        let f = (model.drift)(x);
        let g = (model.diffusion)(x);
        let l1g = (model.l1g)(x);
        let u = 2.0 * x * f + g * g;
        let v = -(f * f) + 0.5 * l1g * (2.0 * f + l1g);
        let bound = u + v.max(0.0);
        c = c.max(bound / (1.0 + x * x));
    }
    model.constants.monotone_growth_a = c;
    model.constants.monotone_growth_b = c;
    model
}

// ---------------------------------------------------------------------------
// Assumption audit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionKind {
    /// `(x-y)(f(x)-f(y)) <= K (x-y)^2`
    OneSidedLipschitz,
    /// `(x-y)(L1g(x)-L1g(y)) >= 0`
    MonotoneL1g,
    /// `|f| v |g| <= H (1 + |x|^h)`
    PolynomialGrowth,
    /// monotone-type expression `<= a + b x^2` at the audited scheme
    MonotoneType,
}

impl fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConditionKind::OneSidedLipschitz => "one-sided-lipschitz",
            ConditionKind::MonotoneL1g => "monotone-l1g",
            ConditionKind::PolynomialGrowth => "polynomial-growth",
            ConditionKind::MonotoneType => "monotone-type",
        };
        write!(f, "{s}")
    }
}

/// A grid pair (or point, `y = None`) violating one of the audited conditions,
/// with the margin by which it fails.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub condition: ConditionKind,
    pub x: f64,
    pub y: Option<f64>,
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct AuditReport {
    /// Empty means every sampled pair/point passed.
    pub violations: Vec<Violation>,
    pub pairs_checked: usize,
    pub points_checked: usize,
    /// Largest observed Lipschitz quotient `(x-y)(f(x)-f(y)) / (x-y)^2`.
    pub estimated_lipschitz_k: f64,
    /// Grid estimate of the monotone-type constants at the audited scheme.
    pub estimated_a: f64,
    pub estimated_b: f64,
    pub estimation_method: &'static str,
    pub scheme: SchemeParams,
}

/// Numerically falsifies the model's structural assumptions on a grid.
///
/// Pair conditions (one-sided Lipschitz, monotone `L1g`) are sampled over at
/// most `pair_budget` grid pairs, strided deterministically through the
/// lexicographic enumeration. Point conditions (polynomial growth, and the
/// monotone-type bound at the supplied scheme) are checked at every grid
/// point. An empty violation list is a pass.
pub fn audit_assumptions(
    model: &SdeModel,
    scheme: &SchemeParams,
    grid: &[f64],
    pair_budget: usize,
) -> Result<AuditReport, ModelError> {
    let budget = pair_budget.max(1);
    let k = model.constants.one_sided_lipschitz_k;
    let a = model.constants.monotone_growth_a;
    let b = model.constants.monotone_growth_b;
    let h = model.constants.poly_growth_h;
    let big_h = model.constants.poly_growth_coeff;

    let mut violations = Vec::new();
    let mut points_checked = 0usize;
    let mut estimated_k = f64::NEG_INFINITY;
    let mut growth_sup: f64 = 0.0;

    for &x in grid {
        let f = model.drift(x)?;
        let g = model.diffusion(x)?;
        points_checked += 1;

        let growth = f.abs().max(g.abs());
        let growth_bound = big_h * (1.0 + x.abs().powf(h));
        let growth_margin = growth - growth_bound;
        if growth_margin > tol(growth, growth_bound) {
            violations.push(Violation {
                condition: ConditionKind::PolynomialGrowth,
                x,
                y: None,
                margin: growth_margin,
            });
        }

        let lhs = monotone_type_lhs(model, scheme, x)?;
        let mono_bound = a + b * x * x;
        let mono_margin = lhs - mono_bound;
        if mono_margin > tol(lhs, mono_bound) {
            violations.push(Violation {
                condition: ConditionKind::MonotoneType,
                x,
                y: None,
                margin: mono_margin,
            });
        }
        growth_sup = growth_sup.max(lhs.max(0.0) / (1.0 + x * x));
    }

    let n = grid.len();
    let total_pairs = n * n.saturating_sub(1) / 2;
    let stride = total_pairs.div_ceil(budget).max(1);
    let mut pair_index = 0usize;
    let mut pairs_checked = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            if pair_index % stride == 0 {
                let (x, y) = (grid[i], grid[j]);
                let d = x - y;
                let d_sq = d * d;
                if d_sq > 0.0 {
                    let lhs = d * (model.drift(x)? - model.drift(y)?);
                    estimated_k = estimated_k.max(lhs / d_sq);
                    let bound = k * d_sq;
                    let margin = lhs - bound;
                    if margin > tol(lhs, bound) {
                        violations.push(Violation {
                            condition: ConditionKind::OneSidedLipschitz,
                            x,
                            y: Some(y),
                            margin,
                        });
                    }

                    let mono = d * (model.l1g(x)? - model.l1g(y)?);
                    if -mono > tol(mono, 0.0) {
                        violations.push(Violation {
                            condition: ConditionKind::MonotoneL1g,
                            x,
                            y: Some(y),
                            margin: -mono,
                        });
                    }
                }
                pairs_checked += 1;
            }
            pair_index += 1;
        }
    }

    Ok(AuditReport {
        violations,
        pairs_checked,
        points_checked,
        estimated_lipschitz_k: estimated_k,
        estimated_a: growth_sup,
        estimated_b: growth_sup,
        estimation_method: "a = b = sup (lhs)^+ / (1 + x^2) over grid",
        scheme: *scheme,
    })
}

// Floating-point slack for the strict audit inequalities: equality cases
// (e.g. a linear drift against its exact K) must not trip on rounding.
fn tol(lhs: f64, rhs: f64) -> f64 {
    1e-10 * (1.0 + lhs.abs() + rhs.abs())
}
