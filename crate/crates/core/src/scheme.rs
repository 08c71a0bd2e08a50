//! Scheme parameters: the `(theta, sigma, dt)` triple identifying one member
//! of the Milstein family.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error("theta = {0} outside [0, 1]")]
    ThetaRange(f64),
    #[error("sigma = {0} outside [0, 1]")]
    SigmaRange(f64),
    #[error("dt = {0} must be positive and finite")]
    BadDt(f64),
}

/// One member of the scheme family: drift implicitness `theta`, correction
/// implicitness `sigma`, and step size `dt`.
///
/// Construction validates the parameter ranges only. The model-dependent step
/// restriction `dt < (theta (K+1))^-1` is checked where a solver is actually
/// built, because it needs the model's one-sided Lipschitz constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeParams {
    theta: f64,
    sigma: f64,
    dt: f64,
}

impl SchemeParams {
    pub fn new(theta: f64, sigma: f64, dt: f64) -> Result<Self, SchemeError> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(SchemeError::ThetaRange(theta));
        }
        if !(0.0..=1.0).contains(&sigma) {
            return Err(SchemeError::SigmaRange(sigma));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SchemeError::BadDt(dt));
        }
        Ok(Self { theta, sigma, dt })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Same `(theta, sigma)` at a different step size.
    pub fn with_dt(&self, dt: f64) -> Result<Self, SchemeError> {
        Self::new(self.theta, self.sigma, dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_closed_unit_square() {
        for &(t, s) in &[(0.0, 0.0), (1.0, 1.0), (0.5, 1.0), (1.0, 0.0)] {
            assert!(SchemeParams::new(t, s, 0.1).is_ok());
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(matches!(
            SchemeParams::new(-0.1, 0.5, 0.1),
            Err(SchemeError::ThetaRange(_))
        ));
        assert!(matches!(
            SchemeParams::new(0.5, 1.5, 0.1),
            Err(SchemeError::SigmaRange(_))
        ));
        assert!(matches!(
            SchemeParams::new(0.5, 0.5, 0.0),
            Err(SchemeError::BadDt(_))
        ));
        assert!(matches!(
            SchemeParams::new(0.5, 0.5, f64::NAN),
            Err(SchemeError::BadDt(_))
        ));
    }
}
