//! Closed-form transform functions mapping each field mode onto a
//! non-singular two-dimensional harmonic oscillator:
//!
//! ```text
//! gamma(eta) = -sqrt(1 + k^2 eta^2) / (k eta)
//! beta(eta)  = -1 / eta
//! alpha(eta) = log gamma(eta) + alpha0
//! omega      = k
//! ```
//!
//! together with the residuals of the three ODE conditions they must satisfy.
//! The residuals are evaluated in double-double arithmetic: near `eta -> 0-`
//! the individual terms of the third condition grow like `1/eta^2` while their
//! sum vanishes, and plain f64 evaluation would leave `~1e-16 / eta^2` of
//! rounding noise.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dd::DoubleDouble as Dd;
use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    k: f64,
    omega: f64,
    alpha0: f64,
}

/// Residuals of the three conditions on `(alpha, beta, gamma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeResiduals {
    /// `alpha' - gamma'/gamma`
    pub r1: f64,
    /// `gamma'/gamma + beta/gamma^2 + 1/eta`
    pub r2: f64,
    /// `-beta' + k^2 gamma^2 - beta^2/gamma^2 - omega^2/gamma^2`
    pub r3: f64,
}

impl OdeResiduals {
    pub fn max_abs(&self) -> f64 {
        self.r1.abs().max(self.r2.abs()).max(self.r3.abs())
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta < 0.0) {
        return Err(domain("eta", eta, "eta < 0"));
    }
    Ok(())
}

impl TransformParams {
    /// Parameters for mode `k` with `omega = k` and `alpha0 = 0`.
    pub fn new(k: f64) -> Result<Self> {
        if k == 0.0 {
            return Err(Error::DegenerateMode);
        }
        if !(k.is_finite() && k > 0.0) {
            return Err(domain("k", k, "k > 0"));
        }
        Ok(Self {
            k,
            omega: k,
            alpha0: 0.0,
        })
    }

    pub fn with_alpha0(mut self, alpha0: f64) -> Self {
        self.alpha0 = alpha0;
        self
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn gamma(&self, eta: f64) -> Result<f64> {
        check_eta(eta)?;
        Ok(-(self.k * eta).hypot(1.0) / (self.k * eta))
    }

    pub fn alpha(&self, eta: f64) -> Result<f64> {
        Ok(self.gamma(eta)?.ln() + self.alpha0)
    }

    pub fn beta(&self, eta: f64) -> Result<f64> {
        beta(eta)
    }

    /// All three residuals at `eta`, with derivatives taken analytically.
    ///
    /// `alpha'` uses the expanded form `k^2 eta/(1+k^2 eta^2) - 1/eta`, which
    /// is not literally `gamma'/gamma`, so `r1` is a genuine check.
    pub fn ode_residuals(&self, eta: f64) -> Result<OdeResiduals> {
        check_eta(eta)?;
        let k = Dd::new(self.k);
        let omega = Dd::new(self.omega);
        let eta = Dd::new(eta);

        let u = k * eta;
        let one_plus_u2 = Dd::ONE + u.sqr();
        let root = one_plus_u2.sqrt();

        let gamma = -(root / u);
        let gamma_prime = Dd::ONE / (k * eta.sqr() * root);
        let beta = -(Dd::ONE / eta);
        let beta_prime = Dd::ONE / eta.sqr();
        let alpha_prime = k * u / one_plus_u2 - Dd::ONE / eta;

        let g2 = gamma.sqr();
        let log_deriv = gamma_prime / gamma;
        let r1 = alpha_prime - log_deriv;
        let r2 = log_deriv + beta / g2 + Dd::ONE / eta;
        let r3 = -beta_prime + k.sqr() * g2 - beta.sqr() / g2 - omega.sqr() / g2;
        Ok(OdeResiduals {
            r1: r1.to_f64(),
            r2: r2.to_f64(),
            r3: r3.to_f64(),
        })
    }

    /// `Phi(z) = e^{alpha} e^{i beta |z|^2} Psi(gamma z)`, given the value
    /// `psi_value = Psi(gamma z, eta)`.
    pub fn phase_rescale_forward(
        &self,
        psi_value: Complex64,
        z: Complex64,
        eta: f64,
    ) -> Result<Complex64> {
        let alpha = self.alpha(eta)?;
        let beta = beta(eta)?;
        Ok(psi_value * Complex64::from_polar(alpha.exp(), beta * z.norm_sqr()))
    }

    /// Inverse of [`Self::phase_rescale_forward`]: recovers `Psi(gamma z)`.
    pub fn phase_rescale_inverse(
        &self,
        phi_value: Complex64,
        z: Complex64,
        eta: f64,
    ) -> Result<Complex64> {
        let alpha = self.alpha(eta)?;
        let beta = beta(eta)?;
        Ok(phi_value * Complex64::from_polar((-alpha).exp(), -beta * z.norm_sqr()))
    }
}

/// `beta(eta) = -1/eta`.
pub fn beta(eta: f64) -> Result<f64> {
    check_eta(eta)?;
    Ok(-1.0 / eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn gamma_at_horizon_crossing() {
        for &k in &[0.01, 1.0, 42.0] {
            let p = TransformParams::new(k).unwrap();
            assert_relative_eq!(
                p.gamma(-1.0 / k).unwrap(),
                2f64.sqrt(),
                max_relative = 1e-15
            );
            assert_relative_eq!(
                p.alpha(-1.0 / k).unwrap(),
                0.5 * 2f64.ln(),
                max_relative = 1e-15
            );
        }
        assert_relative_eq!(0.5 * 2f64.ln(), 0.346_573_6, epsilon = 1e-7);
    }

    #[test]
    fn gamma_limits() {
        let p = TransformParams::new(1.0).unwrap();
        let far = p.gamma(-1e6).unwrap();
        assert!(far > 1.0 && far - 1.0 < 1e-11);
        assert!(p.alpha(-1e6).unwrap().abs() < 1e-11);
        let eta = -1e-8;
        assert_relative_eq!(eta * p.gamma(eta).unwrap(), -1.0, max_relative = 1e-15);
    }

    #[test]
    fn beta_values() {
        assert_eq!(beta(-0.5).unwrap(), 2.0);
        assert_eq!(beta(-2.0).unwrap(), 0.5);
        assert!(beta(0.0).is_err());
        for i in 1..=100 {
            let eta = -(i as f64) * 0.37;
            assert_relative_eq!(beta(eta).unwrap() * eta, -1.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn domain_errors() {
        let p = TransformParams::new(1.0).unwrap();
        assert!(p.gamma(0.0).is_err());
        assert!(p.alpha(1.0).is_err());
        assert!(p.ode_residuals(0.0).is_err());
        assert!(matches!(
            TransformParams::new(0.0),
            Err(Error::DegenerateMode)
        ));
    }

    #[test]
    fn residuals_vanish_at_unit_point() {
        let r = TransformParams::new(1.0)
            .unwrap()
            .ode_residuals(-1.0)
            .unwrap();
        assert!(r.max_abs() < 1e-12, "{r:?}");
    }

    /// Finite-difference oracle: the conditions hold with numerically
    /// differentiated closed forms, up to differencing error.
    #[test]
    fn residuals_with_finite_differences() {
        for &(eta, k) in &[(-1.0f64, 1.0f64), (-0.3, 2.0), (-4.0, 0.5), (-0.05, 10.0)] {
            let p = TransformParams::new(k).unwrap();
            let h = 1e-5 * eta.abs();
            let d = |f: &dyn Fn(f64) -> f64| (f(eta + h) - f(eta - h)) / (2.0 * h);
            let gamma = p.gamma(eta).unwrap();
            let gp = d(&|e| p.gamma(e).unwrap());
            let ap = d(&|e| p.alpha(e).unwrap());
            let bp = d(&|e| beta(e).unwrap());
            let b = beta(eta).unwrap();
            let scale = 1.0 / (eta * eta) + k * k * gamma * gamma;
            assert!((ap - gp / gamma).abs() < 1e-8 / eta.abs());
            assert!((gp / gamma + b / (gamma * gamma) + 1.0 / eta).abs() < 1e-8 / eta.abs());
            let r3 =
                -bp + k * k * gamma * gamma - b * b / (gamma * gamma) - k * k / (gamma * gamma);
            assert!(r3.abs() < 1e-7 * scale, "eta={eta} k={k} r3={r3}");
            assert_relative_eq!(bp, 1.0 / (eta * eta), max_relative = 1e-8);
        }
    }

    #[test]
    fn alpha0_shifts_normalization_only() {
        let p = TransformParams::new(1.0).unwrap().with_alpha0(0.25);
        let eta = -0.7;
        assert_relative_eq!(
            p.alpha(eta).unwrap() - TransformParams::new(1.0).unwrap().alpha(eta).unwrap(),
            0.25
        );
        assert!(p.ode_residuals(eta).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn forward_at_origin() {
        let p = TransformParams::new(1.3).unwrap();
        let eta = -0.8;
        let v = p
            .phase_rescale_forward(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), eta)
            .unwrap();
        assert_relative_eq!(v.re, p.alpha(eta).unwrap().exp(), max_relative = 1e-15);
        assert_eq!(v.im, 0.0);
    }

    proptest! {
        #[test]
        fn positivity(eta in -100.0f64..-1e-6, k in 0.01f64..100.0) {
            let p = TransformParams::new(k).unwrap();
            prop_assert!(p.gamma(eta).unwrap() > 0.0);
            prop_assert!(beta(eta).unwrap() > 0.0);
        }

        #[test]
        fn residuals_vanish(eta in -100.0f64..-1e-4, k in 0.01f64..100.0) {
            let r = TransformParams::new(k).unwrap().ode_residuals(eta).unwrap();
            prop_assert!(r.max_abs() < 1e-9, "{:?}", r);
        }

        #[test]
        fn forward_inverse(
            re in -3.0f64..3.0, im in -3.0f64..3.0, zr in -4.0f64..4.0, zi in -4.0f64..4.0,
            eta in -10.0f64..-1e-3, k in 0.1f64..10.0,
        ) {
            let p = TransformParams::new(k).unwrap();
            let psi = Complex64::new(re, im);
            let z = Complex64::new(zr, zi);
            let phi = p.phase_rescale_forward(psi, z, eta).unwrap();
            prop_assert!((phi.norm() - p.alpha(eta).unwrap().exp() * psi.norm()).abs() <= 1e-12 * phi.norm().max(1e-300));
            let back = p.phase_rescale_inverse(phi, z, eta).unwrap();
            prop_assert!((back - psi).norm() <= 1e-12 * psi.norm().max(1e-300));
        }
    }
}
