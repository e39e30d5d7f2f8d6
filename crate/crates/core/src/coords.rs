//! Time coordinates (cosmic `t`, conformal `eta`, mode time `tau_k`) and the
//! three field variables of a single mode (`phi_k`, `y_k = e^{Ht} phi_k`,
//! `z_k = y_k / gamma`).
//!
//! Conformal time is the working clock everywhere in this crate; `t` and
//! `tau_k` are views of it.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::transform::TransformParams;

/// De Sitter background with Hubble rate `H > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cosmology {
    hubble: f64,
}

impl Cosmology {
    pub fn new(hubble: f64) -> Result<Self> {
        if !(hubble.is_finite() && hubble > 0.0) {
            return Err(domain("H", hubble, "H > 0"));
        }
        Ok(Self { hubble })
    }

    pub fn hubble(&self) -> f64 {
        self.hubble
    }
}

impl Default for Cosmology {
    fn default() -> Self {
        Self { hubble: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeCoordinate {
    Cosmic,
    Conformal,
    ModeTau,
}

/// A time value tagged with the coordinate it is expressed in. Mode time
/// carries the wave number it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    coordinate: TimeCoordinate,
    value: f64,
    k: Option<f64>,
}

impl TimePoint {
    pub fn cosmic(t: f64) -> Self {
        Self {
            coordinate: TimeCoordinate::Cosmic,
            value: t,
            k: None,
        }
    }

    pub fn conformal(eta: f64) -> Result<Self> {
        if !(eta < 0.0) {
            return Err(domain("eta", eta, "eta < 0"));
        }
        Ok(Self {
            coordinate: TimeCoordinate::Conformal,
            value: eta,
            k: None,
        })
    }

    pub fn mode_tau(tau: f64, k: f64) -> Result<Self> {
        check_k(k)?;
        if !(tau < 0.0) {
            return Err(domain("tau", tau, "tau < 0 on the expanding patch"));
        }
        Ok(Self {
            coordinate: TimeCoordinate::ModeTau,
            value: tau,
            k: Some(k),
        })
    }

    pub fn coordinate(&self) -> TimeCoordinate {
        self.coordinate
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn k(&self) -> Option<f64> {
        self.k
    }

    /// The conformal time of this point.
    pub fn eta(&self, cosmo: &Cosmology) -> f64 {
        match self.coordinate {
            TimeCoordinate::Cosmic => t_to_eta(self.value, cosmo),
            TimeCoordinate::Conformal => self.value,
            TimeCoordinate::ModeTau => eta_of_tau(self.value, self.k.unwrap_or(1.0)),
        }
    }

    /// Re-express in another coordinate. `k` is required for mode time.
    pub fn to(&self, target: TimeCoordinate, cosmo: &Cosmology, k: Option<f64>) -> Result<Self> {
        let eta = self.eta(cosmo);
        match target {
            TimeCoordinate::Cosmic => Ok(Self::cosmic(eta_to_t(eta, cosmo)?)),
            TimeCoordinate::Conformal => Self::conformal(eta),
            TimeCoordinate::ModeTau => {
                let k = k.or(self.k).ok_or(Error::Config(
                    "mode time requires a wave number".to_string(),
                ))?;
                Self::mode_tau(tau_of_eta(eta, k)?, k)
            }
        }
    }
}

fn check_k(k: f64) -> Result<()> {
    if k == 0.0 {
        return Err(Error::DegenerateMode);
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(domain("k", k, "k > 0"));
    }
    Ok(())
}

/// `eta = -e^{-Ht} / H`.
pub fn t_to_eta(t: f64, cosmo: &Cosmology) -> f64 {
    let h = cosmo.hubble;
    -(-h * t).exp() / h
}

/// `t = -log(-H eta) / H`, defined for `eta < 0` only.
pub fn eta_to_t(eta: f64, cosmo: &Cosmology) -> Result<f64> {
    if !(eta < 0.0) {
        return Err(domain("eta", eta, "eta < 0"));
    }
    let h = cosmo.hubble;
    Ok(-(-h * eta).ln() / h)
}

/// `u - atan(u)`, accurate to a few ulps for all `u`.
///
/// For small `u` the two terms cancel to `u^3/3`, so the alternating series is
/// summed instead.
pub(crate) fn reduced_tau(u: f64) -> f64 {
    if u.abs() < 0.5 {
        let u2 = u * u;
        let mut power = u * u2;
        let mut sum = 0.0;
        let mut terms = [0.0; 30];
        for (n, term) in terms.iter_mut().enumerate() {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            *term = sign * power / (2 * n + 3) as f64;
            power *= u2;
            if power.abs() < 1e-40 * u.abs().powi(3) {
                break;
            }
        }
        // smallest terms first
        for term in terms.iter().rev() {
            sum += term;
        }
        sum
    } else {
        u - u.atan()
    }
}

/// Mode time `tau = eta - atan(k eta) / k` for any real `eta`, i.e. including
/// the smooth continuation past `eta = 0`.
pub fn mode_time(eta: f64, k: f64) -> f64 {
    reduced_tau(k * eta) / k
}

/// Mode time on the expanding patch.
pub fn tau_of_eta(eta: f64, k: f64) -> Result<f64> {
    check_k(k)?;
    if !(eta < 0.0) {
        return Err(domain("eta", eta, "eta < 0"));
    }
    Ok(mode_time(eta, k))
}

/// `d tau / d eta = k^2 eta^2 / (1 + k^2 eta^2) = gamma^{-2}`.
pub fn dtau_deta(eta: f64, k: f64) -> f64 {
    let u2 = (k * eta) * (k * eta);
    u2 / (1.0 + u2)
}

/// Inverse of [`mode_time`]: the conformal time at which mode `k` reaches
/// `tau`. Works for either sign of `tau`.
pub fn eta_of_tau(tau: f64, k: f64) -> f64 {
    let s = k * tau;
    if s == 0.0 {
        return 0.0;
    }
    solve_reduced(s.abs()).copysign(s) / k
}

/// Solves `u - atan(u) = s` for `u > 0`, given `s > 0`.
///
/// The left side is increasing and convex on `u > 0`, so Newton iteration
/// started above the root converges monotonically from the right.
fn solve_reduced(s: f64) -> f64 {
    let cube = (3.0 * s).cbrt();
    let mut u = {
        let guess = 1.2 * cube;
        if reduced_tau(guess) >= s {
            guess
        } else {
            s + FRAC_PI_2
        }
    };
    for _ in 0..200 {
        let f = reduced_tau(u) - s;
        let u2 = u * u;
        let fp = u2 / (1.0 + u2);
        let step = f / fp;
        let next = u - step;
        // stay right of the root; overshoot only happens through rounding
        let next = if next <= 0.0 { 0.5 * u } else { next };
        if (next - u).abs() <= 1e-16 * u {
            return next;
        }
        u = next;
    }
    u
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldRepr {
    /// The Fourier mode `phi_k` itself.
    Phi,
    /// `y_k = e^{Ht} phi_k = -phi_k / (H eta)`.
    Y,
    /// `z_k = y_k / gamma(eta)`.
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeVariable {
    pub repr: FieldRepr,
    pub value: Complex64,
    pub k: f64,
}

impl ModeVariable {
    pub fn new(repr: FieldRepr, value: Complex64, k: f64) -> Self {
        Self { repr, value, k }
    }
}

/// Converts a mode variable between the `phi`, `y` and `z` representations
/// at conformal time `eta`.
pub fn convert_field(
    v: ModeVariable,
    target: FieldRepr,
    eta: f64,
    cosmo: &Cosmology,
) -> Result<ModeVariable> {
    if !(eta < 0.0) {
        return Err(domain("eta", eta, "eta < 0"));
    }
    if !(v.k >= 0.0) {
        return Err(domain("k", v.k, "k >= 0"));
    }
    if v.repr == target {
        return Ok(v);
    }
    let needs_gamma = v.repr == FieldRepr::Z || target == FieldRepr::Z;
    if needs_gamma && v.k == 0.0 {
        return Err(Error::DegenerateMode);
    }
    let h = cosmo.hubble();
    // y = phi_to_y * phi
    let phi_to_y = -1.0 / (h * eta);
    let gamma = if needs_gamma {
        TransformParams::new(v.k)?.gamma(eta)?
    } else {
        1.0
    };
    let y = match v.repr {
        FieldRepr::Phi => v.value * phi_to_y,
        FieldRepr::Y => v.value,
        FieldRepr::Z => v.value * gamma,
    };
    let value = match target {
        FieldRepr::Phi => y / phi_to_y,
        FieldRepr::Y => y,
        FieldRepr::Z => y / gamma,
    };
    Ok(ModeVariable::new(target, value, v.k))
}

/// `phi_k = z * H sqrt(1 + k^2 eta^2) / k`, the direct composition of the
/// conversions above. Also defined past `eta = 0`.
pub fn phi_from_z(z: Complex64, eta: f64, k: f64, cosmo: &Cosmology) -> Complex64 {
    z * (cosmo.hubble() * envelope(eta, k) / k)
}

/// The freezing envelope `sqrt(1 + k^2 eta^2)`.
pub fn envelope(eta: f64, k: f64) -> f64 {
    (k * eta).hypot(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit() -> Cosmology {
        Cosmology::new(1.0).unwrap()
    }

    #[test]
    fn eta_at_origin() {
        assert_eq!(t_to_eta(0.0, &unit()), -1.0);
        assert_eq!(eta_to_t(-1.0, &unit()).unwrap(), 0.0);
        let c = Cosmology::new(2.5).unwrap();
        assert_relative_eq!(eta_to_t(-1.0 / 2.5, &c).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn late_times_approach_zero_from_below() {
        let eta = t_to_eta(40.0, &unit());
        assert!(eta < 0.0 && eta > -1e-17);
    }

    #[test]
    fn inverse_log_form() {
        for &h in &[0.3, 1.0, 7.0] {
            let c = Cosmology::new(h).unwrap();
            for &x in &[1e-3, 0.5, 2.0, 40.0] {
                let t = -(h * x).ln() / h;
                assert_relative_eq!(t_to_eta(t, &c), -x, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn rejects_nonnegative_eta() {
        assert!(eta_to_t(0.0, &unit()).is_err());
        assert!(eta_to_t(1.0, &unit()).is_err());
        assert!(TimePoint::conformal(0.0).is_err());
        assert!(Cosmology::new(0.0).is_err());
        assert!(Cosmology::new(-1.0).is_err());
    }

    #[test]
    fn tau_direct_value() {
        assert_relative_eq!(
            tau_of_eta(-1.0, 1.0).unwrap(),
            -1.0 + std::f64::consts::FRAC_PI_4,
            max_relative = 1e-15
        );
    }

    #[test]
    fn zero_mode_is_degenerate() {
        assert!(matches!(tau_of_eta(-1.0, 0.0), Err(Error::DegenerateMode)));
        let v = ModeVariable::new(FieldRepr::Phi, Complex64::new(1.0, 0.0), 0.0);
        assert!(matches!(
            convert_field(v, FieldRepr::Z, -1.0, &unit()),
            Err(Error::DegenerateMode)
        ));
        // phi <-> y is fine for k = 0
        assert!(convert_field(v, FieldRepr::Y, -1.0, &unit()).is_ok());
    }

    /// Independent oracle: tau(eta) = int_0^eta k^2 s^2/(1+k^2 s^2) ds by
    /// composite Gauss-Legendre quadrature. No cancellation is involved.
    fn tau_by_quadrature(eta: f64, k: f64) -> f64 {
        const NODES: [f64; 5] = [
            0.0,
            -0.538_469_310_105_683_1,
            0.538_469_310_105_683_1,
            -0.906_179_845_938_664,
            0.906_179_845_938_664,
        ];
        const WEIGHTS: [f64; 5] = [
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_5,
            0.478_628_670_499_366_5,
            0.236_926_885_056_189_1,
            0.236_926_885_056_189_1,
        ];
        let panels = 400;
        let width = eta / panels as f64;
        let mut sum = 0.0;
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * width;
            for (x, w) in NODES.iter().zip(WEIGHTS) {
                let s = mid + 0.5 * width * x;
                let u2 = (k * s) * (k * s);
                sum += w * 0.5 * width * u2 / (1.0 + u2);
            }
        }
        sum
    }

    #[test]
    fn tau_near_zero_matches_quadrature_oracle() {
        let eta = -1e-3;
        let k = 1.0;
        let oracle = tau_by_quadrature(eta, k);
        let tau = tau_of_eta(eta, k).unwrap();
        assert_relative_eq!(tau, oracle, max_relative = 1e-13);
        // leading Taylor term k^2 eta^3 / 3
        assert_relative_eq!(tau, k * k * eta.powi(3) / 3.0, max_relative = 1e-6);
    }

    #[test]
    fn tau_matches_quadrature_across_regimes() {
        for &(eta, k) in &[
            (-0.3, 1.0),
            (-0.6, 1.0),
            (-5.0, 0.1),
            (-2.0, 10.0),
            (-1e-6, 3.0),
        ] {
            assert_relative_eq!(
                tau_of_eta(eta, k).unwrap(),
                tau_by_quadrature(eta, k),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn derivative_at_horizon_crossing() {
        for &k in &[0.01, 1.0, 30.0] {
            assert_relative_eq!(dtau_deta(-1.0 / k, k), 0.5, max_relative = 1e-15);
        }
        assert!(dtau_deta(-1e-9, 1.0) > 0.0 && dtau_deta(-1e-9, 1.0) < 1e-17);
    }

    #[test]
    fn derivative_matches_central_difference() {
        let mut rng = 12345_u64;
        let mut next = || {
            rng = rng
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (rng >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..50 {
            let eta = -(0.05 + 5.0 * next());
            let k = 0.1 + 5.0 * next();
            let h = 1e-6;
            let fd = (mode_time(eta + h, k) - mode_time(eta - h, k)) / (2.0 * h);
            assert!((fd - dtau_deta(eta, k)).abs() < 1e-8, "eta={eta} k={k}");
        }
    }

    #[test]
    fn phi_to_z_at_horizon_crossing() {
        let (k, h, c) = (2.0, 1.5, Complex64::new(0.7, -0.2));
        let cosmo = Cosmology::new(h).unwrap();
        let z = convert_field(
            ModeVariable::new(FieldRepr::Phi, c, k),
            FieldRepr::Z,
            -1.0 / k,
            &cosmo,
        )
        .unwrap();
        let expected = c * (k / (h * 2f64.sqrt()));
        assert_relative_eq!(z.value.re, expected.re, max_relative = 1e-14);
        assert_relative_eq!(z.value.im, expected.im, max_relative = 1e-14);
    }

    #[test]
    fn z_tends_to_k_phi_over_h() {
        let (k, h) = (3.0, 0.5);
        let cosmo = Cosmology::new(h).unwrap();
        let phi = Complex64::new(0.4, 0.9);
        let eta = -1e-7;
        let z = convert_field(
            ModeVariable::new(FieldRepr::Phi, phi, k),
            FieldRepr::Z,
            eta,
            &cosmo,
        )
        .unwrap()
        .value;
        let limit = phi * (k / h);
        assert!((z - limit).norm() / limit.norm() < 1e-12);
    }

    #[test]
    fn time_point_views() {
        let c = Cosmology::new(2.0).unwrap();
        let p = TimePoint::cosmic(0.7);
        let eta = p.to(TimeCoordinate::Conformal, &c, None).unwrap();
        let tau = p.to(TimeCoordinate::ModeTau, &c, Some(1.3)).unwrap();
        assert_relative_eq!(eta.value(), t_to_eta(0.7, &c));
        assert_relative_eq!(
            tau.value(),
            mode_time(eta.value(), 1.3),
            max_relative = 1e-15
        );
        let back = tau.to(TimeCoordinate::Cosmic, &c, None).unwrap();
        assert_relative_eq!(back.value(), 0.7, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn eta_round_trip(eta in -10.0f64..-1e-6, h in 0.1f64..10.0) {
            let c = Cosmology::new(h).unwrap();
            let back = t_to_eta(eta_to_t(eta, &c).unwrap(), &c);
            prop_assert!(((back - eta) / eta).abs() < 1e-12);
        }

        #[test]
        fn t_round_trip(x in -20.0f64..40.0, h in 0.1f64..10.0) {
            let c = Cosmology::new(h).unwrap();
            let t = x / h;
            let back = eta_to_t(t_to_eta(t, &c), &c).unwrap();
            prop_assert!((back - t).abs() <= 1e-10 * t.abs().max(1.0 / h));
        }

        #[test]
        fn tau_monotone_and_negative(a in -50.0f64..-1e-6, b in -50.0f64..-1e-6, k in 0.01f64..100.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(lo < hi);
            let (tl, th) = (tau_of_eta(lo, k).unwrap(), tau_of_eta(hi, k).unwrap());
            prop_assert!(tl <= th);
            prop_assert!(th < 0.0);
            let d = dtau_deta(lo, k);
            prop_assert!(d > 0.0 && d < 1.0);
        }

        #[test]
        fn tau_inversion(eta in -100.0f64..100.0, k in 0.01f64..100.0) {
            prop_assume!(eta != 0.0);
            let tau = mode_time(eta, k);
            prop_assume!(tau != 0.0);
            let back = eta_of_tau(tau, k);
            prop_assert!(((back - eta) / eta).abs() < 1e-10, "eta={} back={}", eta, back);
        }

        #[test]
        fn field_conversions_commute(
            re in -5.0f64..5.0, im in -5.0f64..5.0,
            eta in -20.0f64..-1e-5, k in 0.01f64..50.0, h in 0.2f64..5.0,
        ) {
            let c = Cosmology::new(h).unwrap();
            let phi = ModeVariable::new(FieldRepr::Phi, Complex64::new(re, im), k);
            let y = convert_field(phi, FieldRepr::Y, eta, &c).unwrap();
            let z_via_y = convert_field(y, FieldRepr::Z, eta, &c).unwrap();
            let z_direct = convert_field(phi, FieldRepr::Z, eta, &c).unwrap();
            let back = convert_field(
                convert_field(z_via_y, FieldRepr::Y, eta, &c).unwrap(), FieldRepr::Phi, eta, &c,
            ).unwrap();
            let scale = phi.value.norm().max(1e-300);
            prop_assert!((back.value - phi.value).norm() <= 1e-10 * scale);
            prop_assert!((z_via_y.value - z_direct.value).norm() <= 1e-10 * z_direct.value.norm().max(1e-300));
            let z_closed = phi.value / (c.hubble() * envelope(eta, k) / k);
            prop_assert!((z_closed - z_direct.value).norm() <= 1e-10 * z_direct.value.norm().max(1e-300));
        }
    }
}
