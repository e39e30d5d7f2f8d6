//! The transformed single-mode wave function `Phi(z, tau)`.
//!
//! `Phi` obeys `i dPhi/dtau = -d^2 Phi/(dz* dz) + omega^2 |z|^2 Phi`, a
//! mass-2 oscillator on the complex plane `z = x + iy`. States are stored as
//! coefficients in the product eigenbasis `h_{n_x}(x) h_{n_y}(y)` with
//! energies `omega (n_x + n_y + 1)`, so propagation in `tau` is an exact
//! diagonal phase and is defined for every real `tau`, including `tau >= 0`.

pub mod grid;

use std::fmt::Write as _;

use log::warn;
use num_complex::Complex64;

use crate::error::{domain, Error, Result};
use crate::hermite::OscillatorAxis;

pub use grid::GridState;

/// Basis size per axis used when none is given.
pub const DEFAULT_BASIS: usize = 32;
/// Node threshold, relative to the ground-state peak amplitude.
pub const DEFAULT_NODE_EPS: f64 = 1e-8;

/// Value and first derivatives of `Phi` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Amplitude {
    pub value: Complex64,
    pub d_dx: Complex64,
    pub d_dy: Complex64,
}

impl Amplitude {
    /// `d/dz* Im log Phi = (1/2)(Im(Phi_x/Phi) + i Im(Phi_y/Phi))`.
    pub fn phase_gradient(&self) -> Complex64 {
        let gx = (self.d_dx / self.value).im;
        let gy = (self.d_dy / self.value).im;
        Complex64::new(0.5 * gx, 0.5 * gy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeState {
    k: f64,
    n_basis: usize,
    tau: f64,
    /// Row-major `(n_x, n_y)`.
    coeffs: Vec<Complex64>,
    /// One past the largest occupied index along each axis.
    active: (usize, usize),
}

fn check_mode(k: f64, n_basis: usize) -> Result<()> {
    if k == 0.0 {
        return Err(Error::DegenerateMode);
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(domain("k", k, "k > 0"));
    }
    if n_basis == 0 {
        return Err(domain("n_basis", 0.0, "n_basis >= 1"));
    }
    Ok(())
}

impl ModeState {
    fn from_raw(k: f64, n_basis: usize, tau: f64, coeffs: Vec<Complex64>) -> Self {
        let mut active = (0, 0);
        for nx in 0..n_basis {
            for ny in 0..n_basis {
                if coeffs[nx * n_basis + ny] != Complex64::new(0.0, 0.0) {
                    active.0 = active.0.max(nx + 1);
                    active.1 = active.1.max(ny + 1);
                }
            }
        }
        Self {
            k,
            n_basis,
            tau,
            coeffs,
            active,
        }
    }

    /// The Bunch-Davies state: the oscillator ground state, `Phi ~ exp(-omega |z|^2)`.
    pub fn ground_state(k: f64, n_basis: usize) -> Result<Self> {
        Self::level(k, n_basis, 0, 0)
    }

    /// The single eigenstate `(n_x, n_y)` at `tau = 0`.
    pub fn level(k: f64, n_basis: usize, nx: usize, ny: usize) -> Result<Self> {
        Self::from_levels(k, n_basis, 0.0, &[(nx, ny, Complex64::new(1.0, 0.0))])
    }

    /// Normalized combination of eigenstates, with the amplitudes given at
    /// mode time `tau`. Repeated levels are summed.
    pub fn from_levels(
        k: f64,
        n_basis: usize,
        tau: f64,
        levels: &[(usize, usize, Complex64)],
    ) -> Result<Self> {
        check_mode(k, n_basis)?;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n_basis * n_basis];
        for &(nx, ny, a) in levels {
            if nx >= n_basis || ny >= n_basis {
                return Err(Error::Incompatible(format!(
                    "level ({nx}, {ny}) outside a basis of {n_basis} per axis"
                )));
            }
            coeffs[nx * n_basis + ny] += a;
        }
        let norm = coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm);
        }
        coeffs.iter_mut().for_each(|c| *c /= norm);
        Ok(Self::from_raw(k, n_basis, tau, coeffs))
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Oscillator frequency; equal to `k`.
    pub fn omega(&self) -> f64 {
        self.k
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn coeff(&self, nx: usize, ny: usize) -> Complex64 {
        self.coeffs[nx * self.n_basis + ny]
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Nonzero coefficients as `(n_x, n_y, c)`.
    pub fn occupied(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        let n = self.n_basis;
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != Complex64::new(0.0, 0.0))
            .map(move |(i, c)| (i / n, i % n, *c))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `<H> = sum |c|^2 omega (n_x + n_y + 1)`.
    pub fn energy(&self) -> f64 {
        self.occupied()
            .map(|(nx, ny, c)| c.norm_sqr() * self.level_energy(nx, ny))
            .sum::<f64>()
            / self.norm_sqr()
    }

    pub fn level_energy(&self, nx: usize, ny: usize) -> f64 {
        self.omega() * (nx + ny + 1) as f64
    }

    /// Probability carried by the two outermost index shells of the basis.
    /// A truncation certificate: it should stay below `1e-10`.
    pub fn tail_mass(&self) -> f64 {
        let edge = self.n_basis.saturating_sub(2);
        self.occupied()
            .filter(|(nx, ny, _)| *nx >= edge || *ny >= edge)
            .map(|(_, _, c)| c.norm_sqr())
            .fold(0.0, |a, b| a + b)
    }

    /// Classical turning radius `sqrt(E/omega^2)` for energy `E`.
    fn radius_for(&self, energy: f64) -> f64 {
        (energy / (self.omega() * self.omega())).sqrt()
    }

    /// Turning radius of the top basis level; beyond it the truncated basis
    /// no longer resolves the state.
    pub fn basis_radius(&self) -> f64 {
        self.radius_for(self.level_energy(self.n_basis - 1, self.n_basis - 1))
    }

    /// Turning radius of the highest occupied level.
    pub fn occupied_radius(&self) -> f64 {
        let top = self
            .occupied()
            .map(|(nx, ny, _)| nx + ny)
            .max()
            .unwrap_or(0);
        self.radius_for(self.omega() * (top + 1) as f64)
    }

    /// Peak value `sqrt(2 omega / pi)` of the normalized ground state; node
    /// thresholds are relative to it.
    pub fn reference_amplitude(&self) -> f64 {
        (2.0 * self.omega() / std::f64::consts::PI).sqrt()
    }

    /// Exact propagation by `dtau`: each coefficient picks up
    /// `exp(-i omega (n_x + n_y + 1) dtau)`.
    pub fn evolve_tau(&self, dtau: f64) -> Self {
        let n = self.n_basis;
        let omega = self.omega();
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let level = (i / n + i % n + 1) as f64;
                c * Complex64::from_polar(1.0, -omega * level * dtau)
            })
            .collect();
        Self {
            coeffs,
            tau: self.tau + dtau,
            ..self.clone()
        }
    }

    pub fn at_tau(&self, tau: f64) -> Self {
        self.evolve_tau(tau - self.tau)
    }

    /// `Phi(z)` at the state's own time.
    pub fn evaluate(&self, z: Complex64) -> Complex64 {
        if z.norm() > self.basis_radius() {
            warn!(
                "evaluating at |z| = {:.3} beyond the basis turning radius {:.3}",
                z.norm(),
                self.basis_radius()
            );
        }
        self.amplitude_at(z, self.tau).value
    }

    /// `Phi` and its `x`, `y` derivatives at `z` and mode time `tau`, without
    /// materializing the evolved state.
    pub fn amplitude_at(&self, z: Complex64, tau: f64) -> Amplitude {
        let (ax, ay) = self.active;
        let axis = OscillatorAxis::new(self.omega());
        let mut buf = [0.0f64; 4 * 64];
        let mut heap;
        let storage: &mut [f64] = if ax.max(ay) <= 64 {
            &mut buf
        } else {
            heap = vec![0.0; 4 * ax.max(ay)];
            &mut heap
        };
        let m = ax.max(ay);
        let (hx, rest) = storage.split_at_mut(m);
        let (dhx, rest) = rest.split_at_mut(m);
        let (hy, dhy) = rest.split_at_mut(m);
        axis.fill(z.re, &mut hx[..ax], Some(&mut dhx[..ax]));
        axis.fill(z.im, &mut hy[..ay], Some(&mut dhy[..ay]));

        // exp(-i omega (s + 1) dtau) for shell s = n_x + n_y
        let dtau = tau - self.tau;
        let step = Complex64::from_polar(1.0, -self.omega() * dtau);
        let shells = ax + ay;
        let mut phases = Vec::with_capacity(shells);
        let mut p = step;
        for s in 0..shells {
            if s % 16 == 0 {
                // re-anchor to avoid drift in the running product
                p = Complex64::from_polar(1.0, -self.omega() * dtau * (s + 1) as f64);
            }
            phases.push(p);
            p *= step;
        }

        let mut value = Complex64::new(0.0, 0.0);
        let mut d_dx = value;
        let mut d_dy = value;
        for nx in 0..ax {
            let row = &self.coeffs[nx * self.n_basis..nx * self.n_basis + ay];
            let mut sv = Complex64::new(0.0, 0.0);
            let mut sd = sv;
            for (ny, c) in row.iter().enumerate() {
                if *c == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let cp = c * phases[nx + ny];
                sv += cp * hy[ny];
                sd += cp * dhy[ny];
            }
            value += sv * hx[nx];
            d_dx += sv * dhx[nx];
            d_dy += sd * hx[nx];
        }
        Amplitude { value, d_dx, d_dy }
    }

    /// `d/dz* Im log Phi` at the state's own time.
    pub fn phase_gradient(&self, z: Complex64, eps_node: f64) -> Result<Complex64> {
        self.phase_gradient_at(z, self.tau, eps_node)
    }

    pub fn phase_gradient_at(&self, z: Complex64, tau: f64, eps_node: f64) -> Result<Complex64> {
        let amp = self.amplitude_at(z, tau);
        self.check_node(z, &amp, eps_node)?;
        Ok(amp.phase_gradient())
    }

    pub(crate) fn check_node(&self, z: Complex64, amp: &Amplitude, eps_node: f64) -> Result<()> {
        let threshold = eps_node * self.reference_amplitude();
        let amplitude = amp.value.norm();
        if !(amplitude >= threshold) {
            return Err(Error::NodeProximity {
                z,
                amplitude,
                threshold,
            });
        }
        Ok(())
    }

    /// `<self|other>`, both taken at `self`'s time.
    pub fn overlap(&self, other: &ModeState) -> Result<Complex64> {
        self.check_compatible(other)?;
        let other = other.at_tau(self.tau);
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    fn check_compatible(&self, other: &ModeState) -> Result<()> {
        if self.k != other.k || self.n_basis != other.n_basis {
            return Err(Error::Incompatible(format!(
                "(k = {}, N = {}) vs (k = {}, N = {})",
                self.k, self.n_basis, other.k, other.n_basis
            )));
        }
        Ok(())
    }

    /// Structured-text serialization: a small header followed by one
    /// `n_x n_y re im` row per nonzero coefficient. Floats use the shortest
    /// representation that round-trips exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# desitter-bohm mode state\n");
        let _ = writeln!(out, "k = {:?}", self.k);
        let _ = writeln!(out, "n_basis = {}", self.n_basis);
        let _ = writeln!(out, "tau = {:?}", self.tau);
        out.push_str("# n_x n_y re im\n");
        for (nx, ny, c) in self.occupied() {
            let _ = writeln!(out, "{nx} {ny} {:?} {:?}", c.re, c.im);
        }
        out
    }

    /// Parses [`Self::to_text`] output. Coefficients are taken as written
    /// (no renormalization) but must not all vanish.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut k = None;
        let mut n_basis = None;
        let mut tau = None;
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            if let Some((key, value)) = line.split_once('=') {
                let value = value.trim();
                match key.trim() {
                    "k" => k = Some(value.parse::<f64>().map_err(|e| err(e.to_string()))?),
                    "n_basis" => {
                        n_basis = Some(value.parse::<usize>().map_err(|e| err(e.to_string()))?)
                    }
                    "tau" => tau = Some(value.parse::<f64>().map_err(|e| err(e.to_string()))?),
                    other => return Err(err(format!("unknown key `{other}`"))),
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(err(format!(
                    "expected `n_x n_y re im`, got {} fields",
                    fields.len()
                )));
            }
            let nx = fields[0].parse::<usize>().map_err(|e| err(e.to_string()))?;
            let ny = fields[1].parse::<usize>().map_err(|e| err(e.to_string()))?;
            let re = fields[2].parse::<f64>().map_err(|e| err(e.to_string()))?;
            let im = fields[3].parse::<f64>().map_err(|e| err(e.to_string()))?;
            rows.push((nx, ny, Complex64::new(re, im)));
        }
        let missing = |what: &str| Error::Parse {
            line: 0,
            message: format!("missing `{what}`"),
        };
        let k = k.ok_or_else(|| missing("k"))?;
        let n_basis = n_basis.ok_or_else(|| missing("n_basis"))?;
        let tau = tau.ok_or_else(|| missing("tau"))?;
        check_mode(k, n_basis)?;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n_basis * n_basis];
        for (nx, ny, c) in rows {
            if nx >= n_basis || ny >= n_basis {
                return Err(Error::Incompatible(format!(
                    "row ({nx}, {ny}) outside the basis"
                )));
            }
            coeffs[nx * n_basis + ny] = c;
        }
        if coeffs.iter().all(|c| *c == Complex64::new(0.0, 0.0)) {
            return Err(Error::ZeroNorm);
        }
        Ok(Self::from_raw(k, n_basis, tau, coeffs))
    }
}

/// Normalized linear combination `sum a_i |state_i>`, formed at the time of
/// the first state.
pub fn superpose(states: &[(Complex64, &ModeState)]) -> Result<ModeState> {
    let (_, first) = states
        .first()
        .ok_or_else(|| Error::Incompatible("empty superposition".to_string()))?;
    let mut coeffs = vec![Complex64::new(0.0, 0.0); first.coeffs.len()];
    for (a, s) in states {
        first.check_compatible(s)?;
        let s = s.at_tau(first.tau);
        for (acc, c) in coeffs.iter_mut().zip(&s.coeffs) {
            *acc += a * c;
        }
    }
    let norm = coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if !(norm > 1e-300) {
        return Err(Error::ZeroNorm);
    }
    coeffs.iter_mut().for_each(|c| *c /= norm);
    Ok(ModeState::from_raw(
        first.k,
        first.n_basis,
        first.tau,
        coeffs,
    ))
}

/// Equal-weight superposition of the levels `(0,0)` and `(1,0)` with relative
/// phase `phase` at mode time `tau_ref`.
pub fn two_level(k: f64, n_basis: usize, tau_ref: f64, phase: f64) -> Result<ModeState> {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    ModeState::from_levels(
        k,
        n_basis,
        tau_ref,
        &[
            (0, 0, Complex64::new(a, 0.0)),
            (1, 0, Complex64::from_polar(a, phase)),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn ground_state_is_gaussian() {
        for &k in &[0.3, 1.0, 4.0] {
            let g = ModeState::ground_state(k, DEFAULT_BASIS).unwrap();
            let peak = g.evaluate(c(0.0, 0.0));
            assert_relative_eq!(peak.re, (2.0 * k / PI).sqrt(), max_relative = 1e-14);
            // omega |z|^2 = 1
            let r = 1.0 / k.sqrt();
            let z = Complex64::from_polar(r, 0.7);
            assert_relative_eq!(
                peak.re / g.evaluate(z).re,
                std::f64::consts::E,
                max_relative = 1e-13
            );
            assert_relative_eq!(g.energy(), k, max_relative = 1e-15);
        }
    }

    #[test]
    fn ground_state_phase_is_flat() {
        let g = ModeState::ground_state(1.3, 8).unwrap().evolve_tau(0.77);
        let mut s = 7_u64;
        for _ in 0..20 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            let x = ((s >> 20) % 2000) as f64 / 1000.0 - 1.0;
            let y = ((s >> 40) % 2000) as f64 / 1000.0 - 1.0;
            assert!(g.phase_gradient(c(x, y), DEFAULT_NODE_EPS).unwrap().norm() < 1e-14);
        }
    }

    #[test]
    fn superposition_energy_and_identity() {
        let k = 0.8;
        let g = ModeState::ground_state(k, 6).unwrap();
        let e1 = ModeState::level(k, 6, 1, 0).unwrap();
        let same = superpose(&[(c(1.0, 0.0), &g), (c(0.0, 0.0), &e1)]).unwrap();
        assert_eq!(same.coeffs(), g.coeffs());
        let half = superpose(&[(c(1.0, 0.0), &g), (c(1.0, 0.0), &e1)]).unwrap();
        assert_relative_eq!(half.norm_sqr(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(half.energy(), 1.5 * k, max_relative = 1e-15);
        assert!(matches!(
            superpose(&[(c(1.0, 0.0), &g), (c(-1.0, 0.0), &g)]),
            Err(Error::ZeroNorm)
        ));
        let other = ModeState::ground_state(2.0 * k, 6).unwrap();
        assert!(superpose(&[(c(1.0, 0.0), &g), (c(1.0, 0.0), &other)]).is_err());
    }

    #[test]
    fn stationary_under_evolution() {
        let g = ModeState::ground_state(2.0, 4).unwrap();
        let dtau = 0.37;
        let e = g.evolve_tau(dtau);
        let expected = g.coeff(0, 0) * Complex64::from_polar(1.0, -2.0 * dtau);
        assert!((e.coeff(0, 0) - expected).norm() < 1e-15);
        assert_eq!(e.tau(), dtau);
    }

    #[test]
    fn many_small_steps_keep_norm() {
        let s = ModeState::from_levels(
            1.0,
            DEFAULT_BASIS,
            0.0,
            &[
                (0, 0, c(0.3, 0.1)),
                (2, 1, c(-0.5, 0.2)),
                (5, 7, c(0.1, 0.9)),
            ],
        )
        .unwrap();
        let mut e = s.clone();
        for _ in 0..10_000 {
            e = e.evolve_tau(1e-3);
        }
        assert!((e.norm_sqr() - 1.0).abs() < 1e-12);
        let direct = s.evolve_tau(10.0);
        for (a, b) in e.coeffs().iter().zip(direct.coeffs()) {
            assert!((a - b).norm() < 1e-11);
        }
    }

    #[test]
    fn odd_level_vanishes_on_axis() {
        let s = ModeState::level(1.0, 4, 1, 0).unwrap();
        for &y in &[-1.0, 0.0, 0.4] {
            assert_eq!(s.evaluate(c(0.0, y)).norm(), 0.0);
        }
        assert!(matches!(
            s.phase_gradient(c(0.0, 0.2), DEFAULT_NODE_EPS),
            Err(Error::NodeProximity { .. })
        ));
    }

    #[test]
    fn plancherel_on_a_grid() {
        let s = ModeState::from_levels(
            1.5,
            12,
            0.2,
            &[
                (0, 0, c(0.5, 0.0)),
                (1, 2, c(0.0, 0.5)),
                (3, 0, c(-0.5, 0.5)),
            ],
        )
        .unwrap();
        let (a, n) = (6.0, 400);
        let h = 2.0 * a / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let z = c(-a + i as f64 * h, -a + j as f64 * h);
                total += s.evaluate(z).norm_sqr() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-8, "{total}");
    }

    /// Energy by applying the Hamiltonian with finite differences on a grid,
    /// independent of the diagonal-in-basis formula.
    #[test]
    fn energy_by_finite_difference_hamiltonian() {
        let g = ModeState::ground_state(1.2, 4).unwrap();
        let omega = g.omega();
        let (a, n) = (5.0, 300);
        let h = 2.0 * a / n as f64;
        let f = |i: i64, j: i64| g.evaluate(c(-a + i as f64 * h, -a + j as f64 * h));
        let (mut num, mut den) = (0.0, 0.0);
        for i in 1..n as i64 {
            for j in 1..n as i64 {
                let p = f(i, j);
                let lap =
                    (f(i + 1, j) + f(i - 1, j) + f(i, j + 1) + f(i, j - 1) - 4.0 * p) / (h * h);
                let z = c(-a + i as f64 * h, -a + j as f64 * h);
                let hp = -0.25 * lap + omega * omega * z.norm_sqr() * p;
                num += (p.conj() * hp).re;
                den += p.norm_sqr();
            }
        }
        // second-order differencing error is ~omega^2 h^2 / 6
        assert_relative_eq!(num / den, omega, max_relative = 1e-3);
    }

    #[test]
    fn phase_gradient_matches_finite_difference() {
        let s = two_level(1.0, 8, 0.0, 0.4).evolve_tau(0.3);
        let h = 1e-5;
        for &z in &[c(0.3, 0.2), c(-0.2, 0.5), c(0.8, -0.6)] {
            let phase = |w: Complex64| s.evaluate(w).arg();
            let gx = (phase(z + h) - phase(z - h)) / (2.0 * h);
            let gy = (phase(z + c(0.0, h)) - phase(z - c(0.0, h))) / (2.0 * h);
            let fd = c(0.5 * gx, 0.5 * gy);
            let v = s.phase_gradient(z, DEFAULT_NODE_EPS).unwrap();
            assert!((v - fd).norm() < 1e-6, "{v} vs {fd}");
        }
    }

    fn two_level(k: f64, n: usize, tau: f64, phase: f64) -> ModeState {
        super::two_level(k, n, tau, phase).unwrap()
    }

    #[test]
    fn two_level_velocity_has_beat_period() {
        let k = 1.7;
        let s = two_level(k, 4, 0.0, 0.0);
        let z = c(0.2, 0.1);
        let period = 2.0 * PI / k;
        for &t in &[0.1, 0.9, 2.3] {
            let a = s.phase_gradient_at(z, t, DEFAULT_NODE_EPS).unwrap();
            let b = s
                .phase_gradient_at(z, t + period, DEFAULT_NODE_EPS)
                .unwrap();
            let half = s
                .phase_gradient_at(z, t + 0.5 * period, DEFAULT_NODE_EPS)
                .unwrap();
            assert!((a - b).norm() < 1e-12);
            assert!((a - half).norm() > 1e-3);
        }
    }

    #[test]
    fn tail_mass_flags_truncation() {
        let s = ModeState::from_levels(1.0, 8, 0.0, &[(0, 0, c(1.0, 0.0)), (7, 0, c(1.0, 0.0))])
            .unwrap();
        assert_relative_eq!(s.tail_mass(), 0.5, max_relative = 1e-15);
        assert_eq!(ModeState::ground_state(1.0, 8).unwrap().tail_mass(), 0.0);
    }

    #[test]
    fn text_parse_errors() {
        assert!(ModeState::from_text("k = 1\nn_basis = 4\n").is_err());
        assert!(ModeState::from_text("k = 1\nn_basis = 4\ntau = 0\n0 0 1\n").is_err());
        assert!(matches!(
            ModeState::from_text("k = 1\nn_basis = 4\ntau = 0\n"),
            Err(Error::ZeroNorm)
        ));
        assert!(ModeState::from_text("k = 1\nn_basis = 4\ntau = 0\n9 0 1 0\n").is_err());
    }

    proptest! {
        #[test]
        fn evolution_is_unitary_and_reversible(
            amps in proptest::collection::vec((0usize..6, 0usize..6, -1.0f64..1.0, -1.0f64..1.0), 1..8),
            dtau in -20.0f64..20.0, k in 0.1f64..10.0,
        ) {
            let levels: Vec<_> = amps.iter().map(|&(x, y, r, i)| (x, y, c(r, i))).collect();
            let s = match ModeState::from_levels(k, 8, 0.0, &levels) {
                Ok(s) => s,
                Err(_) => return Ok(()),
            };
            let e = s.evolve_tau(dtau);
            prop_assert!((e.norm_sqr() - 1.0).abs() < 1e-14);
            prop_assert!((e.energy() - s.energy()).abs() < 1e-12 * s.energy());
            let back = e.evolve_tau(-dtau);
            for (a, b) in back.coeffs().iter().zip(s.coeffs()) {
                prop_assert!((a - b).norm() < 1e-14);
            }
        }

        #[test]
        fn single_levels_have_no_velocity(nx in 0usize..6, ny in 0usize..6, x in -1.5f64..1.5, y in -1.5f64..1.5, t in -5.0f64..5.0) {
            let s = ModeState::level(1.0, 8, nx, ny).unwrap();
            if let Ok(v) = s.phase_gradient_at(c(x, y), t, DEFAULT_NODE_EPS) {
                prop_assert!(v.norm() < 1e-12 * (1.0 + 1.0 / s.evaluate(c(x, y)).norm()));
            }
        }

        #[test]
        fn text_round_trip(
            amps in proptest::collection::vec((0usize..5, 0usize..5, -1.0f64..1.0, -1.0f64..1.0), 1..6),
            tau in -3.0f64..3.0,
        ) {
            let levels: Vec<_> = amps.iter().map(|&(x, y, r, i)| (x, y, c(r, i))).collect();
            if let Ok(s) = ModeState::from_levels(0.7, 5, tau, &levels) {
                let back = ModeState::from_text(&s.to_text()).unwrap();
                prop_assert_eq!(back, s);
            }
        }
    }
}
