//! Reference solver for the untransformed mode equation in the `y` plane,
//!
//! ```text
//! i dPsi/deta = [ -d^2/(dy* dy) + k^2 |y|^2 + (i/eta)(d/dy* y* + y d/dy) ] Psi
//! ```
//!
//! used only to cross-check the transformed oscillator picture. In real
//! coordinates the last term is `(i/eta)(1 + r . grad)`, a dilation. Its flow
//! over `[eta1, eta2]` is `Psi(r) -> e^s Psi(e^s r)` with `s = ln(eta2/eta1)`,
//! which on a uniform grid is exact: the sample values are scaled by `e^s`
//! and the grid spacing by `e^{-s}`. The kinetic part is applied spectrally
//! and the potential pointwise, in a symmetric (Strang) splitting. Every
//! sub-step is unitary for the discrete norm.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::coords::mode_time;
use crate::error::{domain, Error, Result};
use crate::schrodinger::ModeState;
use crate::transform::TransformParams;

/// Largest relative change of the discrete norm tolerated in one step.
pub const NORM_DRIFT_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    /// Row-major over `(a, b)`, `y = a + ib`.
    values: Vec<Complex64>,
    n: usize,
    /// Half-width of the periodic box.
    extent: f64,
    eta: f64,
}

impl GridState {
    /// Samples `f(y)` on an `n x n` grid over `[-extent, extent)^2`.
    pub fn from_fn(
        n: usize,
        extent: f64,
        eta: f64,
        f: impl Fn(Complex64) -> Complex64,
    ) -> Result<Self> {
        if n < 4 || !n.is_multiple_of(2) {
            return Err(domain("n", n as f64, "even and >= 4"));
        }
        if !(extent > 0.0) {
            return Err(domain("extent", extent, "extent > 0"));
        }
        if !(eta < 0.0) {
            return Err(domain("eta", eta, "eta < 0"));
        }
        let h = 2.0 * extent / n as f64;
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                values.push(f(Complex64::new(
                    -extent + i as f64 * h,
                    -extent + j as f64 * h,
                )));
            }
        }
        Ok(Self {
            values,
            n,
            extent,
            eta,
        })
    }

    /// `Psi(y, eta) = e^{-alpha} e^{-i beta |z|^2} Phi(z, tau(eta))` with
    /// `z = y / gamma`.
    pub fn from_mode_state(state: &ModeState, eta: f64, n: usize, extent: f64) -> Result<Self> {
        let psi = mode_state_in_y(state, eta)?;
        Self::from_fn(n, extent, eta, psi)
    }

    /// Six turning radii of the highest occupied level, mapped to the `y`
    /// plane at `eta`.
    pub fn default_extent(state: &ModeState, eta: f64) -> Result<f64> {
        let gamma = TransformParams::new(state.k())?.gamma(eta)?;
        Ok(6.0 * state.occupied_radius() * gamma)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.extent / self.n as f64
    }

    pub fn point(&self, i: usize, j: usize) -> Complex64 {
        let h = self.spacing();
        Complex64::new(-self.extent + i as f64 * h, -self.extent + j as f64 * h)
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Trapezoid (equivalently, periodic rectangle) rule for `int |Psi|^2`.
    pub fn norm_sqr(&self) -> f64 {
        let h = self.spacing();
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * h * h
    }

    /// Largest boundary amplitude relative to the largest amplitude.
    pub fn boundary_ratio(&self) -> f64 {
        let n = self.n;
        let max = self.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let mut edge = 0.0f64;
        for i in 0..n {
            for &(a, b) in &[(0, i), (n - 1, i), (i, 0), (i, n - 1)] {
                edge = edge.max(self.values[a * n + b].norm());
            }
        }
        edge / max
    }

    /// `(int |Psi - f|^2)^{1/2}` over the grid.
    pub fn l2_distance(&self, f: impl Fn(Complex64) -> Complex64) -> f64 {
        let h = self.spacing();
        let mut sum = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                sum += (self.values[i * self.n + j] - f(self.point(i, j))).norm_sqr();
            }
        }
        (sum * h * h).sqrt()
    }

    /// `(<x^2>, <y^2>)` of `|Psi|^2`.
    pub fn second_moments(&self) -> (f64, f64) {
        let (mut sx, mut sy, mut total) = (0.0, 0.0, 0.0);
        for i in 0..self.n {
            for j in 0..self.n {
                let w = self.values[i * self.n + j].norm_sqr();
                let p = self.point(i, j);
                sx += w * p.re * p.re;
                sy += w * p.im * p.im;
                total += w;
            }
        }
        (sx / total, sy / total)
    }
}

/// The untransformed wave function `y -> Psi(y, eta)` of a mode state.
pub fn mode_state_in_y(
    state: &ModeState,
    eta: f64,
) -> Result<impl Fn(Complex64) -> Complex64 + '_> {
    let params = TransformParams::new(state.k())?;
    let gamma = params.gamma(eta)?;
    let alpha = params.alpha(eta)?;
    let beta = params.beta(eta)?;
    let tau = mode_time(eta, state.k());
    Ok(move |y: Complex64| {
        let z = y / gamma;
        state.amplitude_at(z, tau).value
            * Complex64::from_polar((-alpha).exp(), -beta * z.norm_sqr())
    })
}

/// Holds FFT plans for one grid size.
pub struct ReferenceSolver {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl ReferenceSolver {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    /// One Strang step of the full equation.
    pub fn step(&self, grid: &GridState, d_eta: f64, k: f64) -> Result<GridState> {
        self.step_with(grid, d_eta, k, true)
    }

    /// One Strang step; `dilation = false` drops the `(i/eta)` term (with
    /// `k = 0` this is the free Schrodinger equation with mass 2).
    pub fn step_with(
        &self,
        grid: &GridState,
        d_eta: f64,
        k: f64,
        dilation: bool,
    ) -> Result<GridState> {
        if grid.n != self.n {
            return Err(Error::Incompatible(format!(
                "grid {} vs solver {}",
                grid.n, self.n
            )));
        }
        let (eta0, eta1) = (grid.eta, grid.eta + d_eta);
        if dilation && !(eta1 < 0.0) {
            return Err(domain("eta + d_eta", eta1, "eta + d_eta < 0"));
        }
        let before = grid.norm_sqr();
        let mut g = grid.clone();
        let mid = eta0 + 0.5 * d_eta;
        if dilation {
            dilate(&mut g, (mid / eta0).ln());
        }
        potential(&mut g, k, 0.5 * d_eta);
        self.kinetic(&mut g, d_eta);
        potential(&mut g, k, 0.5 * d_eta);
        if dilation {
            dilate(&mut g, (eta1 / mid).ln());
        }
        g.eta = eta1;
        let drift = (g.norm_sqr() - before).abs() / before;
        if drift > NORM_DRIFT_LIMIT {
            return Err(Error::NormDrift {
                drift,
                limit: NORM_DRIFT_LIMIT,
            });
        }
        Ok(g)
    }

    /// Advances to `eta_end` in `steps` steps of geometric length, so every
    /// step has the same dilation factor.
    pub fn evolve_to(
        &self,
        grid: &GridState,
        eta_end: f64,
        steps: usize,
        k: f64,
    ) -> Result<GridState> {
        if !(eta_end < 0.0) || steps == 0 {
            return Err(domain("eta_end", eta_end, "eta_end < 0 and steps >= 1"));
        }
        let ratio = (eta_end / grid.eta).powf(1.0 / steps as f64);
        let mut g = grid.clone();
        for s in 0..steps {
            let target = if s + 1 == steps {
                eta_end
            } else {
                g.eta * ratio
            };
            g = self.step(&g, target - g.eta, k)?;
        }
        Ok(g)
    }

    fn kinetic(&self, g: &mut GridState, d_eta: f64) {
        let n = self.n;
        let h = g.spacing();
        let dk = 2.0 * std::f64::consts::PI / (n as f64 * h);
        let wave = |m: usize| {
            let m = if m < n / 2 {
                m as f64
            } else {
                m as f64 - n as f64
            };
            m * dk
        };
        self.fft2(&mut g.values, false);
        for i in 0..n {
            let kx = wave(i);
            for j in 0..n {
                let ky = wave(j);
                let phase = -0.25 * (kx * kx + ky * ky) * d_eta;
                g.values[i * n + j] *= Complex64::from_polar(1.0, phase);
            }
        }
        self.fft2(&mut g.values, true);
        let scale = 1.0 / (n * n) as f64;
        g.values.iter_mut().for_each(|v| *v *= scale);
    }

    fn fft2(&self, values: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let plan = if inverse {
            &self.inverse
        } else {
            &self.forward
        };
        // the box origin sits at index 0 of a shifted grid; a pure phase in
        // k-space, which cancels between the forward and inverse transforms
        plan.process(values);
        let mut column = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                column[i] = values[i * n + j];
            }
            plan.process(&mut column);
            for i in 0..n {
                values[i * n + j] = column[i];
            }
        }
    }
}

fn potential(g: &mut GridState, k: f64, d_eta: f64) {
    if k == 0.0 {
        return;
    }
    let n = g.n;
    for i in 0..n {
        for j in 0..n {
            let r2 = g.point(i, j).norm_sqr();
            g.values[i * n + j] *= Complex64::from_polar(1.0, -k * k * r2 * d_eta);
        }
    }
}

fn dilate(g: &mut GridState, s: f64) {
    let factor = s.exp();
    g.values.iter_mut().for_each(|v| *v *= factor);
    g.extent /= factor;
}

/// One reference step of the full equation from `grid.eta` to
/// `grid.eta + d_eta`.
pub fn evolve_eta_reference(grid: &GridState, d_eta: f64, k: f64) -> Result<GridState> {
    ReferenceSolver::new(grid.n).step(grid, d_eta, k)
}
