//! Guided configurations of a single mode.
//!
//! In mode time the guidance law is `dz/dtau = d/dz* Im log Phi(z, tau)`,
//! the ordinary Bohmian law for a mass-2 particle in the plane. It is
//! integrated in `tau`, with `Phi` propagated exactly to every stage time,
//! and the result reported in both `tau` and `eta`.
//!
//! The equivalent conformal-time law for the untransformed variable,
//! `y' = dS/dy* - y/eta`, is provided as [`guidance_y_eta`] and
//! [`integrate_y_eta`] for cross-checks.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coords::{eta_of_tau, mode_time, phi_from_z, tau_of_eta, Cosmology};
use crate::error::{domain, Error, Result};
use crate::hermite::OscillatorAxis;
use crate::ode::{self, OdeSystem, StepOptions};
use crate::schrodinger::{ModeState, DEFAULT_NODE_EPS};
use crate::stats;
use crate::transform::TransformParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryOptions {
    /// Absolute and relative local error tolerance.
    pub tol: f64,
    pub eps_node: f64,
    /// Multiplies the guidance velocity. Anything other than 1 is a
    /// deliberately wrong law, used for negative controls.
    pub velocity_scale: f64,
    /// Output stops spaced uniformly in `eta` over the window.
    pub uniform_samples: usize,
    /// Output stops spaced uniformly in `tau` over `(-1, 0)`.
    pub tau_window_samples: usize,
    pub max_steps: usize,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            eps_node: DEFAULT_NODE_EPS,
            velocity_scale: 1.0,
            uniform_samples: 200,
            tau_window_samples: 100,
            max_steps: 1_000_000,
        }
    }
}

impl TrajectoryOptions {
    fn step_options(&self) -> StepOptions {
        StepOptions {
            rtol: self.tol,
            atol: self.tol,
            max_steps: self.max_steps,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Smallest `|Phi|` met at any stage evaluation.
    pub min_amplitude: f64,
    /// Largest guidance speed `|dz/dtau|` met at any stage evaluation.
    pub max_speed: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Step halvings forced by node proximity.
    pub node_retries: usize,
    pub evaluations: usize,
}

/// `dz/dtau = d/dz* Im log Phi(z)` at the state's own time.
pub fn velocity(state: &ModeState, z: Complex64, eps_node: f64) -> Result<Complex64> {
    state.phase_gradient(z, eps_node)
}

struct Guidance<'a> {
    state: &'a ModeState,
    eps_node: f64,
    scale: f64,
    min_amplitude: f64,
    max_speed: f64,
}

impl<'a> Guidance<'a> {
    fn new(state: &'a ModeState, opts: &TrajectoryOptions) -> Self {
        Self {
            state,
            eps_node: opts.eps_node,
            scale: opts.velocity_scale,
            min_amplitude: f64::INFINITY,
            max_speed: 0.0,
        }
    }

    fn diagnostics(&self, st: ode::Stats) -> Diagnostics {
        Diagnostics {
            min_amplitude: self.min_amplitude,
            max_speed: self.max_speed,
            accepted_steps: st.accepted,
            rejected_steps: st.rejected,
            node_retries: st.refusals,
            evaluations: st.evaluations,
        }
    }
}

impl OdeSystem for Guidance<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&mut self, tau: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let z = Complex64::new(y[0], y[1]);
        let amp = self.state.amplitude_at(z, tau);
        let a = amp.value.norm();
        self.min_amplitude = self.min_amplitude.min(a);
        self.state.check_node(z, &amp, self.eps_node)?;
        let v = self.scale * amp.phase_gradient();
        self.max_speed = self.max_speed.max(v.norm());
        dy[0] = v.re;
        dy[1] = v.im;
        Ok(())
    }
}

/// A guided path parameterized by mode time only. Unlike [`Trajectory`] it
/// may run backwards or continue past `tau = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TauPath {
    pub k: f64,
    pub samples: Vec<(f64, Complex64)>,
    pub diagnostics: Diagnostics,
}

impl TauPath {
    pub fn last(&self) -> (f64, Complex64) {
        *self.samples.last().expect("a path has at least its start")
    }
}

fn aborted(fail: Box<ode::Failure>) -> Error {
    Error::TrajectoryAborted {
        tau: fail.t,
        reason: fail.error.to_string(),
        partial: fail
            .samples
            .iter()
            .map(|s| (s.t, Complex64::new(s.y[0], s.y[1])))
            .collect(),
    }
}

/// Integrates the guidance law from `(tau0, z0)` to `tau1`, hitting every
/// entry of `tau_stops` that lies in between.
pub fn integrate_tau(
    state: &ModeState,
    z0: Complex64,
    tau0: f64,
    tau1: f64,
    tau_stops: &[f64],
    opts: &TrajectoryOptions,
) -> Result<TauPath> {
    let mut sys = Guidance::new(state, opts);
    let sol = ode::integrate(
        &mut sys,
        tau0,
        &[z0.re, z0.im],
        tau1,
        tau_stops,
        &opts.step_options(),
    )
    .map_err(aborted)?;
    Ok(TauPath {
        k: state.k(),
        samples: sol
            .samples
            .iter()
            .map(|s| (s.t, Complex64::new(s.y[0], s.y[1])))
            .collect(),
        diagnostics: sys.diagnostics(sol.stats),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub eta: f64,
    pub tau: f64,
    pub z: Complex64,
    pub phi: Complex64,
    /// `|Phi(z, tau)|`
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub k: f64,
    pub hubble: f64,
    pub samples: Vec<TrajectorySample>,
    pub diagnostics: Diagnostics,
}

/// Conformal-time output stops for a window: uniform, dyadic towards
/// `eta_end`, and uniform in mode time over `(-1, 0)`.
pub fn output_stops(k: f64, eta_start: f64, eta_end: f64, opts: &TrajectoryOptions) -> Vec<f64> {
    let mut stops = Vec::new();
    let n = opts.uniform_samples;
    for i in 1..n {
        stops.push(eta_start + (eta_end - eta_start) * i as f64 / n as f64);
    }
    let mut dyadic = 2.0 * eta_end;
    while dyadic > eta_start {
        stops.push(dyadic);
        dyadic *= 2.0;
    }
    let (tau_start, tau_end) = (mode_time(eta_start, k), mode_time(eta_end, k));
    let lo = tau_start.max(-1.0);
    let m = opts.tau_window_samples;
    if lo < tau_end {
        for i in 1..m {
            stops.push(eta_of_tau(lo + (tau_end - lo) * i as f64 / m as f64, k));
        }
    }
    stops.retain(|&e| e > eta_start && e < eta_end);
    stops.sort_by(f64::total_cmp);
    stops.dedup();
    stops
}

/// Integrates the trajectory through `z0` at `eta_start` up to `eta_end`.
/// `state0` may be given at any mode time; it is propagated as needed.
pub fn integrate_trajectory(
    state0: &ModeState,
    z0: Complex64,
    eta_window: (f64, f64),
    cosmo: &Cosmology,
    opts: &TrajectoryOptions,
) -> Result<Trajectory> {
    integrate_trajectory_with_stops(state0, z0, eta_window, &[], cosmo, opts)
}

/// As [`integrate_trajectory`], also recording the given conformal times.
pub fn integrate_trajectory_with_stops(
    state0: &ModeState,
    z0: Complex64,
    eta_window: (f64, f64),
    extra_stops: &[f64],
    cosmo: &Cosmology,
    opts: &TrajectoryOptions,
) -> Result<Trajectory> {
    let (eta_start, eta_end) = eta_window;
    if !(eta_start < eta_end) {
        return Err(domain("eta_start", eta_start, "eta_start < eta_end"));
    }
    if !(eta_end < 0.0) {
        return Err(domain("eta_end", eta_end, "eta_end < 0"));
    }
    let k = state0.k();
    let tau_start = tau_of_eta(eta_start, k)?;
    let tau_end = tau_of_eta(eta_end, k)?;
    let mut eta_stops = output_stops(k, eta_start, eta_end, opts);
    eta_stops.extend(
        extra_stops
            .iter()
            .copied()
            .filter(|&e| e > eta_start && e < eta_end),
    );
    eta_stops.sort_by(f64::total_cmp);
    eta_stops.dedup();
    let mut stop_pairs: Vec<(f64, f64)> = eta_stops.iter().map(|&e| (mode_time(e, k), e)).collect();
    stop_pairs.dedup_by(|a, b| a.0 == b.0);
    let tau_stops: Vec<f64> = stop_pairs.iter().map(|p| p.0).collect();

    let path = integrate_tau(state0, z0, tau_start, tau_end, &tau_stops, opts)?;
    let samples = path
        .samples
        .iter()
        .map(|&(tau, z)| {
            let eta = if tau == tau_start {
                eta_start
            } else if tau == tau_end {
                eta_end
            } else {
                match stop_pairs.binary_search_by(|p| p.0.total_cmp(&tau)) {
                    Ok(i) => stop_pairs[i].1,
                    Err(_) => eta_of_tau(tau, k),
                }
            };
            TrajectorySample {
                eta,
                tau,
                z,
                phi: phi_from_z(z, eta, k, cosmo),
                amplitude: state0.amplitude_at(z, tau).value.norm(),
            }
        })
        .collect();
    Ok(Trajectory {
        k,
        hubble: cosmo.hubble(),
        samples,
        diagnostics: path.diagnostics,
    })
}

impl Trajectory {
    pub fn last(&self) -> &TrajectorySample {
        self.samples
            .last()
            .expect("a trajectory has at least its start")
    }

    /// The sample recorded at `eta` (an output stop or endpoint).
    pub fn at_eta(&self, eta: f64) -> Option<&TrajectorySample> {
        self.samples
            .iter()
            .find(|s| (s.eta - eta).abs() <= 1e-12 * eta.abs())
    }

    /// Checks the sample invariants: strictly increasing `tau`, `tau` equal
    /// to the mode time of `eta` to `1e-10`, and `phi` consistent with `z`.
    pub fn check_invariants(&self) -> Result<()> {
        let cosmo = Cosmology::new(self.hubble)?;
        for w in self.samples.windows(2) {
            if !(w[1].tau > w[0].tau) {
                return Err(Error::NonConvergence(format!(
                    "tau not increasing at {}",
                    w[1].tau
                )));
            }
        }
        for s in &self.samples {
            let tau = mode_time(s.eta, self.k);
            if (tau - s.tau).abs() > 1e-10 * s.tau.abs().max(1e-300) && (tau - s.tau).abs() > 1e-22
            {
                return Err(Error::NonConvergence(format!(
                    "tau {} inconsistent with eta {} (expected {tau})",
                    s.tau, s.eta
                )));
            }
            let phi = phi_from_z(s.z, s.eta, self.k, &cosmo);
            if (phi - s.phi).norm() > 1e-12 * phi.norm().max(1e-300) {
                return Err(Error::NonConvergence(format!(
                    "phi inconsistent with z at eta {}",
                    s.eta
                )));
            }
        }
        Ok(())
    }

    /// Largest `|dz/dtau|` over the samples with `tau` in `(lo, hi)`.
    pub fn max_speed_between(
        &self,
        state: &ModeState,
        lo: f64,
        hi: f64,
        eps_node: f64,
    ) -> Result<f64> {
        let mut max = 0.0f64;
        for s in self.samples.iter().filter(|s| s.tau > lo && s.tau < hi) {
            max = max.max(state.phase_gradient_at(s.z, s.tau, eps_node)?.norm());
        }
        Ok(max)
    }

    /// Delimited table: `eta,tau,re_z,im_z,re_phi,im_phi,abs_Phi`.
    pub fn write_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "eta,tau,re_z,im_z,re_phi,im_phi,abs_Phi")?;
        for s in &self.samples {
            writeln!(
                w,
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                s.eta, s.tau, s.z.re, s.z.im, s.phi.re, s.phi.im, s.amplitude
            )?;
        }
        Ok(())
    }
}

/// `y' = dS/dy* - y/eta`, with the phase `S` of the untransformed wave
/// function `Psi(y) = e^{-alpha} e^{-i beta |y|^2/gamma^2} Phi(y/gamma)`.
pub fn guidance_y_eta(
    state: &ModeState,
    y: Complex64,
    eta: f64,
    eps_node: f64,
) -> Result<Complex64> {
    let params = TransformParams::new(state.k())?;
    let gamma = params.gamma(eta)?;
    let beta = params.beta(eta)?;
    let z = y / gamma;
    let grad_phi = state.phase_gradient_at(z, mode_time(eta, state.k()), eps_node)?;
    // d/dy* of S_Phi(y/gamma) - beta |y|^2 / gamma^2
    let grad_psi = grad_phi / gamma - y * (beta / (gamma * gamma));
    Ok(grad_psi - y / eta)
}

struct GuidanceY<'a> {
    state: &'a ModeState,
    eps_node: f64,
}

impl OdeSystem for GuidanceY<'_> {
    fn dim(&self) -> usize {
        2
    }
    fn rhs(&mut self, eta: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let v = guidance_y_eta(self.state, Complex64::new(y[0], y[1]), eta, self.eps_node)?;
        dy[0] = v.re;
        dy[1] = v.im;
        Ok(())
    }
}

/// Integrates `y' = dS/dy* - y/eta` directly in conformal time. Returns
/// `(eta, y)` samples.
pub fn integrate_y_eta(
    state: &ModeState,
    y0: Complex64,
    eta_window: (f64, f64),
    opts: &TrajectoryOptions,
) -> Result<Vec<(f64, Complex64)>> {
    let (eta0, eta1) = eta_window;
    if !(eta0 < 0.0 && eta1 < 0.0) {
        return Err(domain("eta", eta0.max(eta1), "eta < 0"));
    }
    let mut sys = GuidanceY {
        state,
        eps_node: opts.eps_node,
    };
    let sol = ode::integrate(
        &mut sys,
        eta0,
        &[y0.re, y0.im],
        eta1,
        &[],
        &opts.step_options(),
    )
    .map_err(aborted)?;
    Ok(sol
        .samples
        .iter()
        .map(|s| (s.t, Complex64::new(s.y[0], s.y[1])))
        .collect())
}

/// Points drawn i.i.d. from `|Phi|^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub points: Vec<Complex64>,
    pub seed: u64,
    pub method: String,
    /// Mode time of the density the points were drawn from.
    pub tau: f64,
    pub proposals: u64,
}

impl Ensemble {
    pub fn write_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,re_z,im_z")?;
        for (i, p) in self.points.iter().enumerate() {
            writeln!(w, "{i},{:e},{:e}", p.re, p.im)?;
        }
        Ok(())
    }
}

/// Gaussian envelope `bound * exp(-2 omega' |z|^2) >= |Phi(z)|^2` for a
/// normalized state.
///
/// With `omega' = omega / (1 + n_max)` each `h_n(x)^2 exp(2 omega' x^2)` is
/// bounded; Cauchy-Schwarz over the occupied levels then bounds `|Phi|^2` by
/// the sum of the products of the one-dimensional maxima.
fn gaussian_envelope(state: &ModeState) -> (f64, f64) {
    let n_max = state
        .occupied()
        .map(|(x, y, _)| x.max(y))
        .max()
        .unwrap_or(0);
    gaussian_envelope_with(state, n_max)
}

/// As above with the envelope width set by `n_max`, which must be at least
/// the state's highest occupied level on either axis.
pub(crate) fn gaussian_envelope_with(state: &ModeState, n_max: usize) -> (f64, f64) {
    let omega = state.omega();
    let omega_env = omega / (1 + n_max) as f64;
    let axis = OscillatorAxis::new(omega);
    let reach = 12.0 * ((n_max as f64 + 1.0) / omega).sqrt();
    let steps = 20_000;
    let mut maxima = vec![0.0f64; n_max + 1];
    let mut vals = vec![0.0; n_max + 1];
    for i in 0..=steps {
        let x = reach * i as f64 / steps as f64;
        axis.fill(x, &mut vals, None);
        let weight = (2.0 * omega_env * x * x).exp();
        for (m, v) in maxima.iter_mut().zip(&vals) {
            *m = m.max(v * v * weight);
        }
    }
    // grid maximization of a smooth function; small margin for the spacing
    maxima.iter_mut().for_each(|m| *m *= 1.01);
    let norm = state.norm_sqr();
    let bound: f64 = state
        .occupied()
        .map(|(x, y, _)| maxima[x] * maxima[y])
        .sum::<f64>()
        * norm;
    (omega_env, bound)
}

/// Rejection sampling from `|Phi(., state.tau)|^2` against a Gaussian
/// envelope. Reproducible for a given seed.
pub fn sample_ensemble(state: &ModeState, n_points: usize, seed: u64) -> Result<Ensemble> {
    if n_points == 0 {
        return Err(domain("n_points", 0.0, "n_points >= 1"));
    }
    let (omega_env, bound) = gaussian_envelope(state);
    let sigma = (1.0 / (4.0 * omega_env)).sqrt();
    let norm = state.norm_sqr();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_points);
    let mut proposals = 0u64;
    while points.len() < n_points {
        proposals += 1;
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z = Complex64::new(sigma * x, sigma * y);
        let density = state.amplitude_at(z, state.tau()).value.norm_sqr() / norm;
        let envelope = bound * (-2.0 * omega_env * z.norm_sqr()).exp();
        let u: f64 = rng.gen();
        if u * envelope < density {
            points.push(z);
        }
        if proposals.is_multiple_of(10_000) && (points.len() as f64) < 1e-3 * proposals as f64 {
            return Err(Error::Sampling(format!(
                "envelope acceptance {} / {proposals} is below 1e-3",
                points.len()
            )));
        }
    }
    Ok(Ensemble {
        points,
        seed,
        method: "rejection sampling, isotropic Gaussian envelope".to_string(),
        tau: state.tau(),
        proposals,
    })
}

/// Derives an independent stream seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Endpoints of the points that completed transport, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Transported {
    pub points: Vec<Complex64>,
    pub aborted: usize,
}

/// Carries each point along its trajectory from `tau0` to `tau1`.
/// Trajectories are independent; output order matches input order whatever
/// the number of workers.
pub fn transport(
    state: &ModeState,
    points: &[Complex64],
    tau0: f64,
    tau1: f64,
    opts: &TrajectoryOptions,
) -> Transported {
    let ends: Vec<Option<Complex64>> = points
        .par_iter()
        .map(|&z0| {
            integrate_tau(state, z0, tau0, tau1, &[], opts)
                .ok()
                .map(|p| p.last().1)
        })
        .collect();
    let aborted = ends.iter().filter(|e| e.is_none()).count();
    Transported {
        points: ends.into_iter().flatten().collect(),
        aborted,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EquivarianceOptions {
    pub n_points: usize,
    pub seed: u64,
    /// Number of fresh-vs-fresh draws forming the null distribution.
    pub null_draws: usize,
    pub trajectory: TrajectoryOptions,
}

impl Default for EquivarianceOptions {
    fn default() -> Self {
        Self {
            n_points: 10_000,
            seed: 7,
            null_draws: 100,
            trajectory: TrajectoryOptions {
                tol: 1e-8,
                ..Default::default()
            },
        }
    }
}

/// Transports a `|Phi|^2` sample from `eta0` to `eta1` and returns its
/// energy distance to a fresh sample of `|Phi(., tau(eta1))|^2`, together
/// with the number of aborted trajectories.
pub fn equivariance_distance(
    state0: &ModeState,
    eta0: f64,
    eta1: f64,
    opts: &EquivarianceOptions,
) -> Result<(f64, usize)> {
    if !(eta0 < eta1 && eta1 < 0.0) {
        return Err(domain("eta1", eta1, "eta0 < eta1 < 0"));
    }
    let k = state0.k();
    let (tau0, tau1) = (tau_of_eta(eta0, k)?, tau_of_eta(eta1, k)?);
    let start = sample_ensemble(&state0.at_tau(tau0), opts.n_points, opts.seed)?;
    let moved = transport(state0, &start.points, tau0, tau1, &opts.trajectory);
    if moved.aborted as f64 > 0.01 * opts.n_points as f64 {
        return Err(Error::NonConvergence(format!(
            "{} of {} trajectories aborted",
            moved.aborted, opts.n_points
        )));
    }
    let fresh = sample_ensemble(
        &state0.at_tau(tau1),
        opts.n_points,
        derive_seed(opts.seed, 1),
    )?;
    Ok((
        stats::energy_distance(&moved.points, &fresh.points),
        moved.aborted,
    ))
}

/// Energy distances between pairs of independent fresh samples of
/// `|Phi(., tau(eta))|^2`: the distribution of the statistic when the two
/// clouds really do come from the same density.
pub fn null_distribution(
    state0: &ModeState,
    eta: f64,
    opts: &EquivarianceOptions,
) -> Result<Vec<f64>> {
    let state = state0.at_tau(tau_of_eta(eta, state0.k())?);
    (0..opts.null_draws)
        .map(|i| {
            let i = i as u64;
            let a = sample_ensemble(&state, opts.n_points, derive_seed(opts.seed, 2 + 2 * i))?;
            let b = sample_ensemble(&state, opts.n_points, derive_seed(opts.seed, 3 + 2 * i))?;
            Ok(stats::energy_distance(&a.points, &b.points))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub distance: f64,
    pub aborted: usize,
    pub null_p95: f64,
    pub null_p99: f64,
    pub null_draws: usize,
    /// Fraction of null draws at least as large as `distance`.
    pub p_value: f64,
    /// `distance` at or below the null 95th percentile.
    pub consistent: bool,
}

impl EquivarianceReport {
    pub fn new(distance: f64, aborted: usize, null: &[f64]) -> Self {
        let null_p95 = stats::quantile(null, 0.95);
        Self {
            distance,
            aborted,
            null_p95,
            null_p99: stats::quantile(null, 0.99),
            null_draws: null.len(),
            p_value: null.iter().filter(|&&d| d >= distance).count() as f64 / null.len() as f64,
            consistent: distance <= null_p95,
        }
    }
}

/// Full test: transported-vs-fresh distance against the fresh-vs-fresh null.
pub fn equivariance_test(
    state0: &ModeState,
    eta0: f64,
    eta1: f64,
    opts: &EquivarianceOptions,
) -> Result<EquivarianceReport> {
    let (distance, aborted) = equivariance_distance(state0, eta0, eta1, opts)?;
    let null = null_distribution(state0, eta1, opts)?;
    Ok(EquivarianceReport::new(distance, aborted, &null))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schrodinger::two_level;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn stationary_states_do_not_move() {
        for (nx, ny) in [(0, 0), (1, 0), (2, 3), (5, 5)] {
            let s = ModeState::level(1.4, 8, nx, ny).unwrap();
            for &z in &[c(0.31, 0.17), c(-0.6, 0.45), c(1.1, -0.2)] {
                if let Ok(v) = velocity(&s, z, DEFAULT_NODE_EPS) {
                    assert!(v.norm() < 1e-10, "({nx},{ny}) at {z}: {v}");
                }
            }
        }
    }

    #[test]
    fn velocity_matches_closed_form_for_two_levels() {
        // Phi ~ h0(y) h0(x) (1 + 2 sqrt(omega) x e^{-i(omega tau - theta)}), so
        // v_x = -(1/2) * 2 sqrt(omega) sin(omega tau - theta) / |1 + ...|^2 * ...
        let (k, theta) = (1.0, 0.0);
        let s = two_level(k, 4, 0.0, theta).unwrap();
        for &(x, tau) in &[(0.3, 0.4), (-0.2, 1.3), (0.9, -2.0)] {
            let v = s
                .phase_gradient_at(c(x, 0.37), tau, DEFAULT_NODE_EPS)
                .unwrap();
            let expected = -(k * tau).sin() / (1.0 + 4.0 * x * (k * tau).cos() + 4.0 * x * x);
            assert!((v.re - expected).abs() < 1e-12, "{} vs {expected}", v.re);
            assert!(v.im.abs() < 1e-14);
        }
    }

    #[test]
    fn bunch_davies_trajectory_is_frozen() {
        let cosmo = Cosmology::new(1.0).unwrap();
        let g = ModeState::ground_state(2.0, 8).unwrap();
        let z0 = c(0.3, -0.2);
        let t = integrate_trajectory(&g, z0, (-3.0, -5e-5), &cosmo, &TrajectoryOptions::default())
            .unwrap();
        t.check_invariants().unwrap();
        for s in &t.samples {
            assert!((s.z - z0).norm() < 1e-12);
            let expected = z0 * ((1.0 + 4.0 * s.eta * s.eta).sqrt() / 2.0);
            assert!((s.phi - expected).norm() < 1e-11 * expected.norm());
        }
        assert!(t.diagnostics.max_speed < 1e-12);
    }

    #[test]
    fn forward_then_backward_returns() {
        let s = two_level(1.0, 6, 0.0, 0.5).unwrap();
        let z0 = c(0.4, 0.3);
        let opts = TrajectoryOptions::default();
        let fwd = integrate_tau(&s, z0, -3.0, -0.1, &[], &opts).unwrap();
        let (t1, z1) = fwd.last();
        let back = integrate_tau(&s, z1, t1, -3.0, &[], &opts).unwrap();
        assert!(
            (back.last().1 - z0).norm() < 1e-7,
            "{}",
            (back.last().1 - z0).norm()
        );
    }

    #[test]
    fn eta_picture_agrees_with_tau_picture() {
        let s = two_level(1.0, 6, 0.0, 0.9).unwrap();
        let params = TransformParams::new(1.0).unwrap();
        let (eta0, eta1) = (-3.0, -0.4);
        let z0 = c(0.25, 0.3);
        let opts = TrajectoryOptions {
            tol: 1e-11,
            ..Default::default()
        };
        let path = integrate_tau(
            &s,
            z0,
            mode_time(eta0, 1.0),
            mode_time(eta1, 1.0),
            &[],
            &opts,
        )
        .unwrap();
        let y0 = z0 * params.gamma(eta0).unwrap();
        let ys = integrate_y_eta(&s, y0, (eta0, eta1), &opts).unwrap();
        let z_end_from_y = ys.last().unwrap().1 / params.gamma(eta1).unwrap();
        assert!((z_end_from_y - path.last().1).norm() < 1e-8);
    }

    #[test]
    fn node_start_is_rejected() {
        let s = ModeState::level(1.0, 4, 1, 0).unwrap();
        let err = integrate_tau(
            &s,
            c(0.0, 0.3),
            -1.0,
            -0.5,
            &[],
            &TrajectoryOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::TrajectoryAborted { .. }));
    }

    #[test]
    fn ground_state_sample_moments_and_ks() {
        let k = 1.5;
        let g = ModeState::ground_state(k, 8).unwrap();
        let n = 20_000;
        let e = sample_ensemble(&g, n, 11).unwrap();
        let r2: Vec<f64> = e.points.iter().map(|p| p.norm_sqr()).collect();
        let mean = r2.iter().sum::<f64>() / n as f64;
        // |z|^2 is exponential with mean 1/(2 omega), standard deviation equal to the mean
        let expected = 1.0 / (2.0 * k);
        assert!((mean - expected).abs() < 3.0 * expected / (n as f64).sqrt());
        let radii: Vec<f64> = r2.iter().map(|x| x.sqrt()).collect();
        let d = stats::ks_statistic(&radii, |r| 1.0 - (-2.0 * k * r * r).exp());
        assert!(d < stats::ks_critical(0.01, n), "KS {d}");
        // envelope is exact up to its 1.01 margin per axis
        assert!((e.proposals as f64) < 1.03 * n as f64);
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = two_level(1.0, 6, 0.0, 0.0).unwrap();
        let a = sample_ensemble(&s, 500, 3).unwrap();
        let b = sample_ensemble(&s, 500, 3).unwrap();
        let c = sample_ensemble(&s, 500, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn excited_state_marginal_matches() {
        // level (1, 0): x-marginal density 2 sqrt(2 omega / pi) * 2 omega x^2 e^{-2 omega x^2}... test
        // the second moment instead: <x^2> = 3/(4 omega), <y^2> = 1/(4 omega)
        let k = 1.0;
        let s = ModeState::level(k, 4, 1, 0).unwrap();
        let n = 40_000;
        let e = sample_ensemble(&s, n, 5).unwrap();
        let mx = e.points.iter().map(|p| p.re * p.re).sum::<f64>() / n as f64;
        let my = e.points.iter().map(|p| p.im * p.im).sum::<f64>() / n as f64;
        assert!((mx - 0.75).abs() < 0.02, "{mx}");
        assert!((my - 0.25).abs() < 0.01, "{my}");
    }

    #[test]
    fn small_equivariance_check() {
        let s = two_level(1.0, 6, 0.0, 0.0).unwrap();
        // half a beat period in tau starting at tau(-5)
        let eta0 = -5.0;
        let tau1 = mode_time(eta0, 1.0) + PI;
        let eta1 = eta_of_tau(tau1, 1.0);
        let opts = EquivarianceOptions {
            n_points: 1500,
            null_draws: 40,
            seed: 21,
            ..Default::default()
        };
        let report = equivariance_test(&s, eta0, eta1, &opts).unwrap();
        assert_eq!(report.aborted, 0);
        assert!(report.distance <= report.null_p99, "{report:?}");
    }

    #[test]
    fn seeds_are_distinct() {
        let seeds: Vec<u64> = (0..100).map(|i| derive_seed(7, i)).collect();
        let mut sorted = seeds.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), seeds.len());
    }
}
