//! Non-product states over a few modes.
//!
//! Modes never interact, so a finite sum of products stays a sum of products
//! under evolution: every factor for mode `k` is advanced by its own mode
//! time. Trajectories of all modes are integrated jointly in conformal time,
//! the only clock the modes share.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bohm::{
    gaussian_envelope_with, output_stops, Diagnostics, Trajectory, TrajectoryOptions,
    TrajectorySample,
};
use crate::coords::{dtau_deta, eta_of_tau, mode_time, phi_from_z, Cosmology};
use crate::error::{domain, Error, Result};
use crate::freeze::{extract_limit, FreezeOptions, FreezeReport, DEEP_FREEZE};
use crate::ode::{self, OdeSystem, StepOptions};
use crate::schrodinger::{Amplitude, ModeState};

pub const MAX_MODES: usize = 4;
pub const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiModeState {
    modes: Vec<f64>,
    terms: Vec<(Complex64, Vec<ModeState>)>,
    eta: f64,
}

impl MultiModeState {
    /// Builds `sum_j a_j prod_k Phi_k^(j)` at conformal time `eta`. Factors
    /// may be given at any mode time; they are moved to `tau_k(eta)`. The
    /// result is normalized.
    pub fn new(modes: &[f64], terms: Vec<(Complex64, Vec<ModeState>)>, eta: f64) -> Result<Self> {
        if modes.is_empty() || modes.len() > MAX_MODES {
            return Err(domain("modes", modes.len() as f64, "1 <= K <= 4"));
        }
        if terms.is_empty() || terms.len() > MAX_RANK {
            return Err(domain("terms", terms.len() as f64, "1 <= rank <= 8"));
        }
        for (i, &k) in modes.iter().enumerate() {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::DegenerateMode);
            }
            // one representative per (k, -k) pair
            if modes[..i].contains(&k) {
                return Err(Error::Incompatible(format!("mode k = {k} listed twice")));
            }
        }
        if !(eta < 0.0) {
            return Err(domain("eta", eta, "eta < 0"));
        }
        let mut moved = Vec::with_capacity(terms.len());
        for (a, factors) in terms {
            if factors.len() != modes.len() {
                return Err(Error::Incompatible(format!(
                    "{} factors for {} modes",
                    factors.len(),
                    modes.len()
                )));
            }
            let mut fs = Vec::with_capacity(factors.len());
            for (f, &k) in factors.iter().zip(modes) {
                if f.k() != k {
                    return Err(Error::Incompatible(format!(
                        "factor with k = {} in slot for k = {k}",
                        f.k()
                    )));
                }
                fs.push(f.at_tau(mode_time(eta, k)));
            }
            moved.push((a, fs));
        }
        for m in 0..modes.len() {
            let n = moved[0].1[m].n_basis();
            if moved.iter().any(|t| t.1[m].n_basis() != n) {
                return Err(Error::Incompatible(format!(
                    "mode {m}: basis sizes differ between terms"
                )));
            }
        }
        let mut state = Self {
            modes: modes.to_vec(),
            terms: moved,
            eta,
        };
        let norm = state.norm_sqr()?;
        if !(norm > 0.0) {
            return Err(Error::ZeroNorm);
        }
        let scale = norm.sqrt().recip();
        state.terms.iter_mut().for_each(|t| t.0 *= scale);
        Ok(state)
    }

    /// The product of one factor per mode.
    pub fn product(factors: Vec<ModeState>, eta: f64) -> Result<Self> {
        let modes: Vec<f64> = factors.iter().map(ModeState::k).collect();
        Self::new(&modes, vec![(Complex64::new(1.0, 0.0), factors)], eta)
    }

    pub fn modes(&self) -> &[f64] {
        &self.modes
    }

    pub fn terms(&self) -> &[(Complex64, Vec<ModeState>)] {
        &self.terms
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `sum_ij a_i* a_j prod_k <f_ik | f_jk>`
    pub fn norm_sqr(&self) -> Result<f64> {
        let mut total = Complex64::new(0.0, 0.0);
        for (ai, fi) in &self.terms {
            for (aj, fj) in &self.terms {
                let mut prod = ai.conj() * aj;
                for (a, b) in fi.iter().zip(fj) {
                    prod *= a.overlap(b)?;
                }
                total += prod;
            }
        }
        Ok(total.re)
    }

    /// Advances every factor by its own `tau_k(eta + d_eta) - tau_k(eta)`.
    pub fn evolve(&self, d_eta: f64) -> Result<Self> {
        let target = self.eta + d_eta;
        if !(target < 0.0) {
            return Err(domain("eta + d_eta", target, "eta + d_eta < 0"));
        }
        Ok(self.extend_to(target))
    }

    /// Evolution to any conformal time, including `eta >= 0`: each mode
    /// time, and so each factor's propagator, continues smoothly through the
    /// end of the patch.
    pub fn extend_to(&self, eta: f64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(a, fs)| {
                (
                    *a,
                    fs.iter()
                        .zip(&self.modes)
                        .map(|(f, &k)| f.at_tau(mode_time(eta, k)))
                        .collect(),
                )
            })
            .collect();
        Self {
            modes: self.modes.clone(),
            terms,
            eta,
        }
    }

    fn reference_amplitude(&self) -> f64 {
        self.terms[0]
            .1
            .iter()
            .map(ModeState::reference_amplitude)
            .product()
    }

    /// `Phi(config)` and its partial derivatives in every mode, at `eta`.
    pub fn amplitudes_at(
        &self,
        config: &[Complex64],
        eta: f64,
    ) -> Result<(Complex64, Vec<Amplitude>)> {
        if config.len() != self.modes.len() {
            return Err(Error::Incompatible(format!(
                "{} coordinates for {} modes",
                config.len(),
                self.modes.len()
            )));
        }
        let taus: Vec<f64> = self.modes.iter().map(|&k| mode_time(eta, k)).collect();
        let zero = Complex64::new(0.0, 0.0);
        let mut value = zero;
        let mut grads = vec![(zero, zero); self.modes.len()];
        let mut factor_amps = Vec::with_capacity(self.modes.len());
        for (a, fs) in &self.terms {
            factor_amps.clear();
            factor_amps.extend(
                fs.iter()
                    .zip(config)
                    .zip(&taus)
                    .map(|((f, &z), &t)| f.amplitude_at(z, t)),
            );
            let prod: Complex64 = factor_amps.iter().map(|p| p.value).product();
            value += a * prod;
            for m in 0..self.modes.len() {
                let others: Complex64 = factor_amps
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != m)
                    .map(|(_, p)| p.value)
                    .product();
                grads[m].0 += a * others * factor_amps[m].d_dx;
                grads[m].1 += a * others * factor_amps[m].d_dy;
            }
        }
        let amps = grads
            .into_iter()
            .map(|(d_dx, d_dy)| Amplitude { value, d_dx, d_dy })
            .collect();
        Ok((value, amps))
    }

    fn check_node(&self, config: &[Complex64], value: Complex64, eps_node: f64) -> Result<()> {
        let threshold = eps_node * self.reference_amplitude();
        if !(value.norm() >= threshold) {
            return Err(Error::NodeProximity {
                z: config[0],
                amplitude: value.norm(),
                threshold,
            });
        }
        Ok(())
    }

    /// `dz_k/dtau_k = d/dz_k* Im log Phi` for every mode, at `eta`.
    pub fn mode_time_velocities(
        &self,
        config: &[Complex64],
        eta: f64,
        eps_node: f64,
    ) -> Result<Vec<Complex64>> {
        let (value, amps) = self.amplitudes_at(config, eta)?;
        self.check_node(config, value, eps_node)?;
        Ok(amps.iter().map(Amplitude::phase_gradient).collect())
    }
}

/// `dz_k/deta = gamma_k^-2 d/dz_k* Im log Phi` at the state's own time.
pub fn velocity_k(
    state: &MultiModeState,
    config: &[Complex64],
    k_index: usize,
    eps_node: f64,
) -> Result<Complex64> {
    let k = *state
        .modes
        .get(k_index)
        .ok_or_else(|| Error::Incompatible(format!("no mode {k_index}")))?;
    let v = state.mode_time_velocities(config, state.eta, eps_node)?;
    Ok(v[k_index] * dtau_deta(state.eta, k))
}

/// Returns a copy advanced by `d_eta`.
pub fn evolve_multimode(state: &MultiModeState, d_eta: f64) -> Result<MultiModeState> {
    state.evolve(d_eta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct MultiOptions {
    pub trajectory: TrajectoryOptions,
    /// Per-mode factors on the guidance velocity; empty means all 1. Values
    /// other than 1 give a deliberately wrong law.
    pub velocity_scales: Vec<f64>,
    /// Conformal times to record in addition to the usual output stops.
    pub extra_stops: Vec<f64>,
}

impl MultiOptions {
    fn scale(&self, m: usize) -> f64 {
        self.velocity_scales.get(m).copied().unwrap_or(1.0)
    }
}

struct JointGuidance<'a> {
    state: &'a MultiModeState,
    opts: &'a MultiOptions,
    config: Vec<Complex64>,
    min_amplitude: f64,
    max_speed: f64,
}

impl JointGuidance<'_> {
    fn velocities(&mut self, eta: f64, y: &[f64]) -> Result<Vec<Complex64>> {
        for (m, z) in self.config.iter_mut().enumerate() {
            *z = Complex64::new(y[2 * m], y[2 * m + 1]);
        }
        let (value, amps) = self.state.amplitudes_at(&self.config, eta)?;
        self.min_amplitude = self.min_amplitude.min(value.norm());
        self.state
            .check_node(&self.config, value, self.opts.trajectory.eps_node)?;
        Ok(amps
            .iter()
            .enumerate()
            .map(|(m, a)| a.phase_gradient() * self.opts.scale(m))
            .collect())
    }
}

impl OdeSystem for JointGuidance<'_> {
    fn dim(&self) -> usize {
        2 * self.state.modes.len()
    }

    fn rhs(&mut self, eta: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let v = self.velocities(eta, y)?;
        for (m, (v, &k)) in v.iter().zip(&self.state.modes).enumerate() {
            self.max_speed = self.max_speed.max(v.norm());
            let w = v * dtau_deta(eta, k);
            dy[2 * m] = w.re;
            dy[2 * m + 1] = w.im;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSample {
    pub tau: f64,
    pub z: Complex64,
    pub phi: Complex64,
    /// The guidance velocity `dz/dtau` actually used at this sample.
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSample {
    pub eta: f64,
    pub modes: Vec<ModeSample>,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTrajectory {
    pub modes: Vec<f64>,
    pub hubble: f64,
    pub samples: Vec<MultiSample>,
    /// `max_speed` is the largest `|dz_k/dtau_k|` over all modes.
    pub diagnostics: Diagnostics,
}

/// Integrates all mode coordinates jointly in `eta` from the state's time.
pub fn integrate_multimode(
    state0: &MultiModeState,
    config0: &[Complex64],
    eta_end: f64,
    cosmo: &Cosmology,
    opts: &MultiOptions,
) -> Result<MultiTrajectory> {
    let eta_start = state0.eta;
    if !(eta_start < eta_end && eta_end < 0.0) {
        return Err(domain("eta_end", eta_end, "eta_start < eta_end < 0"));
    }
    if config0.len() != state0.modes.len() {
        return Err(Error::Incompatible(format!(
            "{} coordinates for {} modes",
            config0.len(),
            state0.modes.len()
        )));
    }
    let mut stops: Vec<f64> = state0
        .modes
        .iter()
        .flat_map(|&k| output_stops(k, eta_start, eta_end, &opts.trajectory))
        .chain(
            opts.extra_stops
                .iter()
                .copied()
                .filter(|&e| e > eta_start && e < eta_end),
        )
        .collect();
    stops.sort_by(f64::total_cmp);
    stops.dedup();

    let mut sys = JointGuidance {
        state: state0,
        opts,
        config: config0.to_vec(),
        min_amplitude: f64::INFINITY,
        max_speed: 0.0,
    };
    let y0: Vec<f64> = config0.iter().flat_map(|z| [z.re, z.im]).collect();
    let step = StepOptions {
        rtol: opts.trajectory.tol,
        atol: opts.trajectory.tol,
        max_steps: opts.trajectory.max_steps,
        ..Default::default()
    };
    let sol = ode::integrate(&mut sys, eta_start, &y0, eta_end, &stops, &step).map_err(|f| {
        Error::TrajectoryAborted {
            tau: f.t,
            reason: f.error.to_string(),
            partial: f
                .samples
                .iter()
                .map(|s| (s.t, Complex64::new(s.y[0], s.y[1])))
                .collect(),
        }
    })?;
    let diagnostics = Diagnostics {
        min_amplitude: sys.min_amplitude,
        max_speed: sys.max_speed,
        accepted_steps: sol.stats.accepted,
        rejected_steps: sol.stats.rejected,
        node_retries: sol.stats.refusals,
        evaluations: sol.stats.evaluations,
    };
    let mut samples = Vec::with_capacity(sol.samples.len());
    for s in &sol.samples {
        let v = sys.velocities(s.t, &s.y)?;
        let (value, _) = state0.amplitudes_at(&sys.config, s.t)?;
        let modes = state0
            .modes
            .iter()
            .enumerate()
            .map(|(m, &k)| {
                let z = Complex64::new(s.y[2 * m], s.y[2 * m + 1]);
                ModeSample {
                    tau: mode_time(s.t, k),
                    z,
                    phi: phi_from_z(z, s.t, k, cosmo),
                    speed: v[m].norm(),
                }
            })
            .collect();
        samples.push(MultiSample {
            eta: s.t,
            modes,
            amplitude: value.norm(),
        });
    }
    Ok(MultiTrajectory {
        modes: state0.modes.clone(),
        hubble: cosmo.hubble(),
        samples,
        diagnostics,
    })
}

impl MultiTrajectory {
    /// The single-mode view of mode `m`.
    pub fn mode(&self, m: usize) -> Trajectory {
        Trajectory {
            k: self.modes[m],
            hubble: self.hubble,
            samples: self
                .samples
                .iter()
                .map(|s| TrajectorySample {
                    eta: s.eta,
                    tau: s.modes[m].tau,
                    z: s.modes[m].z,
                    phi: s.modes[m].phi,
                    amplitude: s.amplitude,
                })
                .collect(),
            diagnostics: self.diagnostics,
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        (0..self.modes.len()).try_for_each(|m| self.mode(m).check_invariants())
    }

    /// Wide table: `eta`, then `tau_m,re_z_m,im_z_m,re_phi_m,im_phi_m` for
    /// every mode `m`, then `abs_Phi`.
    pub fn write_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "eta")?;
        for m in 0..self.modes.len() {
            write!(w, ",tau_{m},re_z_{m},im_z_{m},re_phi_{m},im_phi_{m}")?;
        }
        writeln!(w, ",abs_Phi")?;
        for s in &self.samples {
            write!(w, "{:e}", s.eta)?;
            for p in &s.modes {
                write!(
                    w,
                    ",{:e},{:e},{:e},{:e},{:e}",
                    p.tau, p.z.re, p.z.im, p.phi.re, p.phi.im
                )?;
            }
            writeln!(w, ",{:e}", s.amplitude)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointVerdict {
    /// Latest per-mode onset: every mode is within tolerance after it.
    pub tau0: Option<f64>,
    /// Largest per-mode `C`.
    pub c: f64,
    pub c_within_band: bool,
    pub tau0_above_floor: bool,
    pub all_converged: bool,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiFreezeResult {
    pub trajectory: MultiTrajectory,
    pub reports: Vec<FreezeReport>,
    pub verdict: JointVerdict,
}

/// Runs the joint trajectory from `state0.eta()` into the deep freeze regime
/// of the largest mode and reports freezing per mode and jointly.
pub fn freeze_scan_multimode(
    state0: &MultiModeState,
    config0: &[Complex64],
    cosmo: &Cosmology,
    freeze: &FreezeOptions,
    velocity_scales: &[f64],
    extra_stops: &[f64],
) -> Result<MultiFreezeResult> {
    let k_max = state0.modes.iter().copied().fold(0.0, f64::max);
    let opts = MultiOptions {
        trajectory: freeze.trajectory,
        velocity_scales: velocity_scales.to_vec(),
        extra_stops: extra_stops.to_vec(),
    };
    let traj = integrate_multimode(state0, config0, -DEEP_FREEZE / k_max, cosmo, &opts)?;
    let mut reports = Vec::with_capacity(state0.modes.len());
    for m in 0..state0.modes.len() {
        let view = traj.mode(m);
        let c = traj
            .samples
            .iter()
            .filter(|s| s.modes[m].tau > -1.0 && s.modes[m].tau < 0.0)
            .map(|s| s.modes[m].speed)
            .fold(0.0, f64::max);
        extract_limit(&view, freeze.epsilon)?;
        reports.push(FreezeReport::assemble(&view, freeze.epsilon, c)?);
    }
    let onsets: Option<Vec<f64>> = reports.iter().map(|r| r.tau0).collect();
    let tau0 = onsets.map(|v| v.into_iter().fold(f64::NEG_INFINITY, f64::max));
    let c = reports.iter().map(|r| r.assumption_c).fold(0.0, f64::max);
    let c_within_band = c < freeze.c_band;
    let tau0_above_floor = tau0.is_some_and(|t| t > freeze.tau0_floor || t == f64::NEG_INFINITY);
    let all_converged = reports.iter().all(|r| r.converged);
    Ok(MultiFreezeResult {
        trajectory: traj,
        reports,
        verdict: JointVerdict {
            tau0,
            c,
            c_within_band,
            tau0_above_floor,
            all_converged,
            satisfied: c_within_band && tau0_above_floor && all_converged,
        },
    })
}

/// Joint configurations drawn i.i.d. from `|Phi(., eta)|^2` by rejection
/// sampling. The envelope is a product of per-mode Gaussians:
/// `|Phi| <= sum_j |a_j| prod_k sqrt(B_jk) exp(-omega'_k |z_k|^2)`.
pub fn sample_multimode(
    state: &MultiModeState,
    n_points: usize,
    seed: u64,
) -> Result<Vec<Vec<Complex64>>> {
    if n_points == 0 {
        return Err(domain("n_points", 0.0, "n_points >= 1"));
    }
    let n_modes = state.modes.len();
    let n_max: Vec<usize> = (0..n_modes)
        .map(|m| {
            state
                .terms
                .iter()
                .flat_map(|t| t.1[m].occupied().map(|(x, y, _)| x.max(y)))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut omega_env = vec![0.0; n_modes];
    let mut root_bound = 0.0;
    for (a, fs) in &state.terms {
        let mut prod = a.norm();
        for (m, f) in fs.iter().enumerate() {
            let (w, b) = gaussian_envelope_with(f, n_max[m]);
            omega_env[m] = w;
            prod *= b.sqrt();
        }
        root_bound += prod;
    }
    let bound = root_bound * root_bound;
    let sigmas: Vec<f64> = omega_env.iter().map(|w| (1.0 / (4.0 * w)).sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_points);
    let mut proposals = 0u64;
    let mut config = vec![Complex64::new(0.0, 0.0); n_modes];
    while points.len() < n_points {
        proposals += 1;
        let mut exponent = 0.0;
        for (z, (&sigma, &w)) in config.iter_mut().zip(sigmas.iter().zip(&omega_env)) {
            let x: f64 = rng.sample(StandardNormal);
            let y: f64 = rng.sample(StandardNormal);
            *z = Complex64::new(sigma * x, sigma * y);
            exponent -= 2.0 * w * z.norm_sqr();
        }
        let (value, _) = state.amplitudes_at(&config, state.eta)?;
        let u: f64 = rng.gen();
        if u * bound * exponent.exp() < value.norm_sqr() {
            points.push(config.clone());
        }
        if proposals.is_multiple_of(10_000) && (points.len() as f64) < 1e-3 * proposals as f64 {
            return Err(Error::Sampling(format!(
                "envelope acceptance {} / {proposals} is below 1e-3",
                points.len()
            )));
        }
    }
    Ok(points)
}

/// Start of a window reaching mode time `tau_start` for every mode.
pub fn joint_start(modes: &[f64], tau_start: f64) -> f64 {
    modes
        .iter()
        .map(|&k| eta_of_tau(tau_start, k))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bohm::{integrate_trajectory, TrajectoryOptions};
    use crate::schrodinger::two_level;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn one() -> Complex64 {
        c(1.0, 0.0)
    }

    fn entangled(eta: f64) -> MultiModeState {
        let (k1, k2) = (1.0, 2.0);
        let t1 = vec![
            ModeState::level(k1, 6, 0, 0).unwrap(),
            ModeState::level(k2, 6, 1, 0).unwrap(),
        ];
        let t2 = vec![
            ModeState::level(k1, 6, 1, 0).unwrap(),
            ModeState::level(k2, 6, 0, 0).unwrap(),
        ];
        MultiModeState::new(&[k1, k2], vec![(one(), t1), (one(), t2)], eta).unwrap()
    }

    #[test]
    fn construction_normalizes_and_validates() {
        let s = entangled(-2.0);
        assert!((s.norm_sqr().unwrap() - 1.0).abs() < 1e-12);
        assert!((s.terms()[0].0.norm() - 0.5f64.sqrt()).abs() < 1e-12);
        let g = ModeState::ground_state(1.0, 4).unwrap();
        assert!(
            MultiModeState::product(vec![g.clone(), g.clone()], -1.0).is_err(),
            "duplicate k"
        );
        assert!(MultiModeState::product(vec![g.clone()], 0.0).is_err());
        assert!(MultiModeState::product(vec![g; 5], -1.0).is_err());
    }

    #[test]
    fn single_term_evolution_is_per_mode() {
        let f1 = two_level(1.0, 6, 0.0, 0.3).unwrap();
        let f2 = two_level(3.0, 6, 0.0, 1.1).unwrap();
        let s = MultiModeState::product(vec![f1.clone(), f2.clone()], -2.0).unwrap();
        let e = s.evolve(1.5).unwrap();
        for (f, orig) in e.terms()[0].1.iter().zip([&f1, &f2]) {
            let expected = orig.at_tau(mode_time(-0.5, orig.k()));
            for (a, b) in f.coeffs().iter().zip(expected.coeffs()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
        assert!((e.norm_sqr().unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn evolution_is_reversible() {
        let s = entangled(-3.0);
        let back = s.evolve(2.5).unwrap().evolve(-2.5).unwrap();
        for ((a, fa), (b, fb)) in s.terms().iter().zip(back.terms()) {
            assert!((a - b).norm() < 1e-12);
            for (x, y) in fa.iter().zip(fb) {
                for (p, q) in x.coeffs().iter().zip(y.coeffs()) {
                    assert!((p - q).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn extension_through_the_end_of_the_patch() {
        let s = entangled(-3.0);
        for eta in [-1e-10, 0.0, 0.5] {
            let e = s.extend_to(eta);
            assert!((e.norm_sqr().unwrap() - 1.0).abs() < 1e-10);
        }
        assert!(s.evolve(3.0).is_err());
    }

    #[test]
    fn stationary_products_have_no_velocity() {
        let s = MultiModeState::product(
            vec![
                ModeState::level(1.0, 6, 2, 1).unwrap(),
                ModeState::level(2.0, 6, 0, 0).unwrap(),
            ],
            -1.5,
        )
        .unwrap();
        for m in 0..2 {
            let v = velocity_k(&s, &[c(0.3, 0.4), c(-0.2, 0.1)], m, 1e-8).unwrap();
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn product_velocity_is_single_mode_velocity_over_gamma_squared() {
        let f1 = two_level(1.0, 6, 0.0, 0.3).unwrap();
        let f2 = two_level(2.0, 6, 0.0, 0.0).unwrap();
        let eta = -1.3;
        let s = MultiModeState::product(vec![f1.clone(), f2], eta).unwrap();
        let z = [c(0.3, 0.1), c(0.2, -0.4)];
        let v = velocity_k(&s, &z, 0, 1e-8).unwrap();
        let single = f1
            .phase_gradient_at(z[0], mode_time(eta, 1.0), 1e-8)
            .unwrap()
            * dtau_deta(eta, 1.0);
        assert!((v - single).norm() < 1e-14);
    }

    #[test]
    fn entangled_velocity_depends_on_other_mode() {
        let s = entangled(-1.0);
        let z1 = c(0.3, 0.2);
        let va = velocity_k(&s, &[z1, c(0.1, 0.0)], 0, 1e-8).unwrap();
        let vb = velocity_k(&s, &[z1, c(0.6, 0.3)], 0, 1e-8).unwrap();
        assert!((va - vb).norm() > 1e-3, "{va} {vb}");

        // finite-difference phase oracle on the joint amplitude
        let config = [z1, c(0.6, 0.3)];
        let phase = |dx: f64, dy: f64| {
            let (v, _) = s
                .amplitudes_at(&[config[0] + c(dx, dy), config[1]], s.eta())
                .unwrap();
            v.arg()
        };
        let h = 1e-5;
        let gx = (phase(h, 0.0) - phase(-h, 0.0)) / (2.0 * h);
        let gy = (phase(0.0, h) - phase(0.0, -h)) / (2.0 * h);
        let fd = c(0.5 * gx, 0.5 * gy) * dtau_deta(s.eta(), 1.0);
        assert!((vb - fd).norm() < 1e-6, "{vb} vs {fd}");
    }

    #[test]
    fn bunch_davies_product_is_frozen() {
        let cosmo = Cosmology::new(1.0).unwrap();
        let s = MultiModeState::product(
            vec![
                ModeState::ground_state(1.0, 4).unwrap(),
                ModeState::ground_state(2.0, 4).unwrap(),
            ],
            -4.0,
        )
        .unwrap();
        let z0 = [c(0.3, 0.1), c(-0.2, 0.25)];
        let t = integrate_multimode(&s, &z0, -5e-5, &cosmo, &MultiOptions::default()).unwrap();
        t.check_invariants().unwrap();
        for smp in &t.samples {
            for (m, p) in smp.modes.iter().enumerate() {
                let k = s.modes()[m];
                let expected = z0[m] / k * (1.0 + k * k * smp.eta * smp.eta).sqrt();
                assert!((p.phi - expected).norm() < 1e-12 * expected.norm());
            }
        }
        let r =
            freeze_scan_multimode(&s, &z0, &cosmo, &FreezeOptions::default(), &[], &[]).unwrap();
        assert!(r.verdict.satisfied);
    }

    #[test]
    fn product_matches_single_mode_runs() {
        let cosmo = Cosmology::new(1.0).unwrap();
        let f1 = two_level(1.0, 6, 0.0, 0.0).unwrap();
        let f2 = two_level(2.0, 6, 0.0, 0.7).unwrap();
        let eta0 = -3.0;
        let s = MultiModeState::product(vec![f1.clone(), f2.clone()], eta0).unwrap();
        let z0 = [c(0.4, 0.2), c(0.3, -0.1)];
        let tol = 1e-10;
        let opts = MultiOptions {
            trajectory: TrajectoryOptions {
                tol,
                ..Default::default()
            },
            ..Default::default()
        };
        let joint = integrate_multimode(&s, &z0, -1e-3, &cosmo, &opts).unwrap();
        for (m, f) in [f1, f2].iter().enumerate() {
            let single =
                integrate_trajectory(f, z0[m], (eta0, -1e-3), &cosmo, &opts.trajectory).unwrap();
            let d = (single.last().z - joint.samples.last().unwrap().modes[m].z).norm();
            assert!(d < 10.0 * tol, "mode {m}: {d}");
        }
    }

    #[test]
    fn scaled_velocity_breaks_joint_bound() {
        let cosmo = Cosmology::new(1.0).unwrap();
        let s = entangled(joint_start(&[1.0, 2.0], -3.0));
        let z0 = [c(0.4, 0.3), c(0.35, -0.2)];
        let opts = FreezeOptions::default();
        let honest = freeze_scan_multimode(&s, &z0, &cosmo, &opts, &[], &[]).unwrap();
        assert!(honest.verdict.c_within_band, "{:?}", honest.verdict);
        let scaled = freeze_scan_multimode(&s, &z0, &cosmo, &opts, &[100.0, 1.0], &[]).unwrap();
        assert!(!scaled.verdict.c_within_band, "{:?}", scaled.verdict);
    }

    #[test]
    fn joint_sample_second_moments() {
        // equal mixture of (0,0)x(1,0) and (1,0)x(0,0): <x_1^2> = (1/4 + 3/4) / 2 / k1
        let s = entangled(-1.0);
        let n = 20_000;
        let pts = sample_multimode(&s, n, 9).unwrap();
        let x1 = pts.iter().map(|p| p[0].re * p[0].re).sum::<f64>() / n as f64;
        let y2 = pts.iter().map(|p| p[1].im * p[1].im).sum::<f64>() / n as f64;
        assert!((x1 - 0.5).abs() < 0.02, "{x1}");
        assert!((y2 - 0.125).abs() < 0.005, "{y2}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn norm_is_conserved(d_eta in 0.0f64..2.9, phase in 0.0f64..6.3) {
            let (k1, k2) = (0.7, 1.9);
            let t1 = vec![two_level(k1, 6, 0.0, phase).unwrap(), ModeState::level(k2, 6, 0, 1).unwrap()];
            let t2 = vec![ModeState::level(k1, 6, 2, 0).unwrap(), two_level(k2, 6, 0.0, 0.0).unwrap()];
            let s = MultiModeState::new(&[k1, k2], vec![(c(0.6, 0.2), t1), (c(-0.3, 0.5), t2)], -3.0).unwrap();
            let e = s.evolve(d_eta).unwrap();
            prop_assert!((e.norm_sqr().unwrap() - 1.0).abs() < 1e-10);
        }
    }
}
