//! Late-time freezing of a guided mode: the limit `c_k`, the relative error
//! of the asymptote `phi(eta) ~ c_k sqrt(1 + k^2 eta^2)`, the onset time
//! after which that error stays below `epsilon`, and whether the onset can
//! be chosen independently of `k`.
//!
//! Since `phi = H z envelope / k` and `c_k = H z(0) / k`, the relative error
//! at `eta` is exactly `|z(tau(eta)) - z(0)| / |z(0)|`. The onset is therefore
//! measured as a mode time `tau0`; following the usual convention the
//! reported conformal onset is `eta0 = tau0`, which is valid because
//! `tau(eta) > eta` on the whole patch. The raw crossing in `eta` is kept as
//! [`FreezeReport::eta_crossing`].

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bohm::{integrate_trajectory, Trajectory, TrajectoryOptions};
use crate::coords::{envelope, eta_of_tau, eta_to_t, mode_time, Cosmology};
use crate::error::{domain, Error, Result};
use crate::schrodinger::ModeState;

/// Deepest endpoint used for limit extraction, in units of `1/k`.
pub const DEEP_FREEZE: f64 = 1e-4;

const SPEED_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitEstimate {
    pub c: Complex64,
    /// The estimate from the previous dyadic endpoint, `2 eta_end`.
    pub previous: Complex64,
    /// `|c - previous| / |c|`, or the absolute difference when `c = 0`.
    pub change: f64,
    pub converged: bool,
}

/// `c_k = H z(eta_end) / k`, checked against the estimate at `2 eta_end`.
pub fn extract_limit(traj: &Trajectory, epsilon: f64) -> Result<LimitEstimate> {
    let last = traj.last();
    if last.eta.abs() > DEEP_FREEZE / traj.k * (1.0 + 1e-12) {
        return Err(domain("eta_end", last.eta, "|eta_end| <= 1e-4 / k"));
    }
    let prev = traj.at_eta(2.0 * last.eta).ok_or_else(|| {
        Error::NonConvergence(format!(
            "no sample at the dyadic endpoint {}",
            2.0 * last.eta
        ))
    })?;
    let scale = traj.hubble / traj.k;
    let (c, previous) = (last.z * scale, prev.z * scale);
    let diff = (c - previous).norm();
    let change = if c.norm() > 0.0 {
        diff / c.norm()
    } else {
        diff
    };
    Ok(LimitEstimate {
        c,
        previous,
        change,
        converged: change <= epsilon / 10.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub points: Vec<(f64, f64)>,
    /// Set when `c_k = 0`: the points are then `|phi(eta)|`, not a relative error.
    pub absolute: bool,
}

/// `err(eta) = |phi(eta) - c sqrt(1 + k^2 eta^2)| / |c sqrt(1 + k^2 eta^2)|`
/// at every sample.
pub fn relative_error_curve(traj: &Trajectory, c: Complex64) -> ErrorCurve {
    let absolute = c == Complex64::new(0.0, 0.0);
    let points = traj
        .samples
        .iter()
        .map(|s| {
            let asymptote = c * envelope(s.eta, traj.k);
            let dev = (s.phi - asymptote).norm();
            (
                s.eta,
                if absolute {
                    dev
                } else {
                    dev / asymptote.norm()
                },
            )
        })
        .collect();
    ErrorCurve { points, absolute }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "eta")]
pub enum Onset {
    /// Every sample is already within tolerance.
    AlwaysSatisfied,
    /// The latest sample at which the error is not below tolerance.
    At(f64),
    /// The error is not below tolerance even at the last sample.
    NotAttained,
}

impl Onset {
    pub fn eta(&self) -> Option<f64> {
        match *self {
            Onset::AlwaysSatisfied => Some(f64::NEG_INFINITY),
            Onset::At(eta) => Some(eta),
            Onset::NotAttained => None,
        }
    }
}

/// Latest sampled `eta0` such that `err < epsilon` at every later sample.
/// The curve must be ordered by `eta`.
pub fn find_onset(curve: &[(f64, f64)], epsilon: f64) -> Onset {
    match curve.iter().rposition(|&(_, err)| !(err < epsilon)) {
        None => Onset::AlwaysSatisfied,
        Some(i) if i + 1 == curve.len() => Onset::NotAttained,
        Some(i) => Onset::At(curve[i].0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezeReport {
    pub k: f64,
    pub hubble: f64,
    pub c_k: Complex64,
    pub epsilon: f64,
    /// Onset in mode time; `-inf` when always satisfied, absent when not attained.
    pub tau0: Option<f64>,
    /// Conformal onset, set equal to `tau0`.
    pub eta0: Option<f64>,
    /// Cosmic onset time for `eta0`.
    pub t0: Option<f64>,
    /// The sampled conformal time of the last violation of the tolerance.
    pub eta_crossing: Option<f64>,
    pub onset: Onset,
    /// `sup |dz/dtau|` over the samples with `tau` in `(-1, 0)`.
    pub assumption_c: f64,
    pub limit: LimitEstimate,
    pub error_curve: ErrorCurve,
    pub converged: bool,
}

impl FreezeReport {
    /// Builds the report for a trajectory of `state` that ends in the deep
    /// freeze regime.
    pub fn from_trajectory(
        traj: &Trajectory,
        state: &ModeState,
        epsilon: f64,
        eps_node: f64,
    ) -> Result<Self> {
        let assumption_c = traj.max_speed_between(state, -1.0, 0.0, eps_node)?;
        Self::assemble(traj, epsilon, assumption_c)
    }

    /// Builds the report with an externally measured `C`.
    pub fn assemble(traj: &Trajectory, epsilon: f64, assumption_c: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(domain("epsilon", epsilon, "0 < epsilon < 1"));
        }
        let cosmo = Cosmology::new(traj.hubble)?;
        let limit = extract_limit(traj, epsilon)?;
        let error_curve = relative_error_curve(traj, limit.c);
        let onset = find_onset(&error_curve.points, epsilon);
        let tau0 = onset.eta().map(|e| {
            if e.is_finite() {
                mode_time(e, traj.k)
            } else {
                e
            }
        });
        let t0 = match tau0 {
            Some(x) if x.is_finite() => Some(eta_to_t(x, &cosmo)?),
            Some(_) => Some(f64::NEG_INFINITY),
            None => None,
        };
        Ok(Self {
            k: traj.k,
            hubble: traj.hubble,
            c_k: limit.c,
            epsilon,
            tau0,
            eta0: tau0,
            t0,
            eta_crossing: onset.eta(),
            onset,
            assumption_c,
            converged: limit.converged && onset != Onset::NotAttained,
            limit,
            error_curve,
        })
    }

    /// `|phi(last) - c_k| / |c_k|`, required to be below `epsilon / 10`.
    pub fn latest_consistency(&self) -> f64 {
        let &(eta, err) = self.error_curve.points.last().expect("non-empty curve");
        // err compares against c_k * envelope; envelope(eta_end) - 1 ~ 1e-8
        err + (envelope(eta, self.k) - 1.0)
    }

    /// Delimited table `k,eta,err`.
    pub fn write_error_curve<W: Write>(&self, mut w: W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(w, "k,eta,err")?;
        }
        for (eta, err) in &self.error_curve.points {
            writeln!(w, "{:e},{:e},{:e}", self.k, eta, err)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreezeOptions {
    pub epsilon: f64,
    /// Integration starts at the conformal time whose mode time is this.
    pub tau_start: f64,
    pub trajectory: TrajectoryOptions,
    /// Largest acceptable value of the measured `C`.
    pub c_band: f64,
    /// Largest acceptable ratio between the largest and smallest `C` in a scan.
    pub c_spread_band: f64,
    /// Every onset must be later than this mode time.
    pub tau0_floor: f64,
}

impl Default for FreezeOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            tau_start: -3.0,
            trajectory: TrajectoryOptions {
                tau_window_samples: 400,
                ..Default::default()
            },
            c_band: 10.0,
            c_spread_band: 10.0,
            tau0_floor: -1.0,
        }
    }
}

/// Integrates from `tau_start` to the deep freeze endpoint and reports.
pub fn analyze(
    state: &ModeState,
    z0: Complex64,
    cosmo: &Cosmology,
    opts: &FreezeOptions,
) -> Result<(Trajectory, FreezeReport)> {
    let k = state.k();
    let window = (eta_of_tau(opts.tau_start, k), -DEEP_FREEZE / k);
    let traj = integrate_trajectory(state, z0, window, cosmo, &opts.trajectory)?;
    let report =
        FreezeReport::from_trajectory(&traj, state, opts.epsilon, opts.trajectory.eps_node)?;
    Ok((traj, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanVerdict {
    pub c_max: f64,
    pub c_min: f64,
    /// `c_max / c_min`
    pub c_spread: f64,
    /// Earliest onset across the scan.
    pub tau0_min: Option<f64>,
    /// Latest onset across the scan.
    pub tau0_max: Option<f64>,
    pub c_within_band: bool,
    pub c_spread_within_band: bool,
    pub tau0_above_floor: bool,
    pub all_converged: bool,
    pub k_independent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub reports: Vec<FreezeReport>,
    pub verdict: ScanVerdict,
}

impl ScanVerdict {
    pub fn from_reports(reports: &[FreezeReport], opts: &FreezeOptions) -> Self {
        let cs: Vec<f64> = reports.iter().map(|r| r.assumption_c).collect();
        let c_max = cs.iter().copied().fold(0.0, f64::max);
        let c_min = cs.iter().copied().fold(f64::INFINITY, f64::min);
        // speeds at roundoff level are a frozen field, not a spread
        let c_spread = if c_max <= SPEED_FLOOR {
            1.0
        } else {
            c_max / c_min
        };
        let onsets: Vec<Option<f64>> = reports.iter().map(|r| r.tau0).collect();
        let attained: Option<Vec<f64>> = onsets.iter().copied().collect();
        let (tau0_min, tau0_max) = match &attained {
            Some(v) if !v.is_empty() => (
                Some(v.iter().copied().fold(f64::INFINITY, f64::min)),
                Some(v.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            ),
            _ => (None, None),
        };
        let c_within_band = c_max.is_finite() && c_max < opts.c_band;
        let c_spread_within_band = c_spread.is_finite() && c_spread < opts.c_spread_band;
        let tau0_above_floor =
            tau0_min.is_some_and(|t| t > opts.tau0_floor || t == f64::NEG_INFINITY);
        let all_converged = reports.iter().all(|r| r.converged);
        Self {
            c_max,
            c_min,
            c_spread,
            tau0_min,
            tau0_max,
            c_within_band,
            c_spread_within_band,
            tau0_above_floor,
            all_converged,
            k_independent: c_within_band
                && c_spread_within_band
                && tau0_above_floor
                && all_converged,
        }
    }
}

/// Runs [`analyze`] for every `k` and judges whether the onset can be
/// chosen independently of `k`. Results are ordered by `k` whatever the
/// number of workers.
pub fn scan_k<S, Z>(
    states: S,
    z0s: Z,
    k_grid: &[f64],
    cosmo: &Cosmology,
    opts: &FreezeOptions,
) -> Result<ScanResult>
where
    S: Fn(f64) -> Result<ModeState> + Sync,
    Z: Fn(&ModeState) -> Result<Complex64> + Sync,
{
    let mut ks = k_grid.to_vec();
    ks.sort_by(f64::total_cmp);
    let outcomes: Vec<Result<FreezeReport>> = ks
        .par_iter()
        .map(|&k| {
            let state = states(k)?;
            let z0 = z0s(&state)?;
            analyze(&state, z0, cosmo, opts).map(|(_, r)| r)
        })
        .collect();
    let mut reports = Vec::with_capacity(ks.len());
    let mut failures = Vec::new();
    for (k, outcome) in ks.iter().zip(outcomes) {
        match outcome {
            Ok(r) => reports.push(r),
            Err(e) => failures.push(format!("k = {k}: {e}")),
        }
    }
    if !failures.is_empty() {
        return Err(Error::NonConvergence(failures.join("; ")));
    }
    let verdict = ScanVerdict::from_reports(&reports, opts);
    Ok(ScanResult { reports, verdict })
}
