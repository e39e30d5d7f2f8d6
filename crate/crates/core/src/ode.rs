//! Dormand-Prince 5(4) with FSAL, mixed absolute/relative error control and
//! forced output stops.
//!
//! A right-hand side may refuse to evaluate (for the guidance equation: the
//! configuration came too close to a node). The step is then halved and
//! retried; if that keeps happening the integration aborts and hands back
//! everything computed so far.

use crate::error::Error;

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), Error>;
}

#[derive(Debug, Clone, Copy)]
pub struct StepOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; a fraction of the span when `None`.
    pub h_init: Option<f64>,
    /// Abort once a retry would need a step shorter than this.
    pub h_min: f64,
    pub max_steps: usize,
    /// Consecutive step halvings tolerated after RHS refusals.
    pub max_halvings: usize,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-9,
            h_init: None,
            h_min: 1e-14,
            max_steps: 1_000_000,
            max_halvings: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub y: Vec<f64>,
    /// True for requested output stops (and the final time).
    pub stop: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    /// Step halvings caused by RHS refusals.
    pub refusals: usize,
    pub evaluations: usize,
}

#[derive(Debug)]
pub struct Solution {
    pub samples: Vec<Sample>,
    pub stats: Stats,
}

#[derive(Debug)]
pub struct Failure {
    pub error: Error,
    pub t: f64,
    pub samples: Vec<Sample>,
    pub stats: Stats,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// fifth-order minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates from `t0` to `t_end` (either direction). Every accepted step is
/// recorded; `stops` strictly between the endpoints are hit exactly.
pub fn integrate<S: OdeSystem>(
    sys: &mut S,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    stops: &[f64],
    opts: &StepOptions,
) -> Result<Solution, Box<Failure>> {
    let dim = sys.dim();
    assert_eq!(y0.len(), dim, "initial state has the wrong dimension");
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut targets: Vec<f64> = stops
        .iter()
        .copied()
        .filter(|&s| (s - t0) * dir > 0.0 && (t_end - s) * dir > 0.0)
        .collect();
    targets.sort_by(|a, b| (dir * a).total_cmp(&(dir * b)));
    targets.dedup();
    targets.push(t_end);

    let mut stats = Stats::default();
    let mut samples = vec![Sample {
        t: t0,
        y: y0.to_vec(),
        stop: true,
    }];
    let fail = |error: Error, t: f64, samples: Vec<Sample>, stats: Stats| {
        Err(Box::new(Failure {
            error,
            t,
            samples,
            stats,
        }))
    };
    if t_end == t0 {
        return Ok(Solution { samples, stats });
    }

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    if let Err(e) = sys.rhs(t, &y, &mut k[0]) {
        return fail(e, t, samples, stats);
    }
    stats.evaluations += 1;

    let span = (t_end - t0).abs();
    let mut h = opts.h_init.unwrap_or(1e-3 * span).min(span);
    let mut y_stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut target_idx = 0;
    let mut halvings = 0;

    while target_idx < targets.len() {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return fail(
                Error::NonConvergence(format!("step budget {} exhausted", opts.max_steps)),
                t,
                samples,
                stats,
            );
        }
        let target = targets[target_idx];
        let remaining = (target - t).abs();
        let hits_target = h >= remaining * (1.0 - 1e-12);
        let step = if hits_target { remaining } else { h };
        let signed = dir * step;

        // stages 2..7
        let mut refused = None;
        for s in 1..7 {
            for i in 0..dim {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += signed * A[s][j] * kj[i];
                }
                y_stage[i] = acc;
            }
            let ts = if s == 6 && hits_target {
                target
            } else {
                t + signed * C[s]
            };
            stats.evaluations += 1;
            if let Err(e) = sys.rhs(ts, &y_stage, &mut k[s]) {
                refused = Some(e);
                break;
            }
            if s == 6 {
                y_new.copy_from_slice(&y_stage);
            }
        }
        if let Some(e) = refused {
            if !matches!(e, Error::NodeProximity { .. }) {
                return fail(e, t, samples, stats);
            }
            halvings += 1;
            stats.refusals += 1;
            h = 0.5 * step;
            if halvings > opts.max_halvings || h < opts.h_min {
                return fail(e, t, samples, stats);
            }
            continue;
        }

        let mut err_sq = 0.0;
        for i in 0..dim {
            let mut e = 0.0;
            for (s, ks) in k.iter().enumerate() {
                e += E[s] * ks[i];
            }
            let scale = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            let r = signed * e / scale;
            err_sq += r * r;
        }
        let err = (err_sq / dim as f64).sqrt();

        if err <= 1.0 {
            stats.accepted += 1;
            halvings = 0;
            t = if hits_target { target } else { t + signed };
            y.copy_from_slice(&y_new);
            k.swap(0, 6);
            samples.push(Sample {
                t,
                y: y.clone(),
                stop: hits_target,
            });
            if hits_target {
                target_idx += 1;
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            // a step shortened to land on a stop should not shrink the next one
            h = if hits_target {
                h.max(step * factor)
            } else {
                step * factor
            };
        } else {
            stats.rejected += 1;
            h = step * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            if h < opts.h_min {
                return fail(
                    Error::NonConvergence(format!("step size underflow at t = {t:e}")),
                    t,
                    samples,
                    stats,
                );
            }
        }
    }
    Ok(Solution { samples, stats })
}
