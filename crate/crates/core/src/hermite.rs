//! Normalized Hermite functions by the three-term recurrence
//!
//! ```text
//! psi_0(x)     = pi^{-1/4} exp(-x^2/2)
//! psi_{n+1}(x) = sqrt(2/(n+1)) x psi_n(x) - sqrt(n/(n+1)) psi_{n-1}(x)
//! ```
//!
//! which is stable for the moderate orders used here (no explicit polynomial
//! coefficients are ever formed).

const PI_POW_MINUS_QUARTER: f64 = 0.751_125_544_464_942_5;

/// Fills `vals[n] = psi_n(x)` and, if given, `derivs[n] = psi_n'(x)` for
/// `n < vals.len()`.
pub fn hermite_functions(x: f64, vals: &mut [f64], derivs: Option<&mut [f64]>) {
    let count = vals.len();
    if count == 0 {
        return;
    }
    vals[0] = PI_POW_MINUS_QUARTER * (-0.5 * x * x).exp();
    if count > 1 {
        vals[1] = std::f64::consts::SQRT_2 * x * vals[0];
    }
    for n in 1..count.saturating_sub(1) {
        let nf = n as f64;
        vals[n + 1] =
            (2.0 / (nf + 1.0)).sqrt() * x * vals[n] - (nf / (nf + 1.0)).sqrt() * vals[n - 1];
    }
    if let Some(derivs) = derivs {
        // psi_n' = -x psi_n + sqrt(2n) psi_{n-1}
        for n in 0..count.min(derivs.len()) {
            let lower = if n > 0 {
                (2.0 * n as f64).sqrt() * vals[n - 1]
            } else {
                0.0
            };
            derivs[n] = -x * vals[n] + lower;
        }
    }
}

/// Eigenfunctions of `-1/4 d^2/dx^2 + omega^2 x^2` (mass 2, frequency
/// `omega`): `h_n(x) = (2 omega)^{1/4} psi_n(sqrt(2 omega) x)`.
#[derive(Debug, Clone, Copy)]
pub struct OscillatorAxis {
    scale: f64,
    norm: f64,
}

impl OscillatorAxis {
    pub fn new(omega: f64) -> Self {
        let scale = (2.0 * omega).sqrt();
        Self {
            scale,
            norm: scale.sqrt(),
        }
    }

    /// Length scale `(2 omega)^{-1/2}` of the ground state.
    pub fn length(&self) -> f64 {
        1.0 / self.scale
    }

    pub fn fill(&self, x: f64, vals: &mut [f64], derivs: Option<&mut [f64]>) {
        match derivs {
            Some(d) => {
                hermite_functions(self.scale * x, vals, Some(&mut *d));
                let f = self.norm * self.scale;
                d.iter_mut().for_each(|v| *v *= f);
            }
            None => hermite_functions(self.scale * x, vals, None),
        }
        vals.iter_mut().for_each(|v| *v *= self.norm);
    }
}
