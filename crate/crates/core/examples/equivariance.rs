//! A |Phi|^2 sample carried along by the guidance law stays |Phi|^2
//! distributed; doubling the velocity breaks it.

use std::f64::consts::PI;

use desitter_bohm::bohm::{equivariance_test, EquivarianceOptions, TrajectoryOptions};
use desitter_bohm::coords::{eta_of_tau, mode_time};
use desitter_bohm::schrodinger::two_level;

pub fn main() {
    let k = 1.0;
    let eta0 = -5.0;
    let eta1 = eta_of_tau(mode_time(eta0, k) + PI / k, k);
    let state = two_level(k, 8, 0.0, 0.0).unwrap();
    for scale in [1.0, 2.0] {
        let opts = EquivarianceOptions {
            n_points: 1000,
            null_draws: 40,
            trajectory: TrajectoryOptions {
                velocity_scale: scale,
                tol: 1e-8,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = equivariance_test(&state, eta0, eta1, &opts).unwrap();
        println!(
            "velocity x{scale}: distance {:.3e}, null p95 {:.3e}, p = {:.3}, consistent {}",
            r.distance, r.null_p95, r.p_value, r.consistent
        );
    }
}
