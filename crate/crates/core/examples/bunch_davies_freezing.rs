//! In the ground state the guided field mode never moves: the guidance
//! velocity vanishes and `phi` follows the growing envelope exactly.

use desitter_bohm::bohm::{integrate_trajectory, TrajectoryOptions};
use desitter_bohm::coords::Cosmology;
use desitter_bohm::freeze::FreezeReport;
use desitter_bohm::schrodinger::ModeState;
use num_complex::Complex64;

pub fn main() {
    let cosmo = Cosmology::new(1.0).unwrap();
    for k in [0.1, 1.0, 10.0] {
        let state = ModeState::ground_state(k, 8).unwrap();
        let z0 = Complex64::new(0.4, -0.2);
        let traj = integrate_trajectory(
            &state,
            z0,
            (-10.0 / k, -1e-4 / k),
            &cosmo,
            &TrajectoryOptions::default(),
        )
        .unwrap();
        let report = FreezeReport::from_trajectory(&traj, &state, 0.01, 1e-8).unwrap();
        let worst = report
            .error_curve
            .points
            .iter()
            .map(|p| p.1)
            .fold(0.0, f64::max);
        println!(
            "k = {k:>4}: z moved {:.1e}, c_k = {:.6}, worst relative error {worst:.1e}, onset {:?}",
            (traj.last().z - z0).norm(),
            report.c_k,
            report.onset
        );
    }
}
