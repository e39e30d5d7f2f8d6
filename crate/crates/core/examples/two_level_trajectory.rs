//! One guided trajectory in an excited superposition, its freezing report,
//! and the trajectory table on stdout.
//!
//! `cargo run --example two_level_trajectory > traj.csv`

use desitter_bohm::bohm;
use desitter_bohm::coords::{eta_of_tau, Cosmology};
use desitter_bohm::freeze::{analyze, FreezeOptions};
use desitter_bohm::schrodinger::two_level;

pub fn main() {
    let k = 1.0;
    let cosmo = Cosmology::new(1.0).unwrap();
    let opts = FreezeOptions::default();
    let state = two_level(k, 8, 0.0, 0.0).unwrap();

    // start from a |Phi|^2-typical point
    let start = state.at_tau(opts.tau_start);
    let z0 = bohm::sample_ensemble(&start, 1, 7).unwrap().points[0];
    let (traj, report) = analyze(&state, z0, &cosmo, &opts).unwrap();

    eprintln!(
        "start eta {:.4}, z0 = {z0:.4}",
        eta_of_tau(opts.tau_start, k)
    );
    eprintln!("c_k = {:.6}, C = {:.4}", report.c_k, report.assumption_c);
    eprintln!(
        "onset: tau0 = {:?} (last violation at eta = {:?})",
        report.tau0, report.eta_crossing
    );
    eprintln!(
        "limit converged: {} (change {:.1e}), steps {} accepted / {} rejected",
        report.converged,
        report.limit.change,
        traj.diagnostics.accepted_steps,
        traj.diagnostics.rejected_steps
    );
    traj.write_table(std::io::stdout().lock()).unwrap();
}
