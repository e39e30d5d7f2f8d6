//! Two entangled modes freeze jointly.

use desitter_bohm::coords::Cosmology;
use desitter_bohm::freeze::FreezeOptions;
use desitter_bohm::multimode::{
    freeze_scan_multimode, joint_start, sample_multimode, MultiModeState,
};
use desitter_bohm::schrodinger::ModeState;
use num_complex::Complex64;

pub fn main() {
    let modes = [1.0, 2.0];
    let opts = FreezeOptions::default();
    let eta = joint_start(&modes, opts.tau_start);
    let term = |a: (usize, usize), b: (usize, usize)| {
        vec![
            ModeState::level(modes[0], 8, a.0, a.1).unwrap(),
            ModeState::level(modes[1], 8, b.0, b.1).unwrap(),
        ]
    };
    let one = Complex64::new(1.0, 0.0);
    let state = MultiModeState::new(
        &modes,
        vec![(one, term((0, 0), (1, 0))), (one, term((1, 0), (0, 0)))],
        eta,
    )
    .unwrap();

    let z0 = sample_multimode(&state, 1, 7).unwrap().remove(0);
    let cosmo = Cosmology::new(1.0).unwrap();
    let result = freeze_scan_multimode(&state, &z0, &cosmo, &opts, &[], &[]).unwrap();
    for r in &result.reports {
        println!(
            "k = {}: c_k = {:.5}, tau0 = {:?}, C = {:.4}",
            r.k, r.c_k, r.tau0, r.assumption_c
        );
    }
    let v = &result.verdict;
    println!(
        "joint tau0 {:?}, C {:.4}, satisfied {}",
        v.tau0, v.c, v.satisfied
    );
}
