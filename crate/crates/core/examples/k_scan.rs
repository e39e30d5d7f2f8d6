//! Freezing onset and speed bound across wave numbers.

use desitter_bohm::bohm;
use desitter_bohm::coords::Cosmology;
use desitter_bohm::freeze::{scan_k, FreezeOptions};
use desitter_bohm::schrodinger::{two_level, ModeState};

pub fn main() {
    let cosmo = Cosmology::new(1.0).unwrap();
    let opts = FreezeOptions::default();
    let grid = [0.1, 0.3, 1.0, 3.0, 10.0];
    let result = scan_k(
        |k| two_level(k, 8, 0.0, 0.0),
        |s: &ModeState| Ok(bohm::sample_ensemble(&s.at_tau(opts.tau_start), 1, 7)?.points[0]),
        &grid,
        &cosmo,
        &opts,
    )
    .unwrap();
    println!("{:>6} {:>11} {:>10} {:>10}", "k", "C", "tau0", "converged");
    for r in &result.reports {
        println!(
            "{:>6} {:>11.4e} {:>10.4} {:>10}",
            r.k,
            r.assumption_c,
            r.tau0.unwrap_or(f64::NAN),
            r.converged
        );
    }
    let v = &result.verdict;
    println!(
        "C spread {:.1}, earliest tau0 {:?}, k-independent: {}",
        v.c_spread, v.tau0_min, v.k_independent
    );
}
