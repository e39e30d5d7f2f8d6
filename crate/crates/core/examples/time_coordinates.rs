//! Cosmic time, conformal time and mode time for a few wave numbers.
//!
//! Mode time runs as `eta` while the mode is inside the horizon and stalls
//! once `|k eta| << 1`; the last column shows how little of it is left.

use desitter_bohm::coords::{dtau_deta, eta_of_tau, eta_to_t, tau_of_eta, Cosmology};

pub fn main() {
    let cosmo = Cosmology::new(1.0).unwrap();
    println!(
        "{:>6} {:>10} {:>10} {:>14} {:>12}",
        "k", "eta", "t", "tau", "dtau/deta"
    );
    for k in [0.1, 1.0, 10.0] {
        for eta in [-10.0, -1.0, -0.1, -1e-3] {
            let tau = tau_of_eta(eta, k).unwrap();
            let t = eta_to_t(eta, &cosmo).unwrap();
            println!(
                "{k:>6} {eta:>10} {t:>10.4} {tau:>14.6e} {:>12.4e}",
                dtau_deta(eta, k)
            );
            // the inverse is exact to roundoff
            assert!((eta_of_tau(tau, k) - eta).abs() <= 1e-12 * eta.abs());
        }
    }
}
