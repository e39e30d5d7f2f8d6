//! Spectral propagation in mode time, and the text format for states.

use desitter_bohm::coords::tau_of_eta;
use desitter_bohm::schrodinger::{two_level, ModeState};

pub fn main() {
    let k = 1.5;
    let state = two_level(k, 16, 0.0, 0.0).unwrap();
    let (eta0, eta1) = (-4.0, -1e-3);
    let early = state.at_tau(tau_of_eta(eta0, k).unwrap());
    let late = state.at_tau(tau_of_eta(eta1, k).unwrap());
    println!(
        "energy {:.6} (levels {:.3}, {:.3})",
        late.energy(),
        late.level_energy(0, 0),
        late.level_energy(1, 0)
    );
    println!("norm drift {:.1e}", (late.norm_sqr() - 1.0).abs());

    // going back recovers the original coefficients
    let back = late.at_tau(early.tau());
    let overlap = back.overlap(&early).unwrap();
    println!("|<early|back>| = {:.15}", overlap.norm());

    let text = late.to_text();
    let parsed = ModeState::from_text(&text).unwrap();
    assert_eq!(parsed.coeffs(), late.coeffs());
    print!("{text}");
}
