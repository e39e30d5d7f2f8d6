//! The mode-time oscillator and the original conformal-time equation on a
//! grid describe the same state.
//!
//! `cargo run --release --example picture_equivalence -- 128` shows the grid
//! running out of resolution for the chirped phase.

use desitter_bohm::coords::tau_of_eta;
use desitter_bohm::schrodinger::grid::{mode_state_in_y, ReferenceSolver};
use desitter_bohm::schrodinger::{two_level, GridState};

pub fn main() {
    let k = 1.0;
    let (eta0, eta1) = (-2.0, -0.5);
    let n: usize = std::env::args().nth(1).map_or(256, |a| a.parse().unwrap());
    let state = two_level(k, 8, 0.0, 0.0).unwrap();
    let initial = state.at_tau(tau_of_eta(eta0, k).unwrap());
    let extent = GridState::default_extent(&state, eta0)
        .unwrap()
        .max(GridState::default_extent(&state, eta1).unwrap());
    let grid = GridState::from_mode_state(&initial, eta0, n, extent).unwrap();
    let solver = ReferenceSolver::new(n);
    for steps in [250, 1000] {
        let evolved = solver.evolve_to(&grid, eta1, steps, k).unwrap();
        let fin = state.at_tau(tau_of_eta(eta1, k).unwrap());
        let diff = evolved.l2_distance(mode_state_in_y(&fin, eta1).unwrap());
        println!(
            "{n}^2 grid, {steps:>4} steps: L2 difference {diff:.3e}, norm {:.12}",
            evolved.norm_sqr()
        );
    }
}
