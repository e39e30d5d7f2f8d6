//! The energy-distance equivariance test should reject a correct transport
//! at about its nominal rate, and a wrong one almost always.

use std::f64::consts::PI;

use desitter_bohm::bohm::{equivariance_test, EquivarianceOptions};
use desitter_bohm::coords::{eta_of_tau, mode_time};
use desitter_bohm::schrodinger::{two_level, ModeState};

fn rejections(state: &ModeState, velocity_scale: f64, seeds: u64) -> usize {
    let eta0 = -5.0;
    let eta1 = eta_of_tau(mode_time(eta0, 1.0) + PI, 1.0);
    (0..seeds)
        .filter(|&seed| {
            let mut opts = EquivarianceOptions {
                n_points: 300,
                null_draws: 40,
                seed: 1000 + seed,
                ..Default::default()
            };
            opts.trajectory.velocity_scale = velocity_scale;
            !equivariance_test(state, eta0, eta1, &opts)
                .unwrap()
                .consistent
        })
        .count()
}

#[test]
fn false_rejections_are_near_nominal() {
    let seeds = 40;
    let ground = ModeState::ground_state(1.0, 8).unwrap();
    let two = two_level(1.0, 8, 0.0, 0.0).unwrap();
    let (g, t) = (
        rejections(&ground, 1.0, seeds),
        rejections(&two, 1.0, seeds),
    );
    println!("false rejections: ground {g} / {seeds}, two-level {t} / {seeds}");
    // 5% of 40 is 2; binomial tail beyond 7 is below 1e-3
    assert!(
        g <= 7 && t <= 7,
        "ground {g} / {seeds}, two-level {t} / {seeds}"
    );
}

#[test]
fn wrong_velocity_is_rejected() {
    let two = two_level(1.0, 8, 0.0, 0.0).unwrap();
    let r = rejections(&two, 2.0, 10);
    assert!(r >= 9, "{r} / 10");
}
