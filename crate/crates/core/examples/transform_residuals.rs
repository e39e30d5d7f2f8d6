//! Residuals of the transform equations at random `(eta, k)` points.

use desitter_bohm::cli::{verify_transforms, VerifySpec};
use desitter_bohm::transform::TransformParams;

pub fn main() {
    let params = TransformParams::new(2.0).unwrap();
    for eta in [-50.0, -1.0, -1e-3] {
        let r = params.ode_residuals(eta).unwrap();
        println!(
            "k = 2, eta = {eta:>7}: gamma {:.6e}, alpha {:.6e}, beta {:.6e}, max residual {:.2e}",
            params.gamma(eta).unwrap(),
            params.alpha(eta).unwrap(),
            params.beta(eta).unwrap(),
            r.max_abs()
        );
    }

    let spec = VerifySpec {
        points: 200,
        ..Default::default()
    };
    let (summary, _) = verify_transforms(&spec).unwrap();
    println!(
        "{} random points: max residual {:.2e}",
        spec.points, summary.max_residual
    );
}
