//! Drive a run from a TOML config, as the `dsbohm` binary does.
//!
//! `cargo run --example run_config -- examples/configs/two_level.toml`

use desitter_bohm::cli::{run, Command, RunConfig};

pub fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/examples/configs/two_level.toml"
        )
        .to_string()
    });
    let text = std::fs::read_to_string(&path).unwrap();
    let mut config =
        RunConfig::from_toml(&text, &[("window.eta_end".into(), "-1e-3".into())]).unwrap();
    config.output_dir = std::env::temp_dir().join("dsbohm-run-config");

    let problems = config.validate(Command::Trajectory);
    for p in &problems {
        eprintln!("invalid config: {p}");
    }
    assert!(problems.is_empty());
    let outcome = run(Command::Trajectory, &config).unwrap();
    println!("{}", outcome.summary);
    for f in &outcome.outputs {
        println!("  {}", config.output_dir.join(f).display());
    }
}
