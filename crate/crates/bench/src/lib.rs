//! Benchmarks live in `benches/`; this crate only gives them a home.

use std::path::PathBuf;

use selfevo_core::Scenario;

/// Loads one of the shipped scenarios by file name.
pub fn shipped_scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    Scenario::load(path).expect("shipped scenario loads")
}
