//! Fixtures shared by the benchmarks.

use std::path::PathBuf;

use freestore::{run_scenario, GeneratorKind, RunResult, Scenario, SimConfig};

pub fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.parse().unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn run(sc: &Scenario, generator: GeneratorKind, seed: u64) -> RunResult {
    let mut sc = sc.clone();
    sc.generator = Some(generator);
    run_scenario(&sc, SimConfig::for_scenario(&sc, seed)).expect("scenario runs")
}
