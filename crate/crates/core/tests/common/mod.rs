//! Helpers shared by the integration tests and the acceptance report.
#![allow(dead_code)]

pub mod criteria;
pub mod histories;

use std::path::PathBuf;

use freestore::{check, run_scenario, GeneratorKind, Metrics, Property, RunInfo, RunResult, Scenario, SimConfig};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn scenario(name: &str) -> Scenario {
    let text = std::fs::read_to_string(scenario_path(name)).expect("scenario file");
    text.parse().expect("valid scenario")
}

pub fn run(sc: &Scenario, generator: GeneratorKind, optimize: bool, seed: u64) -> RunResult {
    let mut sc = sc.clone();
    sc.generator = Some(generator);
    sc.optimize_install = Some(optimize);
    run_scenario(&sc, SimConfig::for_scenario(&sc, seed)).expect("scenario runs")
}

pub fn all_ok(r: &RunResult) -> bool {
    check(&r.trace, &RunInfo::of(r), &Property::ALL).is_ok()
}

/// A reconfiguration in which every one of the `n` servers proposes a
/// different join. Joiner `n + k` reaches server `k` quickly and everybody
/// else only after the first round. Proposals from servers past the first
/// quorum are slowed down, so each of them arrives after a sequence has
/// already been generated and forces another one.
pub fn divergent(n: u32, gap: u32) -> Scenario {
    let q = n / 2 + 1;
    let mut s = String::new();
    s.push_str(&format!("servers {}\n", (1..=n).map(|i| i.to_string()).collect::<Vec<_>>().join(" ")));
    s.push_str("clients 101\ndelay uniform 1 6\nreconfig-period 40\n");
    for k in 1..=n {
        let j = n + k;
        s.push_str(&format!("rule RECONFIG from {j} to {k} 1\nrule RECONFIG from {j} to * 500\n"));
    }
    for k in q + 1..=n {
        s.push_str(&format!("rule SEQ-VIEW from {k} to * {}\n", gap * (k - q)));
    }
    for k in 1..=n {
        s.push_str(&format!("at 1 join {}\n", n + k));
    }
    s.parse().expect("generated scenario")
}

/// Largest reconfiguration cost seen over `seeds` runs of [`divergent`],
/// together with the number of runs that failed a checker.
pub fn worst_case(n: u32, gap: u32, seeds: std::ops::Range<u64>) -> (u32, usize) {
    let sc = divergent(n, gap);
    let mut worst = 0;
    let mut bad = 0;
    for seed in seeds {
        let r = run(&sc, GeneratorKind::Live, true, seed);
        if !all_ok(&r) {
            bad += 1;
        }
        let m = Metrics::from_trace(&r.trace);
        worst = worst.max(m.reconfigs.iter().map(|c| c.steps).max().unwrap_or(0));
    }
    (worst, bad)
}

pub fn worst_case_bound(n: u32) -> u32 {
    let q = n / 2 + 1;
    7 * n - 2 * q - 1
}
