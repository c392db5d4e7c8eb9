//! One check per acceptance criterion. Each returns a one-line summary on
//! success and the reason on failure.

use std::collections::BTreeSet;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use freestore::checker::atomicity::{linearizable, PendingMode};
use freestore::checker::bounds::delivered_by_instance;
use freestore::checker::check_atomicity;
use freestore::explore::{explore_paxos, sample_live, PaxosSetup};
use freestore::{
    check, Cmd, GeneratorKind, Metrics, Note, OpKind, Outcome, ProcessId, Property, RunInfo, TraceEvent, Update, View,
    ViewSeq,
};

use super::histories::{brute_force_linearizable, random_history, rng, stale_read_mutations};
use super::*;

pub type Verdict = Result<String, String>;

fn ensure(ok: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

/// Expected step counts for (kind, outdated view, write-back).
pub const OP_COSTS: [(OpKind, bool, bool, u32); 6] = [
    (OpKind::Read, false, false, 2),
    (OpKind::Read, false, true, 4),
    (OpKind::Write, false, false, 4),
    (OpKind::Read, true, false, 4),
    (OpKind::Read, true, true, 6),
    (OpKind::Write, true, false, 6),
];

pub fn row_name(kind: OpKind, outdated: bool, write_back: bool) -> String {
    format!(
        "{}{} ({})",
        kind,
        if write_back { "+write-back" } else { "" },
        if outdated { "outdated" } else { "updated" }
    )
}

pub fn op_costs() -> Verdict {
    let sc = scenario("op-costs.fs");
    let start = Instant::now();
    let r = run(&sc, GeneratorKind::Live, true, 1);
    let m = Metrics::from_trace(&r.trace);
    let elapsed = start.elapsed();
    ensure(all_ok(&r), || "the op-costs run fails a checker".into())?;
    let mut seen = Vec::new();
    for (kind, outdated, wb, want) in OP_COSTS {
        let got: BTreeSet<u32> = m
            .ops
            .iter()
            .filter(|o| o.kind == kind && o.outdated == outdated && o.write_back == wb)
            .map(|o| o.steps)
            .collect();
        let name = row_name(kind, outdated, wb);
        ensure(!got.is_empty(), || format!("no {name} in the scenario"))?;
        ensure(got == BTreeSet::from([want]), || format!("{name}: expected {want}, measured {got:?}"))?;
        seen.push(format!("{name} {want}"));
    }
    ensure(elapsed < Duration::from_secs(1), || format!("run took {elapsed:?}"))?;
    Ok(format!("{}; run + count {:.0?}", seen.join(", "), elapsed))
}

/// Steps to install the single new view of `one-join.fs`.
pub fn best_case(generator: GeneratorKind, optimize: bool) -> Result<u32, String> {
    let sc = scenario("one-join.fs");
    let r = run(&sc, generator, optimize, 1);
    ensure(all_ok(&r), || format!("{generator} run fails a checker"))?;
    let m = Metrics::from_trace(&r.trace);
    match m.reconfigs.as_slice() {
        [one] => Ok(one.steps),
        other => Err(format!("{generator}: expected one reconfiguration, measured {}", other.len())),
    }
}

pub fn best_case_reconfig() -> Verdict {
    let live = best_case(GeneratorKind::Live, true)?;
    let perfect = best_case(GeneratorKind::Perfect, true)?;
    let unoptimized = best_case(GeneratorKind::Live, false)?;
    ensure(live == 4 && perfect == 5, || format!("live {live} (want 4), perfect {perfect} (want 5)"))?;
    Ok(format!("live 4, perfect 5 (live without the install optimization: {unoptimized})"))
}

pub const GAPS: [u32; 7] = [2, 4, 6, 8, 10, 12, 16];

pub fn worst_case_bounds(seeds_per_gap: u64) -> Verdict {
    let mut parts = Vec::new();
    for n in 3..=5u32 {
        let bound = worst_case_bound(n);
        let mut worst = 0;
        for gap in GAPS {
            let (w, bad) = worst_case(n, gap, 0..seeds_per_gap);
            ensure(bad == 0, || format!("|v|={n} gap={gap}: {bad} runs fail a checker"))?;
            worst = worst.max(w);
        }
        ensure(worst <= bound, || format!("|v|={n}: measured {worst} steps, bound {bound}"))?;
        parts.push(format!("|v|={n} max {worst} <= {bound}"));
    }
    Ok(format!("{} over {} runs each", parts.join(", "), GAPS.len() as u64 * seeds_per_gap))
}

pub fn view_of(members: &[u32]) -> View {
    View::new(members.iter().map(|&p| Update::join(ProcessId(p))))
}

pub fn conflicting_proposals() -> Verdict {
    let sc = scenario("fig2.fs");
    let r = run(&sc, GeneratorKind::Live, true, 1);
    let report = check(&r.trace, &RunInfo::of(&r), &Property::ALL);
    ensure(report.is_ok(), || format!("checker failed:\n{report}"))?;
    let installed = r.installed_views();
    let last = installed.last().expect("v0 at least");
    ensure(*last == view_of(&[1, 2, 3, 4, 5, 6]), || format!("final view {last}"))?;
    for (i, a) in installed.iter().enumerate() {
        for b in &installed[i + 1..] {
            ensure(a.is_subset_of(b), || format!("{a} installed before {b} but not contained in it"))?;
        }
    }
    let v1 = view_of(&[1, 2, 3, 4]);
    let v2 = view_of(&[1, 2, 3, 4, 5]);
    let v3 = view_of(&[1, 2, 3, 4, 6]);
    ensure(!(installed.contains(&v2) && installed.contains(&v3)), || "v2 and v3 both installed".into())?;
    // The scripted conflict must actually happen.
    let proposed = |v: &View| {
        r.trace.iter().any(|l| {
            matches!(&l.event, TraceEvent::Note(Note::GenView { ov, seq, .. })
                if *ov == v1 && *seq == ViewSeq::singleton(v.clone()))
        })
    };
    ensure(proposed(&v2) && proposed(&v3), || "v2 and v3 were not both proposed from v1".into())?;
    let chain: Vec<String> = installed.iter().map(View::members_string).collect();
    Ok(format!("v2 and v3 proposed from v1; installed {}", chain.join(" -> ")))
}

/// One pass over the random-workload scenario, shared by criteria 5 to 7.
#[derive(Default)]
pub struct Sweep {
    pub runs: usize,
    pub elapsed: Duration,
    pub atomicity: Vec<String>,
    pub views: Vec<String>,
    pub bounds: Vec<String>,
    pub liveness: Vec<String>,
    pub exhausted: usize,
    pub exact_atomicity: usize,
    pub out_of_shape: Vec<String>,
    pub ops: usize,
    pub reconfigs: usize,
    pub crashes: usize,
    /// Live instances that delivered more than one sequence.
    pub multi: usize,
}

pub const SWEEP_SEEDS: u64 = 1000;

pub fn sweep() -> &'static Sweep {
    static SWEEP: OnceLock<Sweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let template = scenario("random-ops.fs");
        let start = Instant::now();
        let mut s = Sweep::default();
        let configs = [(GeneratorKind::Live, true), (GeneratorKind::Live, false), (GeneratorKind::Perfect, true)];
        for (generator, optimize) in configs {
            for seed in 0..SWEEP_SEEDS {
                let label = format!("{generator}{} seed {seed}", if optimize { "" } else { " (unoptimized)" });
                let sc = template.instantiate(seed).expect("template instantiates");
                if let Err(e) = shape(&sc) {
                    s.out_of_shape.push(format!("{label}: {e}"));
                }
                s.ops += sc.commands.iter().filter(|(_, c)| matches!(c, Cmd::Read(_) | Cmd::Write(..))).count();
                s.reconfigs += sc.commands.iter().filter(|(_, c)| matches!(c, Cmd::Join(_) | Cmd::Leave(_))).count();
                s.crashes += sc.commands.iter().filter(|(_, c)| matches!(c, Cmd::Crash(_))).count();

                let r = run(&template, generator, optimize, seed);
                s.runs += 1;
                if r.outcome == Outcome::Exhausted {
                    s.exhausted += 1;
                }
                let report = check(&r.trace, &RunInfo::of(&r), &Property::ALL);
                for f in &report.findings {
                    let sink = match f.property {
                        Property::Atomicity => &mut s.atomicity,
                        Property::Views => &mut s.views,
                        Property::Bounds => &mut s.bounds,
                        Property::Liveness => &mut s.liveness,
                    };
                    if f.verdict.is_violation() {
                        sink.push(format!("{label}: {}", f.verdict));
                    }
                    if f.property == Property::Atomicity && f.verdict == freestore::Verdict::Ok {
                        s.exact_atomicity += 1;
                    }
                }
                if generator == GeneratorKind::Live {
                    s.multi += delivered_by_instance(&r.trace).values().filter(|seqs| seqs.len() > 1).count();
                }
            }
        }
        s.elapsed = start.elapsed();
        s
    })
}

/// The workload stays inside 3-7 servers, 2-4 clients, at most 4
/// operations per client, at most 3 reconfigurations and at most f_max
/// crashes.
fn shape(sc: &freestore::Scenario) -> Result<(), String> {
    let n = sc.servers.len();
    ensure((3..=7).contains(&n), || format!("{n} servers"))?;
    ensure((2..=4).contains(&sc.clients.len()), || format!("{} clients", sc.clients.len()))?;
    for c in &sc.clients {
        let k = sc
            .commands
            .iter()
            .filter(|(_, cmd)| matches!(cmd, Cmd::Read(p) | Cmd::Write(p, _) if p == c))
            .count();
        ensure(k <= 4, || format!("client {c} issues {k} operations"))?;
    }
    let reconfigs =
        sc.commands.iter().filter(|(_, c)| matches!(c, Cmd::Join(_) | Cmd::Leave(_))).count();
    ensure(reconfigs <= 3, || format!("{reconfigs} reconfigurations"))?;
    let f_max = (n - 1) / 2;
    let crashes = sc.commands.iter().filter(|(_, c)| matches!(c, Cmd::Crash(_))).count();
    ensure(crashes <= f_max, || format!("{crashes} crashes with f_max {f_max}"))
}

fn first(v: &[String]) -> String {
    format!("{} violations, first: {}", v.len(), v[0])
}

pub fn atomicity_sweep() -> Verdict {
    let s = sweep();
    ensure(s.out_of_shape.is_empty(), || format!("workload out of shape: {}", s.out_of_shape[0]))?;
    ensure(s.atomicity.is_empty(), || format!("atomicity: {}", first(&s.atomicity)))?;
    ensure(s.views.is_empty(), || format!("views: {}", first(&s.views)))?;
    ensure(s.elapsed < Duration::from_secs(300), || format!("sweep took {:?}", s.elapsed))?;
    Ok(format!(
        "{} runs ({} seeds x live, live unoptimized, perfect; {} ops, {} reconfigurations, {} crashes), 0 violations, {} histories checked exactly, {:.1?}",
        s.runs, SWEEP_SEEDS, s.ops, s.reconfigs, s.crashes, s.exact_atomicity, s.elapsed
    ))
}

pub fn generator_properties() -> Verdict {
    let s = sweep();
    ensure(s.bounds.is_empty(), || format!("bounds: {}", first(&s.bounds)))?;
    // The random workload rarely splits the live generator, so also drive
    // one instance with divergent proposals through random schedules.
    let v0 = View::initial([1, 2, 3].map(ProcessId));
    let join = |p: u32| ViewSeq::singleton(v0.with_updates(&[Update::join(ProcessId(p))]));
    let runs = 500;
    let r = sample_live(&v0, &[join(4), join(5), join(6)], runs, 1);
    ensure(r.safety.is_empty(), || format!("sampled schedules: {}", r.safety[0]))?;
    ensure(r.stuck.is_empty(), || format!("sampled schedules: {}", r.stuck[0]))?;
    let split = r.outcomes.iter().filter(|o| o.len() > 1).count();
    Ok(format!(
        "{} runs, 0 violations ({} live instances split); {runs} random schedules of 3 divergent proposals, {} distinct outcomes of which {split} split, all comparable and within bound",
        s.runs,
        s.multi,
        r.outcomes.len()
    ))
}

pub fn liveness() -> Verdict {
    let s = sweep();
    ensure(s.exhausted == 0, || format!("{} runs ran out of steps", s.exhausted))?;
    ensure(s.liveness.is_empty(), || format!("liveness: {}", first(&s.liveness)))?;
    Ok(format!("{} runs, every operation, join and leave of a correct process completed", s.runs))
}

pub fn consensus_exhaustive() -> Verdict {
    let start = Instant::now();
    let setup = PaxosSetup::three(&[1, 2]);
    let setup = PaxosSetup { retries: 0, ..setup };
    let r = explore_paxos(&setup);
    ensure(r.safety.is_empty(), || format!("safety: {}", r.safety[0]))?;
    ensure(r.stuck.is_empty(), || format!("termination: {}", r.stuck[0]))?;
    let proposed: BTreeSet<Vec<ViewSeq>> = setup.proposers.iter().map(|(_, v)| vec![v.clone()]).collect();
    ensure(r.outcomes == proposed, || format!("decided values {:?}", r.outcomes))?;
    Ok(format!(
        "3 servers, proposers 1 and 2: {} states, agreement and validity everywhere, a decision after stabilization from every state, both values reachable, {:.1?}",
        r.states,
        start.elapsed()
    ))
}

pub const ORACLE_HISTORIES: u64 = 10_000;

pub fn checker_oracle() -> Verdict {
    let mut rng = rng(7);
    let (mut yes, mut no, mut mutants) = (0, 0, 0);
    for i in 0..ORACLE_HISTORIES {
        let h = random_history(&mut rng, 8);
        let expected = brute_force_linearizable(&h);
        let got = linearizable(&h, PendingMode::Include);
        ensure(got == expected, || format!("history {i}: checker {got}, brute force {expected}: {h:?}"))?;
        ensure(check_atomicity(&h).is_violation() != expected, || format!("history {i}: verdict disagrees"))?;
        if !expected {
            no += 1;
            continue;
        }
        yes += 1;
        for m in stale_read_mutations(&h) {
            mutants += 1;
            ensure(!brute_force_linearizable(&m), || format!("history {i}: a stale read went unnoticed by brute force"))?;
            ensure(check_atomicity(&m).is_violation(), || format!("history {i}: missed stale read {m:?}"))?;
        }
    }
    ensure(yes > 0 && no > 0 && mutants > 0, || "corpus is degenerate".into())?;
    Ok(format!(
        "{ORACLE_HISTORIES} histories of <= 8 ops agree with brute force ({yes} linearizable, {no} not); {mutants} stale-read mutants, 0 missed"
    ))
}
