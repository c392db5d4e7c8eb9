//! Properties of the view generators themselves, per generator instance.
//!
//! The live generator may hand different servers different sequences, but
//! they must form a chain under the subsequence order and there can be at
//! most `|v| - quorum(v) + 1` of them. The perfect generator hands everyone
//! the same sequence and never needs auxiliary re-proposals.

use std::collections::{BTreeMap, BTreeSet};

use crate::checker::Verdict;
use crate::reconfig::GeneratorKind;
use crate::trace::{GenSource, Note, TraceEvent, TraceLine};
use crate::view::{View, ViewSeq};

pub fn check_generator_bounds(trace: &[TraceLine], generator: GeneratorKind) -> Verdict {
    match violations(trace, generator).into_iter().next() {
        Some(v) => Verdict::Violation(v),
        None => Verdict::Ok,
    }
}

/// Distinct sequences delivered by each generator instance.
pub fn delivered_by_instance(trace: &[TraceLine]) -> BTreeMap<View, BTreeSet<ViewSeq>> {
    let mut out: BTreeMap<View, BTreeSet<ViewSeq>> = BTreeMap::new();
    for line in trace {
        if let TraceEvent::Note(Note::NewView { ov, seq }) = &line.event {
            out.entry(ov.clone()).or_default().insert(seq.clone());
        }
    }
    out
}

pub fn violations(trace: &[TraceLine], generator: GeneratorKind) -> Vec<String> {
    let mut out = Vec::new();
    for (ov, seqs) in delivered_by_instance(trace) {
        for s in &seqs {
            if s.is_empty() || !s.all_strictly_contain(&ov) {
                out.push(format!("generator for {ov} delivered {s}, which does not strictly extend it"));
            }
        }
        match generator {
            GeneratorKind::Perfect if seqs.len() > 1 => {
                out.push(format!("perfect generator for {ov} delivered {} different sequences", seqs.len()));
            }
            GeneratorKind::Live => {
                let bound = ov.quorum().map(|q| ov.size() - q + 1).unwrap_or(1);
                if seqs.len() > bound {
                    out.push(format!("live generator for {ov} delivered {} sequences, bound is {bound}", seqs.len()));
                }
                let list: Vec<&ViewSeq> = seqs.iter().collect();
                for (i, a) in list.iter().enumerate() {
                    for b in &list[i + 1..] {
                        if !a.is_subseq_of(b) && !b.is_subseq_of(a) {
                            out.push(format!("live generator for {ov} delivered incomparable {a} and {b}"));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    if generator == GeneratorKind::Perfect {
        let aux = trace.iter().find(|l| matches!(&l.event, TraceEvent::Note(Note::GenView { source: GenSource::Aux, .. })));
        if let Some(l) = aux {
            out.push(format!("server {} needed an auxiliary proposal under the perfect generator", l.proc));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::view::ProcessId;

    fn v(s: &str) -> View {
        s.parse().unwrap()
    }

    fn seq(s: &str) -> ViewSeq {
        s.parse().unwrap()
    }

    fn nv(p: u32, ov: &View, s: &str) -> TraceLine {
        TraceLine { time: 0, seq: 1, proc: ProcessId(p), event: TraceEvent::Note(Note::NewView { ov: ov.clone(), seq: seq(s) }) }
    }

    #[test]
    fn live_chain_within_bound_passes() {
        let ov = v("{+1,+2,+3}");
        let t = vec![nv(1, &ov, "[{+1,+2,+3,+4}]"), nv(2, &ov, "[{+1,+2,+3,+4},{+1,+2,+3,+4,+5}]")];
        assert_eq!(check_generator_bounds(&t, GeneratorKind::Live), Verdict::Ok);
        assert!(check_generator_bounds(&t, GeneratorKind::Perfect).is_violation());
    }

    #[test]
    fn live_bound_and_comparability() {
        // |v| = 3, quorum 2: at most two sequences
        let ov = v("{+1,+2,+3}");
        let t = vec![
            nv(1, &ov, "[{+1,+2,+3,+4}]"),
            nv(2, &ov, "[{+1,+2,+3,+4},{+1,+2,+3,+4,+5}]"),
            nv(3, &ov, "[{+1,+2,+3,+4},{+1,+2,+3,+4,+5},{+1,+2,+3,+4,+5,+6}]"),
        ];
        assert!(violations(&t, GeneratorKind::Live).iter().any(|e| e.contains("bound is 2")));
        let t = vec![nv(1, &ov, "[{+1,+2,+3,+4}]"), nv(2, &ov, "[{+1,+2,+3,+5}]")];
        assert!(violations(&t, GeneratorKind::Live).iter().any(|e| e.contains("incomparable")));
    }

    #[test]
    fn trivial_sequences_fail() {
        let ov = v("{+1,+2,+3}");
        let t = vec![nv(1, &ov, "[{+1,+2,+3}]")];
        assert!(check_generator_bounds(&t, GeneratorKind::Perfect).is_violation());
    }
}
