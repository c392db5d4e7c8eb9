//! Every request issued by a correct process eventually takes effect.

use std::collections::{BTreeMap, BTreeSet};

use crate::checker::{RunInfo, Verdict};
use crate::scenario::Cmd;
use crate::trace::{Note, OpId, TraceEvent, TraceLine};
use crate::view::ProcessId;

pub fn check_liveness(trace: &[TraceLine], info: &RunInfo) -> Verdict {
    if info.expect_violation {
        return Verdict::Skipped("the scenario exceeds the fault budget on purpose".into());
    }
    if info.exhausted {
        return Verdict::Violation("step budget ran out while processes were still busy".into());
    }
    match missing(trace).into_iter().next() {
        Some(m) => Verdict::Violation(m),
        None => Verdict::Ok,
    }
}

/// Requests that never completed, ignoring crashed processes.
pub fn missing(trace: &[TraceLine]) -> Vec<String> {
    let mut crashed = BTreeSet::new();
    let mut joins = BTreeSet::new();
    let mut leaves = BTreeSet::new();
    let mut requested_ops: BTreeMap<ProcessId, usize> = BTreeMap::new();
    let mut notes: BTreeMap<ProcessId, Vec<&Note>> = BTreeMap::new();
    let mut invoked: BTreeSet<OpId> = BTreeSet::new();
    let mut completed: BTreeSet<OpId> = BTreeSet::new();

    for line in trace {
        match &line.event {
            TraceEvent::Crash => {
                crashed.insert(line.proc);
            }
            TraceEvent::Command { cmd } => match cmd.parse::<Cmd>() {
                Ok(Cmd::Join(p)) => {
                    joins.insert(p);
                }
                Ok(Cmd::Leave(p)) => {
                    leaves.insert(p);
                }
                Ok(Cmd::Write(p, _) | Cmd::Read(p)) => *requested_ops.entry(p).or_default() += 1,
                _ => {}
            },
            TraceEvent::Note(n) => {
                match n {
                    Note::OpInvoke { op, .. } => {
                        invoked.insert(*op);
                    }
                    Note::OpComplete { op, .. } => {
                        completed.insert(*op);
                    }
                    _ => {}
                }
                notes.entry(line.proc).or_default().push(n);
            }
            _ => {}
        }
    }

    let has = |p: ProcessId, want: &Note| notes.get(&p).is_some_and(|ns| ns.iter().any(|n| *n == want));
    let mut out = Vec::new();
    for &p in joins.difference(&crashed) {
        if !has(p, &Note::EnableOps) {
            out.push(format!("server {p} asked to join but never enabled operations"));
        }
    }
    for &p in leaves.difference(&crashed) {
        if !has(p, &Note::LeaveInvoke) {
            out.push(format!("server {p} was told to leave but never asked to"));
        } else if !has(p, &Note::DisableOps) {
            out.push(format!("server {p} asked to leave but never disabled operations"));
        } else if !has(p, &Note::Halt) {
            out.push(format!("server {p} asked to leave but never halted"));
        }
    }
    for op in invoked.difference(&completed) {
        if !crashed.contains(&op.client) {
            out.push(format!("operation {op} never completed"));
        }
    }
    for (&c, &n) in &requested_ops {
        let done = completed.iter().filter(|o| o.client == c).count();
        if !crashed.contains(&c) && done < n {
            out.push(format!("client {c} was given {n} operations but completed {done}"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::register::{Timestamp, Value};
    use crate::trace::OpKind;
    use crate::view::View;
    use crate::GeneratorKind;

    fn line(p: u32, event: TraceEvent) -> TraceLine {
        TraceLine { time: 0, seq: 1, proc: ProcessId(p), event }
    }

    fn cmd(p: u32, c: &str) -> TraceLine {
        line(p, TraceEvent::Command { cmd: c.into() })
    }

    fn info() -> RunInfo {
        RunInfo {
            initial_view: View::initial([1, 2, 3].map(ProcessId)),
            generator: GeneratorKind::Live,
            expect_violation: false,
            exhausted: false,
        }
    }

    #[test]
    fn join_needs_enable() {
        let mut t = vec![cmd(4, "join 4"), line(4, TraceEvent::Note(Note::JoinInvoke))];
        assert!(check_liveness(&t, &info()).is_violation());
        t.push(line(4, TraceEvent::Note(Note::EnableOps)));
        assert_eq!(check_liveness(&t, &info()), Verdict::Ok);
    }

    #[test]
    fn leave_needs_halt_unless_crashed() {
        let mut t = vec![cmd(2, "leave 2"), line(2, TraceEvent::Note(Note::LeaveInvoke)), line(2, TraceEvent::Note(Note::DisableOps))];
        assert!(missing(&t)[0].contains("never halted"));
        t.push(line(2, TraceEvent::Crash));
        assert!(missing(&t).is_empty());
    }

    #[test]
    fn operations_must_complete() {
        let op = OpId { client: ProcessId(101), n: 1 };
        let mut t = vec![
            cmd(101, "read 101"),
            cmd(101, "read 101"),
            line(101, TraceEvent::Note(Note::OpInvoke { op, kind: OpKind::Read, value: None })),
        ];
        assert_eq!(missing(&t).len(), 2);
        t.push(line(101, TraceEvent::Note(Note::OpComplete {
            op,
            kind: OpKind::Read,
            value: Value::new("init").unwrap(),
            ts: Timestamp::INITIAL,
            view: info().initial_view,
        })));
        assert_eq!(missing(&t), vec!["client 101 was given 2 operations but completed 1".to_string()]);
    }

    #[test]
    fn exhausted_and_expected_violations() {
        let mut i = info();
        i.exhausted = true;
        assert!(check_liveness(&[], &i).is_violation());
        i.expect_violation = true;
        assert!(matches!(check_liveness(&[], &i), Verdict::Skipped(_)));
    }
}
