//! Safety of the installed-view history.

use std::collections::{BTreeMap, BTreeSet};

use crate::checker::Verdict;
use crate::register::Timestamp;
use crate::trace::{Note, OpKind, TraceEvent, TraceLine};
use crate::view::{ProcessId, Sign, View};

fn comparable(a: &View, b: &View) -> bool {
    a == b || a.is_subset_of(b) || b.is_subset_of(a)
}

pub fn check_views(trace: &[TraceLine], initial: &View) -> Verdict {
    match violations(trace, initial).into_iter().next() {
        Some(v) => Verdict::Violation(v),
        None => Verdict::Ok,
    }
}

/// All violations found, in trace order per rule.
pub fn violations(trace: &[TraceLine], initial: &View) -> Vec<String> {
    let mut out = Vec::new();
    let mut installed: Vec<View> = vec![initial.clone()];
    let mut per_server: BTreeMap<ProcessId, View> = BTreeMap::new();
    let mut generated: BTreeSet<View> = BTreeSet::new();
    let mut joined: BTreeMap<ProcessId, usize> = BTreeMap::new();
    let mut left: BTreeMap<ProcessId, usize> = BTreeMap::new();
    // (view, ts) of completed writes
    let mut writes: Vec<(View, Timestamp)> = Vec::new();

    for (pos, line) in trace.iter().enumerate() {
        let TraceEvent::Note(note) = &line.event else { continue };
        match note {
            Note::Fault { reason } => out.push(format!("server {} reported a fault: {reason}", line.proc)),
            Note::JoinInvoke => {
                joined.entry(line.proc).or_insert(pos);
            }
            Note::LeaveInvoke => {
                left.entry(line.proc).or_insert(pos);
            }
            Note::NewView { seq, .. } => {
                if let Ok(w) = seq.most_updated() {
                    generated.insert(w.clone());
                }
            }
            Note::OpComplete { op, kind, ts, view, .. } => {
                if !installed.contains(view) {
                    out.push(format!("operation {op} completed in {view}, which was never installed"));
                }
                if *kind == OpKind::Write {
                    writes.push((view.clone(), *ts));
                }
            }
            Note::Install { view, reg } => {
                let boot = line.seq == 0 && view == initial;
                if let Some(prev) = per_server.get(&line.proc) {
                    if !prev.is_subset_of(view) {
                        out.push(format!("server {} installed {view} after {prev}", line.proc));
                    }
                }
                per_server.insert(line.proc, view.clone());
                if boot {
                    continue;
                }
                if let Some(other) = installed.iter().find(|o| !comparable(o, view)) {
                    out.push(format!("installed views {other} and {view} are not comparable"));
                }
                if !generated.contains(view) {
                    out.push(format!("{view} was installed without being generated"));
                }
                for u in view.entries() {
                    match u.sign {
                        Sign::Plus if !initial.contains_entry(u) && !joined.contains_key(&u.server) => {
                            out.push(format!("{view} contains {u} but {} never asked to join", u.server));
                        }
                        Sign::Minus if !left.contains_key(&u.server) => {
                            out.push(format!("{view} contains {u} but {} never asked to leave", u.server));
                        }
                        _ => {}
                    }
                }
                if let Some((wv, ts)) = writes.iter().find(|(wv, ts)| wv.is_subset_of(view) && *ts > reg.ts) {
                    out.push(format!(
                        "server {} installed {view} with state {reg}, older than write {ts} completed in {wv}",
                        line.proc
                    ));
                }
                if !installed.contains(view) {
                    installed.push(view.clone());
                }
            }
            _ => {}
        }
    }
    out
}
