//! Communication-step accounting.
//!
//! Every delivery and timer line in a trace names the event that caused it,
//! so the critical path of an operation or a reconfiguration is recovered by
//! walking those links backwards from where it finished. Each message hop
//! is one step. A reliable multicast costs two steps (the send and the
//! receivers' retransmission) however it was actually delivered, and timer
//! hops are free. See `docs/step-convention.md` for the derivation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::trace::{Note, OpId, OpKind, TraceEvent, TraceLine};
use crate::view::{ProcessId, View};

/// Tunable parts of the counting convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Convention {
    /// Steps charged for one reliable multicast.
    pub multicast_steps: u32,
}

impl Default for Convention {
    fn default() -> Self {
        Convention { multicast_steps: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OpSteps {
    pub op: String,
    pub kind: OpKind,
    pub steps: u32,
    /// The client started in a view older than the one it finished in.
    pub outdated: bool,
    /// A read that had to write back before returning.
    pub write_back: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReconfigSteps {
    pub view: View,
    /// The server whose installation took longest.
    pub slowest: ProcessId,
    pub steps: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Metrics {
    pub ops: Vec<OpSteps>,
    pub reconfigs: Vec<ReconfigSteps>,
    /// Instances whose critical path could not be traced to their start.
    pub skipped: Vec<String>,
}

impl serde::Serialize for OpKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Default)]
struct Event<'a> {
    /// The DELIVER/TIMER/CMD line that started the event, if any.
    head: Option<&'a TraceLine>,
    notes: Vec<&'a Note>,
}

impl Event<'_> {
    fn delivered_multicast(&self) -> bool {
        self.notes.iter().any(|n| matches!(n, Note::RDeliver { .. }))
    }
}

struct Index<'a> {
    events: BTreeMap<u64, Event<'a>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Unit {
    Reconfig,
    Op(OpId),
}

fn body_view(body: &str) -> Option<View> {
    let start = body.find("view=")? + "view=".len();
    let rest = &body[start..];
    let end = rest.find('}')? + 1;
    rest[..end].parse().ok()
}

impl<'a> Index<'a> {
    fn new(trace: &'a [TraceLine]) -> Self {
        let mut events: BTreeMap<u64, Event<'a>> = BTreeMap::new();
        for line in trace {
            let e = events.entry(line.seq).or_default();
            match &line.event {
                TraceEvent::Note(n) => e.notes.push(n),
                TraceEvent::Crash => {}
                _ => e.head = Some(line),
            }
        }
        Index { events }
    }

    fn is_start(&self, seq: u64, unit: Unit) -> bool {
        let Some(e) = self.events.get(&seq) else { return true };
        match unit {
            Unit::Op(op) => e.notes.iter().any(|n| matches!(n, Note::OpInvoke { op: o, .. } if *o == op)),
            Unit::Reconfig => match e.head.map(|l| &l.event) {
                Some(TraceEvent::Timer { timer, .. }) => timer.starts_with("reconfig"),
                Some(TraceEvent::Deliver { .. }) => false,
                _ => true,
            },
        }
    }

    /// Walks back from `seq` to the start of `unit`. Returns the step count
    /// and the deliveries on the path (latest first), or `None` if the path
    /// leaves the unit.
    fn walk(&self, mut seq: u64, unit: Unit, conv: Convention) -> Option<(u32, Vec<&'a TraceLine>)> {
        let mut steps = 0;
        let mut hops = Vec::new();
        while !self.is_start(seq, unit) {
            let e = self.events.get(&seq)?;
            let head = e.head?;
            match &head.event {
                TraceEvent::Timer { cause, .. } => seq = *cause,
                TraceEvent::Deliver { kind, .. } if kind == "INSTALL-SEQ" || e.delivered_multicast() => {
                    // One multicast, possibly relayed: a run of INSTALL-SEQ
                    // hops, or the SEQ-CONV round standing in for it.
                    let mut relays = 0;
                    let mut cur = seq;
                    loop {
                        let Some(ev) = self.events.get(&cur) else { break };
                        let Some(TraceEvent::Deliver { cause, kind, .. }) = ev.head.map(|l| &l.event) else { break };
                        if kind == "INSTALL-SEQ" {
                            hops.push(ev.head?);
                            relays += 1;
                            cur = *cause;
                        } else if ev.delivered_multicast() {
                            hops.push(ev.head?);
                            relays += 1;
                            cur = *cause;
                            break;
                        } else {
                            break;
                        }
                    }
                    steps += relays.max(conv.multicast_steps);
                    seq = cur;
                }
                TraceEvent::Deliver { cause, .. } => {
                    hops.push(head);
                    steps += 1;
                    seq = *cause;
                }
                _ => return None,
            }
        }
        Some((steps, hops))
    }
}

impl Metrics {
    pub fn from_trace(trace: &[TraceLine]) -> Self {
        Self::with_convention(trace, Convention::default())
    }

    pub fn with_convention(trace: &[TraceLine], conv: Convention) -> Self {
        let idx = Index::new(trace);
        let mut m = Metrics::default();

        for line in trace {
            let TraceEvent::Note(Note::OpComplete { op, kind, view, .. }) = &line.event else { continue };
            match idx.walk(line.seq, Unit::Op(*op), conv) {
                Some((steps, hops)) => {
                    let first_request = hops.iter().rev().find_map(|l| match &l.event {
                        TraceEvent::Deliver { from, body, .. } if *from == op.client => body_view(body),
                        _ => None,
                    });
                    let write_back = *kind == OpKind::Read
                        && hops.iter().any(|l| matches!(&l.event, TraceEvent::Deliver { kind, .. } if kind == "WRITE"));
                    m.ops.push(OpSteps {
                        op: op.to_string(),
                        kind: *kind,
                        steps,
                        outdated: first_request.is_some_and(|v| v != *view),
                        write_back,
                    });
                }
                None => m.skipped.push(format!("operation {op}: critical path leaves the operation")),
            }
        }

        let mut per_view: BTreeMap<View, (ProcessId, u32)> = BTreeMap::new();
        let mut order: Vec<View> = Vec::new();
        for line in trace {
            let TraceEvent::Note(Note::Install { view, .. }) = &line.event else { continue };
            if line.seq == 0 {
                continue;
            }
            match idx.walk(line.seq, Unit::Reconfig, conv) {
                Some((steps, _)) => {
                    let slot = per_view.entry(view.clone()).or_insert_with(|| {
                        order.push(view.clone());
                        (line.proc, steps)
                    });
                    if steps > slot.1 {
                        *slot = (line.proc, steps);
                    }
                }
                None => m.skipped.push(format!("install of {view} at {}: no reconfiguration start found", line.proc)),
            }
        }
        m.reconfigs = order
            .into_iter()
            .map(|view| {
                let (slowest, steps) = per_view[&view];
                ReconfigSteps { view, slowest, steps }
            })
            .collect();
        m
    }

    /// Steps of the first operation matching the given shape, if any.
    pub fn op_steps(&self, kind: OpKind, outdated: bool, write_back: bool) -> Option<u32> {
        self.ops
            .iter()
            .find(|o| o.kind == kind && o.outdated == outdated && o.write_back == write_back)
            .map(|o| o.steps)
    }

    /// Aligned text table: one line per operation shape (with the range
    /// of step counts seen) followed by one line per installed view.
    pub fn table(&self) -> String {
        let mut shapes: BTreeMap<(String, &str), (u32, u32, usize)> = BTreeMap::new();
        for o in &self.ops {
            let name = if o.write_back { format!("{}+write-back", o.kind) } else { o.kind.to_string() };
            let fresh = if o.outdated { "outdated" } else { "updated" };
            let e = shapes.entry((name, fresh)).or_insert((u32::MAX, 0, 0));
            e.0 = e.0.min(o.steps);
            e.1 = e.1.max(o.steps);
            e.2 += 1;
        }
        let mut out = String::new();
        if shapes.is_empty() {
            let _ = writeln!(out, "no operations completed");
        } else {
            let _ = writeln!(out, "{:<18} {:<9} {:>5} {:>5} {:>5}", "operation", "view", "min", "max", "count");
        }
        for ((name, fresh), (lo, hi, n)) in &shapes {
            let _ = writeln!(out, "{name:<18} {fresh:<9} {lo:>5} {hi:>5} {n:>5}");
        }
        if !self.reconfigs.is_empty() {
            let _ = writeln!(out, "\n{:<40} {:>7} {:>5}", "installed view", "slowest", "steps");
            for r in &self.reconfigs {
                let _ = writeln!(out, "{:<40} {:>7} {:>5}", r.view.to_string(), r.slowest.to_string(), r.steps);
            }
        }
        for s in &self.skipped {
            let _ = writeln!(out, "warning: {s}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::parse;

    #[test]
    fn read_round_trip_is_two_steps() {
        let t = parse(
            "\
t=1 seq=1 101 CMD read 101
t=1 seq=1 101 OP_INVOKE op=101.1 kind=read
t=2 seq=2 1 DELIVER cause=1 from=101 READ tag=1 view={+1,+2,+3}
t=2 seq=3 2 DELIVER cause=1 from=101 READ tag=1 view={+1,+2,+3}
t=3 seq=5 101 DELIVER cause=2 from=1 READ_REP tag=1 pair=init@0.0 view={+1,+2,+3}
t=4 seq=6 101 DELIVER cause=3 from=2 READ_REP tag=1 pair=init@0.0 view={+1,+2,+3}
t=4 seq=6 101 OP_COMPLETE op=101.1 kind=read value=init ts=0.0 view={+1,+2,+3}
",
        )
        .unwrap();
        let m = Metrics::from_trace(&t);
        assert_eq!(m.ops.len(), 1);
        assert_eq!(m.ops[0].steps, 2);
        assert!(!m.ops[0].outdated && !m.ops[0].write_back);
    }

    #[test]
    fn relayed_multicast_costs_the_same_as_direct() {
        // 2 relays INSTALL-SEQ from 1 to 3; 3 installs after 2's state.
        let t = parse(
            "\
t=50 seq=1 1 TIMER cause=0 reconfig view={+1,+2,+3}
t=51 seq=2 2 DELIVER cause=1 from=1 INSTALL-SEQ w={+1,+2,+3,+4} seq=[{+1,+2,+3,+4}] ov={+1,+2,+3}
t=51 seq=2 2 R_DELIVER w={+1,+2,+3,+4} seq=[{+1,+2,+3,+4}] ov={+1,+2,+3}
t=52 seq=3 3 DELIVER cause=2 from=2 INSTALL-SEQ w={+1,+2,+3,+4} seq=[{+1,+2,+3,+4}] ov={+1,+2,+3}
t=52 seq=3 3 R_DELIVER w={+1,+2,+3,+4} seq=[{+1,+2,+3,+4}] ov={+1,+2,+3}
t=53 seq=4 4 DELIVER cause=3 from=3 STATE-UPDATE ov={+1,+2,+3} w={+1,+2,+3,+4} reg=init@0.0 updates={+4}
t=53 seq=4 4 INSTALL view={+1,+2,+3,+4} reg=init@0.0
",
        )
        .unwrap();
        let m = Metrics::from_trace(&t);
        assert_eq!(m.reconfigs.len(), 1);
        assert_eq!(m.reconfigs[0].steps, 3);
        let tripled = Metrics::with_convention(&t, Convention { multicast_steps: 3 });
        assert_eq!(tripled.reconfigs[0].steps, 4);
    }

    #[test]
    fn body_views_are_extracted() {
        assert_eq!(body_view("tag=1 view={+1,+2}"), Some("{+1,+2}".parse().unwrap()));
        assert_eq!(body_view("tag=1"), None);
    }
}
