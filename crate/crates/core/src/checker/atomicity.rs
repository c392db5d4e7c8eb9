//! Linearizability of the register history.
//!
//! Histories of up to 64 operations are searched exhaustively: a depth-first
//! search over "which operations are linearized so far, and what value does
//! the register hold", memoizing dead states. Larger histories fall back to
//! checking the timestamp order the protocol itself assigned, and say so.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use crate::checker::Verdict;
use crate::register::{Timestamp, Value};
use crate::trace::{Note, OpId, OpKind, TraceEvent, TraceLine};

const EXACT_LIMIT: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRecord {
    pub id: OpId,
    pub kind: OpKind,
    /// Written value, or the value a completed read returned.
    pub value: Option<Value>,
    pub ts: Option<Timestamp>,
    /// Position of the invocation in the global event order.
    pub invoke: usize,
    pub complete: Option<usize>,
}

impl OpRecord {
    fn precedes(&self, other: &OpRecord) -> bool {
        self.complete.is_some_and(|c| c < other.invoke)
    }
}

impl fmt::Display for OpRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let value = self.value.as_ref().map_or("?".to_string(), ToString::to_string);
        match self.complete {
            Some(c) => write!(f, "{} {} {} [{}..{}]", self.id, self.kind, value, self.invoke, c),
            None => write!(f, "{} {} {} [{}..pending]", self.id, self.kind, value, self.invoke),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct History {
    pub initial: Option<Value>,
    pub ops: Vec<OpRecord>,
}

impl History {
    pub fn new(initial: Value, ops: Vec<OpRecord>) -> Self {
        History { initial: Some(initial), ops }
    }

    /// Builds the history from `OP_INVOKE`/`OP_COMPLETE` notes; positions
    /// are line numbers, which respect both time and event order.
    pub fn from_trace(trace: &[TraceLine]) -> Self {
        let mut initial = None;
        let mut ops: BTreeMap<OpId, OpRecord> = BTreeMap::new();
        for (pos, line) in trace.iter().enumerate() {
            let TraceEvent::Note(note) = &line.event else { continue };
            match note {
                Note::Install { reg, .. } if line.seq == 0 && initial.is_none() => initial = Some(reg.value.clone()),
                Note::OpInvoke { op, kind, value } => {
                    ops.insert(*op, OpRecord { id: *op, kind: *kind, value: value.clone(), ts: None, invoke: pos, complete: None });
                }
                Note::OpComplete { op, value, ts, .. } => {
                    if let Some(r) = ops.get_mut(op) {
                        r.complete = Some(pos);
                        r.ts = Some(*ts);
                        if r.kind == OpKind::Read {
                            r.value = Some(value.clone());
                        }
                    }
                }
                _ => {}
            }
        }
        let mut ops: Vec<OpRecord> = ops.into_values().collect();
        ops.sort_by_key(|o| o.invoke);
        History { initial, ops }
    }

    pub fn completed(&self) -> usize {
        self.ops.iter().filter(|o| o.complete.is_some()).count()
    }
}

/// Which ops take part in the search, given the treatment of pending ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PendingMode {
    /// Pending writes may or may not have taken effect.
    Include,
    /// Pending operations are dropped.
    Exclude,
}

fn relevant(h: &History, mode: PendingMode) -> Vec<&OpRecord> {
    h.ops
        .iter()
        .filter(|o| match (o.complete, o.kind, mode) {
            (Some(_), _, _) => true,
            (None, OpKind::Write, PendingMode::Include) => true,
            (None, _, _) => false,
        })
        .collect()
}

/// Exact search over at most 64 operations.
pub fn linearizable(h: &History, mode: PendingMode) -> bool {
    let ops = relevant(h, mode);
    assert!(ops.len() <= EXACT_LIMIT, "exact search is limited to {EXACT_LIMIT} operations");
    let mut values: Vec<Option<&Value>> = vec![h.initial.as_ref()];
    let mut val_idx = Vec::with_capacity(ops.len());
    for o in &ops {
        let v = o.value.as_ref();
        let idx = match values.iter().position(|x| *x == v) {
            Some(i) => i,
            None => {
                values.push(v);
                values.len() - 1
            }
        };
        val_idx.push(idx);
    }
    let preds: Vec<u64> = ops
        .iter()
        .map(|o| ops.iter().enumerate().filter(|(_, p)| p.precedes(o)).fold(0u64, |m, (j, _)| m | (1 << j)))
        .collect();
    let required: u64 =
        ops.iter().enumerate().filter(|(_, o)| o.complete.is_some()).fold(0, |m, (i, _)| m | (1 << i));

    struct Search<'a> {
        kinds: Vec<OpKind>,
        val_idx: &'a [usize],
        preds: &'a [u64],
        required: u64,
        dead: HashSet<(u64, usize)>,
    }

    impl Search<'_> {
        fn go(&mut self, mask: u64, cur: usize) -> bool {
            if mask & self.required == self.required {
                return true;
            }
            if self.dead.contains(&(mask, cur)) {
                return false;
            }
            for i in 0..self.kinds.len() {
                let bit = 1u64 << i;
                if mask & bit != 0 || self.preds[i] & !mask != 0 {
                    continue;
                }
                let ok = match self.kinds[i] {
                    OpKind::Read => self.val_idx[i] == cur && self.go(mask | bit, cur),
                    OpKind::Write => self.go(mask | bit, self.val_idx[i]),
                };
                if ok {
                    return true;
                }
            }
            self.dead.insert((mask, cur));
            false
        }
    }

    let mut s = Search { kinds: ops.iter().map(|o| o.kind).collect(), val_idx: &val_idx, preds: &preds, required, dead: HashSet::new() };
    s.go(0, 0)
}

/// Greedily drops operations while the remainder still fails, yielding a
/// sub-history in which every operation is needed for the violation. A write
/// whose value some remaining read returned is kept, so the result never
/// degenerates into "a read returned a value nobody wrote".
pub fn minimal_counterexample(h: &History, mode: PendingMode) -> History {
    let mut cur = h.clone();
    loop {
        let before = cur.ops.len();
        let mut i = 0;
        while i < cur.ops.len() {
            let o = &cur.ops[i];
            let sourced = o.kind == OpKind::Write
                && cur.ops.iter().any(|r| r.kind == OpKind::Read && r.complete.is_some() && r.value == o.value);
            let mut trial = cur.clone();
            trial.ops.remove(i);
            if !sourced && !linearizable(&trial, mode) {
                cur = trial;
            } else {
                i += 1;
            }
        }
        // Dropping a read can free the write it returned, so go again.
        if cur.ops.len() == before {
            return cur;
        }
    }
}

/// Sufficient check for large histories: the protocol's timestamps must
/// order operations consistently with real time, and every read must return
/// the value written with the timestamp it reports.
fn timestamp_order_ok(h: &History) -> Result<(), String> {
    let mut by_ts: BTreeMap<Timestamp, &Value> = BTreeMap::new();
    for o in &h.ops {
        if let (OpKind::Write, Some(ts), Some(v)) = (o.kind, o.ts, o.value.as_ref()) {
            by_ts.insert(ts, v);
        }
    }
    let pending: Vec<&Value> =
        h.ops.iter().filter(|o| o.kind == OpKind::Write && o.complete.is_none()).filter_map(|o| o.value.as_ref()).collect();
    for o in h.ops.iter().filter(|o| o.kind == OpKind::Read && o.complete.is_some()) {
        let (Some(ts), Some(v)) = (o.ts, o.value.as_ref()) else { continue };
        let expected = if ts == Timestamp::INITIAL { h.initial.as_ref() } else { by_ts.get(&ts).copied() };
        if expected != Some(v) && !(expected.is_none() && pending.contains(&v)) {
            return Err(format!("read {} returned {v} with timestamp {ts} of a different value", o.id));
        }
    }
    let key = |o: &OpRecord| (o.ts, o.kind == OpKind::Read);
    for a in h.ops.iter().filter(|o| o.complete.is_some()) {
        for b in h.ops.iter().filter(|o| o.complete.is_some() && a.precedes(o)) {
            let bad = match (a.kind, b.kind) {
                (OpKind::Write, OpKind::Write) => key(a) >= key(b),
                _ => key(a) > key(b),
            };
            if bad {
                return Err(format!("{} precedes {} but is ordered after it", a.id, b.id));
            }
        }
    }
    Ok(())
}

pub fn check_atomicity(h: &History) -> Verdict {
    if relevant(h, PendingMode::Include).len() > EXACT_LIMIT {
        return match timestamp_order_ok(h) {
            Ok(()) => Verdict::Heuristic,
            Err(e) => Verdict::Violation(format!("(heuristic) {e}")),
        };
    }
    if linearizable(h, PendingMode::Include) {
        return Verdict::Ok;
    }
    let min = minimal_counterexample(h, PendingMode::Include);
    let ops: Vec<String> = min.ops.iter().map(ToString::to_string).collect();
    Verdict::Violation(format!("not linearizable; minimal sub-history: {}", ops.join("; ")))
}
