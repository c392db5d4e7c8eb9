//! Random register histories and a brute-force linearizability oracle that
//! shares no code with the checker under test.

use freestore::checker::{History, OpRecord};
use freestore::{OpId, OpKind, ProcessId, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INITIAL: &str = "v0";

fn value(s: &str) -> Value {
    Value::new(s).expect("token")
}

/// A history of at most `max_ops` operations by 2 to 4 clients. Writes
/// carry distinct values. A read returns the initial value or the value of
/// some write invoked before the read completed, so the corpus mixes
/// linearizable and non-linearizable histories. Some operations are left
/// pending.
pub fn random_history(rng: &mut ChaCha8Rng, max_ops: usize) -> History {
    let clients = rng.gen_range(2..=4u32);
    let total = rng.gen_range(1..=max_ops);
    let mut open: Vec<Option<usize>> = vec![None; clients as usize];
    let mut counters = vec![0u32; clients as usize];
    let mut ops: Vec<OpRecord> = Vec::new();
    let mut writes = 0;
    let mut pos = 0;
    while ops.len() < total || open.iter().any(Option::is_some) {
        let c = rng.gen_range(0..clients as usize);
        match open[c] {
            Some(i) => {
                // Leave a few operations pending once all have started.
                if ops.len() >= total && rng.gen_bool(0.15) {
                    open[c] = None;
                    continue;
                }
                ops[i].complete = Some(pos);
                if ops[i].kind == OpKind::Read {
                    let candidates: Vec<Value> = std::iter::once(value(INITIAL))
                        .chain(ops.iter().filter(|o| o.kind == OpKind::Write).filter_map(|o| o.value.clone()))
                        .collect();
                    ops[i].value = Some(candidates[rng.gen_range(0..candidates.len())].clone());
                }
                open[c] = None;
            }
            None if ops.len() < total => {
                counters[c] += 1;
                let kind = if rng.gen_bool(0.5) { OpKind::Write } else { OpKind::Read };
                let v = (kind == OpKind::Write).then(|| {
                    writes += 1;
                    value(&format!("w{writes}"))
                });
                ops.push(OpRecord {
                    id: OpId { client: ProcessId(101 + c as u32), n: counters[c] },
                    kind,
                    value: v,
                    ts: None,
                    invoke: pos,
                    complete: None,
                });
                open[c] = Some(ops.len() - 1);
            }
            None => continue,
        }
        pos += 1;
    }
    History::new(value(INITIAL), ops)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn before(a: &OpRecord, b: &OpRecord) -> bool {
    matches!(a.complete, Some(c) if c < b.invoke)
}

/// Tries every total order of the completed operations plus every subset
/// of the pending writes. Pending reads returned nothing and are ignored.
pub fn brute_force_linearizable(h: &History) -> bool {
    let done: Vec<&OpRecord> = h.ops.iter().filter(|o| o.complete.is_some()).collect();
    let pending: Vec<&OpRecord> =
        h.ops.iter().filter(|o| o.complete.is_none() && o.kind == OpKind::Write).collect();
    (0..1u32 << pending.len()).any(|mask| {
        let mut ops = done.clone();
        ops.extend(pending.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, o)| *o));
        let mut used = vec![false; ops.len()];
        permute(&ops, &mut used, h.initial.as_ref().expect("initial value"))
    })
}

fn permute(ops: &[&OpRecord], used: &mut [bool], current: &Value) -> bool {
    if used.iter().all(|u| *u) {
        return true;
    }
    for i in 0..ops.len() {
        if used[i] {
            continue;
        }
        // Nothing still unplaced may have finished before ops[i] started.
        if (0..ops.len()).any(|j| !used[j] && j != i && before(ops[j], ops[i])) {
            continue;
        }
        let next = match ops[i].kind {
            OpKind::Write => ops[i].value.as_ref().expect("write value"),
            OpKind::Read if ops[i].value.as_ref() == Some(current) => current,
            OpKind::Read => continue,
        };
        used[i] = true;
        let ok = permute(ops, used, next);
        used[i] = false;
        if ok {
            return true;
        }
    }
    false
}

/// Every way of making one completed read return a value that was
/// certainly overwritten before the read began: the value of a write `w`
/// with `w -> w' -> read` in real time, or the initial value when some
/// write finished before the read began.
pub fn stale_read_mutations(h: &History) -> Vec<History> {
    let mut out = Vec::new();
    for (r, read) in h.ops.iter().enumerate() {
        if read.kind != OpKind::Read || read.complete.is_none() {
            continue;
        }
        let overwritten: Vec<&OpRecord> =
            h.ops.iter().filter(|w| w.kind == OpKind::Write && before(w, read)).collect();
        let mut stale: Vec<Value> = Vec::new();
        if !overwritten.is_empty() {
            stale.push(value(INITIAL));
        }
        for w in h.ops.iter().filter(|w| w.kind == OpKind::Write) {
            if overwritten.iter().any(|w2| w2.id != w.id && before(w, w2)) {
                stale.extend(w.value.clone());
            }
        }
        for v in stale {
            if read.value.as_ref() == Some(&v) {
                continue;
            }
            let mut m = h.clone();
            m.ops[r].value = Some(v);
            out.push(m);
        }
    }
    out
}
