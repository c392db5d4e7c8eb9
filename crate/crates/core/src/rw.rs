//! Multi-writer ABD with view verification.
//!
//! Clients run one operation at a time. Each phase sends a request to the
//! members of the client's current view and waits for a quorum of replies
//! that carry that same view. A reply carrying a strictly newer view makes
//! the client adopt it and restart the phase. Only the phase restarts; a
//! restarted write phase reuses the timestamp chosen before.

use std::collections::{BTreeMap, VecDeque};

use log::debug;

use crate::message::{Message, Oracle, Outbox, Timer};
use crate::register::{RegisterPair, Timestamp, Value};
use crate::trace::{Note, OpId, OpKind};
use crate::view::{ProcessId, View};

/// Server side of the read/write protocol: the reply to a client request.
/// Returns `None` for anything that is not a client request.
pub fn serve(reg: &mut RegisterPair, cv: &View, msg: &Message) -> Option<Message> {
    let view = cv.clone();
    match msg {
        Message::ReadTs { tag, .. } => Some(Message::ReadTsRep { tag: *tag, ts: reg.ts, view }),
        Message::Write { tag, value, ts, .. } => {
            reg.adopt_if_newer(&RegisterPair { value: value.clone(), ts: *ts });
            Some(Message::WriteRep { tag: *tag, view })
        }
        Message::Read { tag, .. } => Some(Message::ReadRep { tag: *tag, pair: reg.clone(), view }),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    /// Write phase 1: collect timestamps.
    ReadTs,
    /// Write phase 2.
    Write,
    /// Read phase 1.
    Read,
    /// Read phase 2: propagate the highest pair before returning it.
    WriteBack,
}

#[derive(Clone, Debug)]
enum Reply {
    Ts(Timestamp),
    Ack,
    Pair(RegisterPair),
}

#[derive(Clone, Debug)]
struct ActiveOp {
    id: OpId,
    kind: OpKind,
    /// Value to write; for reads, the pair being written back.
    pair: Option<RegisterPair>,
    value: Option<Value>,
    phase: Phase,
    tag: u64,
    replies: BTreeMap<ProcessId, Reply>,
    /// Members that replied with any view in the current attempt.
    heard: BTreeMap<ProcessId, View>,
}

#[derive(Clone, Debug)]
pub struct Client {
    me: ProcessId,
    cv: View,
    retry_after: u64,
    next_tag: u64,
    next_op: u32,
    op: Option<ActiveOp>,
    queue: VecDeque<(OpKind, Option<Value>)>,
    restarts: u64,
}

impl Client {
    pub fn new(me: ProcessId, initial_view: View, retry_after: u64) -> Self {
        Client {
            me,
            cv: initial_view,
            retry_after,
            next_tag: 0,
            next_op: 0,
            op: None,
            queue: VecDeque::new(),
            restarts: 0,
        }
    }

    pub fn id(&self) -> ProcessId {
        self.me
    }

    pub fn view(&self) -> &View {
        &self.cv
    }

    pub fn is_busy(&self) -> bool {
        self.op.is_some() || !self.queue.is_empty()
    }

    pub fn restarts(&self) -> u64 {
        self.restarts
    }

    pub fn write(&mut self, value: Value, out: &mut Outbox) {
        self.queue.push_back((OpKind::Write, Some(value)));
        self.start_next(out);
    }

    pub fn read(&mut self, out: &mut Outbox) {
        self.queue.push_back((OpKind::Read, None));
        self.start_next(out);
    }

    fn start_next(&mut self, out: &mut Outbox) {
        if self.op.is_some() {
            return;
        }
        let Some((kind, value)) = self.queue.pop_front() else {
            return;
        };
        self.next_op += 1;
        let id = OpId { client: self.me, n: self.next_op };
        out.note(Note::OpInvoke { op: id, kind, value: value.clone() });
        let phase = match kind {
            OpKind::Write => Phase::ReadTs,
            OpKind::Read => Phase::Read,
        };
        self.op = Some(ActiveOp {
            id,
            kind,
            pair: None,
            value,
            phase,
            tag: 0,
            replies: BTreeMap::new(),
            heard: BTreeMap::new(),
        });
        self.begin_phase(out);
    }

    fn begin_phase(&mut self, out: &mut Outbox) {
        let op = self.op.as_mut().expect("phase of an active op");
        self.next_tag += 1;
        op.tag = self.next_tag;
        op.replies.clear();
        op.heard.clear();
        let tag = op.tag;
        let view = self.cv.clone();
        let msg = match op.phase {
            Phase::ReadTs => Message::ReadTs { tag, view },
            Phase::Read => Message::Read { tag, view },
            Phase::Write | Phase::WriteBack => {
                let pair = op.pair.clone().expect("write phases carry a pair");
                Message::Write { tag, value: pair.value, ts: pair.ts, view }
            }
        };
        out.send_all(&self.cv.members(), msg);
        out.timer(self.retry_after, Timer::ClientRetry { tag });
    }

    fn restart_phase(&mut self, out: &mut Outbox) {
        self.restarts += 1;
        self.begin_phase(out);
    }

    /// Watchdog: if the phase is still stuck, look the current view up and
    /// try again.
    pub fn on_timeout(&mut self, tag: u64, oracle: &Oracle, out: &mut Outbox) {
        let Some(op) = &self.op else { return };
        if op.tag != tag {
            return;
        }
        if self.cv.is_subset_of(&oracle.directory) {
            self.cv = oracle.directory.clone();
        }
        self.restart_phase(out);
    }

    pub fn on_message(&mut self, from: ProcessId, msg: &Message, out: &mut Outbox) {
        let (tag, view, reply) = match msg {
            Message::ReadTsRep { tag, ts, view } => (*tag, view, Reply::Ts(*ts)),
            Message::WriteRep { tag, view } => (*tag, view, Reply::Ack),
            Message::ReadRep { tag, pair, view } => (*tag, view, Reply::Pair(pair.clone())),
            _ => return,
        };
        let Some(op) = self.op.as_mut() else { return };
        if op.tag != tag || !self.cv.is_member(from) {
            return;
        }
        if *view != self.cv {
            if self.cv.is_subset_of(view) {
                debug!("client {} adopts {view} from {from}", self.me);
                self.cv = view.clone();
                self.restart_phase(out);
                return;
            }
            op.heard.insert(from, view.clone());
            if op.heard.len() == self.cv.size() {
                // Every member answered but no quorum shares our view; the
                // watchdog will look for a newer one.
                debug!("client {} phase stuck in {}", self.me, self.cv);
            }
            return;
        }
        op.heard.insert(from, view.clone());
        op.replies.insert(from, reply);
        let q = self.cv.quorum().expect("clients only use non-degenerate views");
        if op.replies.len() < q {
            return;
        }
        self.phase_done(out);
    }

    fn phase_done(&mut self, out: &mut Outbox) {
        let op = self.op.as_mut().expect("active op");
        match op.phase {
            Phase::ReadTs => {
                let max = op
                    .replies
                    .values()
                    .filter_map(|r| match r {
                        Reply::Ts(ts) => Some(*ts),
                        _ => None,
                    })
                    .max()
                    .unwrap_or(Timestamp::INITIAL);
                let value = op.value.clone().expect("writes carry a value");
                op.pair = Some(RegisterPair { value, ts: max.succ(self.me) });
                op.phase = Phase::Write;
                self.begin_phase(out);
            }
            Phase::Read => {
                let pairs: Vec<&RegisterPair> = op
                    .replies
                    .values()
                    .filter_map(|r| match r {
                        Reply::Pair(p) => Some(p),
                        _ => None,
                    })
                    .collect();
                let best = (*pairs.iter().max_by_key(|p| p.ts).expect("quorum is non-empty")).clone();
                if pairs.iter().all(|p| **p == best) {
                    self.complete(best, out);
                } else {
                    op.pair = Some(best);
                    op.phase = Phase::WriteBack;
                    self.begin_phase(out);
                }
            }
            Phase::Write | Phase::WriteBack => {
                let pair = op.pair.clone().expect("write phases carry a pair");
                self.complete(pair, out);
            }
        }
    }

    fn complete(&mut self, pair: RegisterPair, out: &mut Outbox) {
        let op = self.op.take().expect("active op");
        out.note(Note::OpComplete { op: op.id, kind: op.kind, value: pair.value, ts: pair.ts, view: self.cv.clone() });
        self.start_next(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &str) -> View {
        s.parse().unwrap()
    }

    fn pair(val: &str, c: u64, w: u32) -> RegisterPair {
        RegisterPair { value: Value::new(val).unwrap(), ts: Timestamp { counter: c, writer: ProcessId(w) } }
    }

    fn tag_of(out: &Outbox) -> u64 {
        match &out.sends[0].1 {
            Message::ReadTs { tag, .. } | Message::Read { tag, .. } | Message::Write { tag, .. } => *tag,
            m => panic!("unexpected {m}"),
        }
    }

    #[test]
    fn serve_adopts_only_newer_writes() {
        let cv = v("{+1,+2,+3}");
        let mut reg = pair("a", 2, 5);
        let stale = Message::Write { tag: 1, value: Value::new("b").unwrap(), ts: Timestamp { counter: 1, writer: ProcessId(9) }, view: cv.clone() };
        assert_eq!(serve(&mut reg, &cv, &stale), Some(Message::WriteRep { tag: 1, view: cv.clone() }));
        assert_eq!(reg, pair("a", 2, 5));
        let fresh = Message::Write { tag: 2, value: Value::new("c").unwrap(), ts: Timestamp { counter: 3, writer: ProcessId(1) }, view: cv.clone() };
        serve(&mut reg, &cv, &fresh);
        assert_eq!(reg, pair("c", 3, 1));
        assert!(serve(&mut reg, &cv, &Message::ViewUpdated { view: cv.clone() }).is_none());
    }

    #[test]
    fn write_picks_successor_of_max_timestamp() {
        let cv = v("{+1,+2,+3}");
        let mut c = Client::new(ProcessId(7), cv.clone(), 100);
        let mut out = Outbox::default();
        c.write(Value::new("x").unwrap(), &mut out);
        assert_eq!(out.sends.len(), 3);
        let tag = tag_of(&out);
        let mut out = Outbox::default();
        c.on_message(ProcessId(1), &Message::ReadTsRep { tag, ts: Timestamp::INITIAL, view: cv.clone() }, &mut out);
        c.on_message(ProcessId(2), &Message::ReadTsRep { tag, ts: Timestamp::INITIAL, view: cv.clone() }, &mut out);
        let Message::Write { ts, tag: wtag, .. } = &out.sends[0].1 else { panic!() };
        assert_eq!(*ts, Timestamp { counter: 1, writer: ProcessId(7) });
        let wtag = *wtag;
        let mut out = Outbox::default();
        c.on_message(ProcessId(3), &Message::WriteRep { tag: wtag, view: cv.clone() }, &mut out);
        c.on_message(ProcessId(1), &Message::WriteRep { tag: wtag, view: cv.clone() }, &mut out);
        assert!(matches!(out.notes[0], Note::OpComplete { kind: OpKind::Write, .. }));
        assert!(!c.is_busy());
    }

    #[test]
    fn read_fast_path_and_write_back() {
        let cv = v("{+1,+2,+3}");
        let mut c = Client::new(ProcessId(8), cv.clone(), 100);
        let mut out = Outbox::default();
        c.read(&mut out);
        let tag = tag_of(&out);
        let mut out = Outbox::default();
        c.on_message(ProcessId(1), &Message::ReadRep { tag, pair: pair("a", 1, 7), view: cv.clone() }, &mut out);
        c.on_message(ProcessId(2), &Message::ReadRep { tag, pair: pair("a", 1, 7), view: cv.clone() }, &mut out);
        assert!(out.sends.is_empty());
        assert!(matches!(&out.notes[0], Note::OpComplete { value, .. } if value.as_str() == "a"));

        let mut out = Outbox::default();
        c.read(&mut out);
        let tag = tag_of(&out);
        let mut out = Outbox::default();
        c.on_message(ProcessId(1), &Message::ReadRep { tag, pair: pair("a", 1, 7), view: cv.clone() }, &mut out);
        c.on_message(ProcessId(3), &Message::ReadRep { tag, pair: pair("b", 2, 9), view: cv.clone() }, &mut out);
        assert!(out.notes.iter().all(|n| !matches!(n, Note::OpComplete { .. })));
        let Message::Write { value, ts, .. } = &out.sends[0].1 else { panic!() };
        assert_eq!((value.as_str(), ts.counter), ("b", 2));
    }

    #[test]
    fn newer_view_restarts_only_the_phase() {
        let v0 = v("{+1,+2,+3}");
        let v1 = v("{+1,+2,+3,+4}");
        let mut c = Client::new(ProcessId(7), v0.clone(), 100);
        let mut out = Outbox::default();
        c.write(Value::new("x").unwrap(), &mut out);
        let tag = tag_of(&out);
        let mut out = Outbox::default();
        c.on_message(ProcessId(2), &Message::ReadTsRep { tag, ts: Timestamp::INITIAL, view: v1.clone() }, &mut out);
        assert_eq!(c.view(), &v1);
        assert_eq!(out.sends.len(), 4);
        assert!(out.sends.iter().all(|(_, m)| m.kind() == "READ_TS"));
        assert_eq!(c.restarts(), 1);
        // replies to the abandoned attempt are ignored
        let mut out2 = Outbox::default();
        c.on_message(ProcessId(1), &Message::ReadTsRep { tag, ts: Timestamp::INITIAL, view: v0 }, &mut out2);
        assert!(out2.is_empty());
    }

    #[test]
    fn older_view_replies_do_not_count() {
        let v0 = v("{+1,+2,+3}");
        let v1 = v("{+1,+2,+3,+4}");
        let mut c = Client::new(ProcessId(7), v1.clone(), 100);
        let mut out = Outbox::default();
        c.read(&mut out);
        let tag = tag_of(&out);
        let mut out = Outbox::default();
        for p in [1, 2, 3] {
            c.on_message(ProcessId(p), &Message::ReadRep { tag, pair: pair("a", 1, 7), view: v0.clone() }, &mut out);
        }
        assert!(out.is_empty());
        assert!(c.is_busy());
        // the watchdog retries the phase in the same view
        let mut out = Outbox::default();
        c.on_timeout(tag, &Oracle { directory: v1.clone(), ..Oracle::default() }, &mut out);
        assert_eq!(out.sends.len(), 4);
    }

    #[test]
    fn operations_queue_behind_the_active_one() {
        let cv = v("{+1}");
        let mut c = Client::new(ProcessId(5), cv.clone(), 100);
        let mut out = Outbox::default();
        c.read(&mut out);
        c.write(Value::new("z").unwrap(), &mut out);
        assert_eq!(out.notes.len(), 1);
        let tag = tag_of(&out);
        let mut out = Outbox::default();
        c.on_message(ProcessId(1), &Message::ReadRep { tag, pair: pair("a", 0, 0), view: cv }, &mut out);
        assert_eq!(out.notes.len(), 2);
        assert!(matches!(out.notes[1], Note::OpInvoke { kind: OpKind::Write, .. }));
    }
}
