//! Every message exchanged between simulated processes, plus the timers and
//! the outbox handlers write their effects into.

use std::collections::BTreeSet;
use std::fmt;

use crate::paxos::Ballot;
use crate::register::{RegisterPair, Timestamp, Value};
use crate::trace::Note;
use crate::view::{ProcessId, Update, View, ViewSeq};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Message {
    // live view generator
    SeqView { ov: View, seq: ViewSeq },
    SeqConv { ov: View, seq: ViewSeq },
    // single-decree consensus per view
    Prepare { inst: View, ballot: Ballot },
    Promise { inst: View, ballot: Ballot, accepted: Option<(Ballot, ViewSeq)> },
    Accept { inst: View, ballot: Ballot, value: ViewSeq },
    Accepted { inst: View, ballot: Ballot, value: ViewSeq },
    Learn { inst: View, value: ViewSeq },
    Nack { inst: View, ballot: Ballot, promised: Ballot },
    Forward { inst: View, value: ViewSeq },
    // reconfiguration
    Reconfig { update: Update, view: View },
    RecConfirm { update: Update, view: View },
    ViewReply { view: View },
    InstallSeq(InstallSeq),
    StateUpdate { ov: View, w: View, reg: RegisterPair, updates: BTreeSet<Update> },
    ViewUpdated { view: View },
    // read/write
    ReadTs { tag: u64, view: View },
    ReadTsRep { tag: u64, ts: Timestamp, view: View },
    Write { tag: u64, value: Value, ts: Timestamp, view: View },
    WriteRep { tag: u64, view: View },
    Read { tag: u64, view: View },
    ReadRep { tag: u64, pair: RegisterPair, view: View },
}

/// `<INSTALL-SEQ, w, seq, ov>`; `w` is always the least updated view of `seq`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstallSeq {
    pub w: View,
    pub seq: ViewSeq,
    pub ov: View,
}

impl InstallSeq {
    pub fn group(&self) -> BTreeSet<ProcessId> {
        let mut g = self.ov.members();
        g.extend(self.w.members());
        g
    }
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::SeqView { .. } => "SEQ-VIEW",
            Message::SeqConv { .. } => "SEQ-CONV",
            Message::Prepare { .. } => "PREPARE",
            Message::Promise { .. } => "PROMISE",
            Message::Accept { .. } => "ACCEPT",
            Message::Accepted { .. } => "ACCEPTED",
            Message::Learn { .. } => "LEARN",
            Message::Nack { .. } => "NACK",
            Message::Forward { .. } => "FORWARD",
            Message::Reconfig { .. } => "RECONFIG",
            Message::RecConfirm { .. } => "REC-CONFIRM",
            Message::ViewReply { .. } => "VIEW-REPLY",
            Message::InstallSeq(_) => "INSTALL-SEQ",
            Message::StateUpdate { .. } => "STATE-UPDATE",
            Message::ViewUpdated { .. } => "VIEW-UPDATED",
            Message::ReadTs { .. } => "READ_TS",
            Message::ReadTsRep { .. } => "READ_TS_REP",
            Message::Write { .. } => "WRITE",
            Message::WriteRep { .. } => "WRITE_REP",
            Message::Read { .. } => "READ",
            Message::ReadRep { .. } => "READ_REP",
        }
    }

    pub fn is_client_request(&self) -> bool {
        matches!(self, Message::ReadTs { .. } | Message::Write { .. } | Message::Read { .. })
    }
}

fn fmt_updates(f: &mut fmt::Formatter<'_>, updates: &BTreeSet<Update>) -> fmt::Result {
    f.write_str("{")?;
    for (i, u) in updates.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{u}")?;
    }
    f.write_str("}")
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind())?;
        match self {
            Message::SeqView { ov, seq } | Message::SeqConv { ov, seq } => write!(f, " view={ov} seq={seq}"),
            Message::Prepare { inst, ballot } => write!(f, " inst={inst} ballot={ballot}"),
            Message::Promise { inst, ballot, accepted } => {
                write!(f, " inst={inst} ballot={ballot}")?;
                match accepted {
                    Some((b, v)) => write!(f, " accepted={b}:{v}"),
                    None => write!(f, " accepted=none"),
                }
            }
            Message::Accept { inst, ballot, value } | Message::Accepted { inst, ballot, value } => {
                write!(f, " inst={inst} ballot={ballot} value={value}")
            }
            Message::Learn { inst, value } | Message::Forward { inst, value } => {
                write!(f, " inst={inst} value={value}")
            }
            Message::Nack { inst, ballot, promised } => {
                write!(f, " inst={inst} ballot={ballot} promised={promised}")
            }
            Message::Reconfig { update, view } | Message::RecConfirm { update, view } => {
                write!(f, " update={update} view={view}")
            }
            Message::ViewReply { view } | Message::ViewUpdated { view } => write!(f, " view={view}"),
            Message::InstallSeq(m) => write!(f, " w={} seq={} ov={}", m.w, m.seq, m.ov),
            Message::StateUpdate { ov, w, reg, updates } => {
                write!(f, " ov={ov} w={w} reg={reg} updates=")?;
                fmt_updates(f, updates)
            }
            Message::ReadTs { tag, view } | Message::Read { tag, view } | Message::WriteRep { tag, view } => {
                write!(f, " tag={tag} view={view}")
            }
            Message::ReadTsRep { tag, ts, view } => write!(f, " tag={tag} ts={ts} view={view}"),
            Message::Write { tag, value, ts, view } => write!(f, " tag={tag} value={value} ts={ts} view={view}"),
            Message::ReadRep { tag, pair, view } => write!(f, " tag={tag} pair={pair} view={view}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Timer {
    /// Periodic reconfiguration timer armed for a specific current view.
    Reconfig { view: View },
    /// Consensus retry for one instance.
    Paxos { inst: View },
    /// Re-send of a pending join/leave request.
    RequestRetry,
    /// Client phase watchdog; consults the directory oracle.
    ClientRetry { tag: u64 },
}

impl fmt::Display for Timer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Timer::Reconfig { view } => write!(f, "reconfig view={view}"),
            Timer::Paxos { inst } => write!(f, "paxos inst={inst}"),
            Timer::RequestRetry => write!(f, "request-retry"),
            Timer::ClientRetry { tag } => write!(f, "client-retry tag={tag}"),
        }
    }
}

/// Read-only knowledge the simulator exposes to handlers in place of a
/// directory service and a failure detector.
#[derive(Clone, Debug, Default)]
pub struct Oracle {
    /// Most up-to-date view installed anywhere so far.
    pub directory: View,
    /// Processes known to have stopped (crashed or halted).
    pub stopped: BTreeSet<ProcessId>,
}

impl Oracle {
    pub fn believes_alive(&self, p: ProcessId) -> bool {
        !self.stopped.contains(&p)
    }
}

/// Effects produced by a handler: messages, timers and trace notes. Handlers
/// never send directly; the simulator drains the outbox.
#[derive(Debug, Default)]
pub struct Outbox {
    pub sends: Vec<(ProcessId, Message)>,
    pub timers: Vec<(u64, Timer)>,
    pub notes: Vec<Note>,
}

impl Outbox {
    pub fn send(&mut self, to: ProcessId, msg: Message) {
        self.sends.push((to, msg));
    }

    pub fn send_all<'a>(&mut self, to: impl IntoIterator<Item = &'a ProcessId>, msg: Message) {
        for &p in to {
            self.sends.push((p, msg.clone()));
        }
    }

    pub fn timer(&mut self, after: u64, timer: Timer) {
        self.timers.push((after, timer));
    }

    pub fn note(&mut self, note: Note) {
        self.notes.push(note);
    }

    pub fn is_empty(&self) -> bool {
        self.sends.is_empty() && self.timers.is_empty() && self.notes.is_empty()
    }
}
