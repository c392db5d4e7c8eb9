//! Single-decree Paxos, one instance per view being reconfigured.
//!
//! Every member of the instance view is acceptor and learner. The member with
//! the lowest id is the pre-established leader: acceptors start out promised
//! to ballot `0.<leader>`, so the leader may skip the prepare phase on its
//! first proposal. Any other proposal goes through `PREPARE`/`PROMISE` with a
//! round of at least 1. Members that are not coordinating forward their value
//! to the coordinator, the lowest member the oracle believes alive.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use log::debug;

use crate::error::{Error, Result};
use crate::message::{Message, Oracle, Outbox, Timer};
use crate::view::{ProcessId, View, ViewSeq};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ballot {
    pub round: u64,
    pub proposer: ProcessId,
}

impl fmt::Display for Ballot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.round, self.proposer)
    }
}

impl FromStr for Ballot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (r, p) = s.split_once('.').ok_or_else(|| Error::Parse(format!("bad ballot `{s}`")))?;
        Ok(Ballot {
            round: r.parse().map_err(|_| Error::Parse(format!("bad ballot `{s}`")))?,
            proposer: p.parse()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Phase {
    Idle,
    Preparing { ballot: Ballot, promises: BTreeMap<ProcessId, Option<(Ballot, ViewSeq)>> },
    Accepting { ballot: Ballot },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Paxos {
    me: ProcessId,
    inst: View,
    members: BTreeSet<ProcessId>,
    quorum: usize,
    leader: ProcessId,
    retry_after: u64,
    // acceptor
    promised: Ballot,
    accepted: Option<(Ballot, ViewSeq)>,
    // proposer
    value: Option<ViewSeq>,
    phase: Phase,
    max_round: u64,
    timer_armed: bool,
    // learner
    accepted_tally: BTreeMap<(Ballot, ViewSeq), BTreeSet<ProcessId>>,
    learned: Option<ViewSeq>,
}

impl Paxos {
    pub fn new(me: ProcessId, inst: View, retry_after: u64) -> Result<Self> {
        let quorum = inst.quorum()?;
        let members = inst.members();
        if !members.contains(&me) {
            return Err(Error::NotMember(me.to_string(), inst.to_string()));
        }
        let leader = *members.first().expect("quorum() rejects empty views");
        Ok(Paxos {
            me,
            members,
            quorum,
            leader,
            retry_after,
            promised: Ballot { round: 0, proposer: leader },
            accepted: None,
            value: None,
            phase: Phase::Idle,
            max_round: 0,
            timer_armed: false,
            accepted_tally: BTreeMap::new(),
            learned: None,
            inst,
        })
    }

    pub fn me(&self) -> ProcessId {
        self.me
    }

    pub fn is_leader(&self) -> bool {
        self.me == self.leader
    }

    pub fn inst(&self) -> &View {
        &self.inst
    }

    pub fn learned(&self) -> Option<&ViewSeq> {
        self.learned.as_ref()
    }

    pub fn accepted(&self) -> Option<&(Ballot, ViewSeq)> {
        self.accepted.as_ref()
    }

    fn coordinator(&self, oracle: &Oracle) -> ProcessId {
        self.members.iter().copied().find(|&p| oracle.believes_alive(p)).unwrap_or(self.leader)
    }

    fn arm(&mut self, out: &mut Outbox) {
        if !self.timer_armed {
            self.timer_armed = true;
            out.timer(self.retry_after, Timer::Paxos { inst: self.inst.clone() });
        }
    }

    /// Proposes `value`. Only the first call has any effect.
    pub fn propose(&mut self, value: ViewSeq, oracle: &Oracle, out: &mut Outbox) {
        if self.learned.is_some() || self.value.is_some() {
            return;
        }
        self.value = Some(value.clone());
        if self.me == self.leader && self.coordinator(oracle) == self.me {
            self.fast_accept(value, out);
        } else if self.coordinator(oracle) == self.me {
            self.start_round(out);
        } else {
            out.send(self.coordinator(oracle), Message::Forward { inst: self.inst.clone(), value });
        }
        self.arm(out);
    }

    fn fast_accept(&mut self, value: ViewSeq, out: &mut Outbox) {
        let ballot = Ballot { round: 0, proposer: self.me };
        self.phase = Phase::Accepting { ballot };
        out.send_all(&self.members, Message::Accept { inst: self.inst.clone(), ballot, value });
    }

    /// Starts a fresh ballot above every round seen so far. Requires a value.
    pub fn start_round(&mut self, out: &mut Outbox) {
        if self.learned.is_some() || self.value.is_none() {
            return;
        }
        self.max_round += 1;
        let ballot = Ballot { round: self.max_round, proposer: self.me };
        self.phase = Phase::Preparing { ballot, promises: BTreeMap::new() };
        out.send_all(&self.members, Message::Prepare { inst: self.inst.clone(), ballot });
    }

    /// Sets the value without sending anything; used by the exhaustive
    /// enumerator before calling [`Paxos::start_round`].
    pub fn set_value(&mut self, value: ViewSeq) {
        self.value.get_or_insert(value);
    }

    pub fn on_timeout(&mut self, oracle: &Oracle, out: &mut Outbox) {
        self.timer_armed = false;
        if self.learned.is_some() {
            return;
        }
        let coord = self.coordinator(oracle);
        if coord == self.me {
            self.start_round(out);
        } else if let Some(v) = &self.value {
            out.send(coord, Message::Forward { inst: self.inst.clone(), value: v.clone() });
        }
        self.arm(out);
    }

    /// Handles one consensus message; returns the value when it is learned
    /// for the first time at this server.
    pub fn handle(&mut self, from: ProcessId, msg: &Message, oracle: &Oracle, out: &mut Outbox) -> Option<ViewSeq> {
        if !self.members.contains(&from) {
            debug!("consensus message from non-member {from} for {}", self.inst);
            return None;
        }
        let inst = self.inst.clone();
        match msg {
            Message::Prepare { ballot, .. } => {
                self.max_round = self.max_round.max(ballot.round);
                if *ballot > self.promised {
                    self.promised = *ballot;
                    out.send(from, Message::Promise { inst, ballot: *ballot, accepted: self.accepted.clone() });
                } else {
                    out.send(from, Message::Nack { inst, ballot: *ballot, promised: self.promised });
                }
            }
            Message::Promise { ballot, accepted, .. } => {
                let Phase::Preparing { ballot: mine, promises } = &mut self.phase else {
                    return None;
                };
                if ballot != mine {
                    return None;
                }
                promises.insert(from, accepted.clone());
                if promises.len() >= self.quorum {
                    let ballot = *mine;
                    let prior = promises.values().flatten().max_by(|a, b| a.0.cmp(&b.0)).map(|(_, v)| v.clone());
                    let value = prior.or_else(|| self.value.clone()).expect("rounds start with a value");
                    self.phase = Phase::Accepting { ballot };
                    out.send_all(&self.members, Message::Accept { inst, ballot, value });
                }
            }
            Message::Accept { ballot, value, .. } => {
                self.max_round = self.max_round.max(ballot.round);
                if *ballot >= self.promised {
                    self.promised = *ballot;
                    self.accepted = Some((*ballot, value.clone()));
                    out.send_all(&self.members, Message::Accepted { inst, ballot: *ballot, value: value.clone() });
                } else {
                    out.send(from, Message::Nack { inst, ballot: *ballot, promised: self.promised });
                }
            }
            Message::Accepted { ballot, value, .. } => {
                let tally = self.accepted_tally.entry((*ballot, value.clone())).or_default();
                tally.insert(from);
                if tally.len() >= self.quorum && self.learned.is_none() {
                    self.learned = Some(value.clone());
                    out.send_all(&self.members, Message::Learn { inst, value: value.clone() });
                    return Some(value.clone());
                }
            }
            Message::Learn { value, .. } => {
                if self.learned.is_none() {
                    self.learned = Some(value.clone());
                    return Some(value.clone());
                }
            }
            Message::Nack { ballot, promised, .. } => {
                self.max_round = self.max_round.max(promised.round);
                let current = match &self.phase {
                    Phase::Preparing { ballot: b, .. } | Phase::Accepting { ballot: b } => Some(*b),
                    Phase::Idle => None,
                };
                if current == Some(*ballot) {
                    // Wait for the retry timer; retrying here lets two
                    // proposers starve each other.
                    self.phase = Phase::Idle;
                }
            }
            Message::Forward { value, .. } => {
                if self.learned.is_none() && self.value.is_none() {
                    self.value = Some(value.clone());
                    if self.me == self.leader && self.coordinator(oracle) == self.me {
                        self.fast_accept(value.clone(), out);
                    } else if self.coordinator(oracle) == self.me {
                        self.start_round(out);
                    }
                    self.arm(out);
                }
            }
            _ => {}
        }
        None
    }

    /// A value was proposed here and nothing has been learned yet.
    pub fn is_pending(&self) -> bool {
        self.value.is_some() && self.learned.is_none()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn v0() -> View {
        "{+1,+2,+3}".parse().unwrap()
    }

    fn seq(s: &str) -> ViewSeq {
        s.parse().unwrap()
    }

    /// Delivers every message FIFO until nothing is in flight.
    fn run_fifo(nodes: &mut BTreeMap<ProcessId, Paxos>, start: Vec<(ProcessId, ProcessId, Message)>) -> usize {
        let oracle = Oracle::default();
        let mut q: VecDeque<_> = start.into();
        let mut delivered = 0;
        while let Some((from, to, m)) = q.pop_front() {
            delivered += 1;
            let mut out = Outbox::default();
            if let Some(n) = nodes.get_mut(&to) {
                n.handle(from, &m, &oracle, &mut out);
            }
            q.extend(out.sends.into_iter().map(|(t, m)| (to, t, m)));
        }
        delivered
    }

    fn nodes() -> BTreeMap<ProcessId, Paxos> {
        (1..=3).map(|i| (ProcessId(i), Paxos::new(ProcessId(i), v0(), 100).unwrap())).collect()
    }

    #[test]
    fn ballot_order_and_text() {
        let a: Ballot = "1.3".parse().unwrap();
        let b: Ballot = "2.1".parse().unwrap();
        assert!(a < b);
        assert!(Ballot { round: 1, proposer: ProcessId(2) } < a);
        assert_eq!(b.to_string(), "2.1");
    }

    #[test]
    fn non_member_cannot_host_an_instance() {
        assert!(Paxos::new(ProcessId(9), v0(), 10).is_err());
    }

    #[test]
    fn leader_skips_prepare() {
        let mut ns = nodes();
        let oracle = Oracle::default();
        let mut out = Outbox::default();
        ns.get_mut(&ProcessId(1)).unwrap().propose(seq("[{+1,+2,+3,+4}]"), &oracle, &mut out);
        assert!(out.sends.iter().all(|(_, m)| m.kind() == "ACCEPT"));
        assert_eq!(out.timers.len(), 1);
        let start = out.sends.into_iter().map(|(t, m)| (ProcessId(1), t, m)).collect();
        run_fifo(&mut ns, start);
        for n in ns.values() {
            assert_eq!(n.learned(), Some(&seq("[{+1,+2,+3,+4}]")));
        }
    }

    #[test]
    fn follower_forwards_to_leader() {
        let mut ns = nodes();
        let oracle = Oracle::default();
        let mut out = Outbox::default();
        ns.get_mut(&ProcessId(3)).unwrap().propose(seq("[{+1,+2,+3,+5}]"), &oracle, &mut out);
        assert_eq!(out.sends.len(), 1);
        assert_eq!(out.sends[0].0, ProcessId(1));
        assert_eq!(out.sends[0].1.kind(), "FORWARD");
        let start = out.sends.into_iter().map(|(t, m)| (ProcessId(3), t, m)).collect();
        run_fifo(&mut ns, start);
        assert!(ns.values().all(|n| n.learned() == Some(&seq("[{+1,+2,+3,+5}]"))));
    }

    #[test]
    fn stale_prepare_is_nacked() {
        let mut n = Paxos::new(ProcessId(2), v0(), 10).unwrap();
        let oracle = Oracle::default();
        let mut out = Outbox::default();
        let high = Ballot { round: 5, proposer: ProcessId(3) };
        n.handle(ProcessId(3), &Message::Prepare { inst: v0(), ballot: high }, &oracle, &mut out);
        assert_eq!(out.sends[0].1.kind(), "PROMISE");
        let mut out = Outbox::default();
        let low = Ballot { round: 4, proposer: ProcessId(1) };
        n.handle(ProcessId(1), &Message::Prepare { inst: v0(), ballot: low }, &oracle, &mut out);
        assert_eq!(out.sends, vec![(ProcessId(1), Message::Nack { inst: v0(), ballot: low, promised: high })]);
        // an accept at the promised ballot goes through and is broadcast
        let mut out = Outbox::default();
        let accept = Message::Accept { inst: v0(), ballot: high, value: seq("[{+1,+2,+3,+4}]") };
        n.handle(ProcessId(3), &accept, &oracle, &mut out);
        assert_eq!(out.sends.len(), 3);
        assert!(out.sends.iter().all(|(_, m)| m.kind() == "ACCEPTED"));
    }

    #[test]
    fn accepted_quorum_learns_once() {
        let mut n = Paxos::new(ProcessId(1), v0(), 10).unwrap();
        let oracle = Oracle::default();
        let b = Ballot { round: 1, proposer: ProcessId(2) };
        let m = Message::Accepted { inst: v0(), ballot: b, value: seq("[{+1,+2,+3,+4}]") };
        let mut out = Outbox::default();
        assert_eq!(n.handle(ProcessId(2), &m, &oracle, &mut out), None);
        assert!(n.handle(ProcessId(3), &m, &oracle, &mut out).is_some());
        assert_eq!(n.handle(ProcessId(1), &m, &oracle, &mut out), None);
        let learn = Message::Learn { inst: v0(), value: seq("[{+1,+2,+3,+4}]") };
        assert_eq!(n.handle(ProcessId(2), &learn, &oracle, &mut out), None);
    }

    #[test]
    fn new_coordinator_recovers_accepted_value() {
        // Leader 1 got its fast-path value accepted at 2 only, then crashed.
        let mut ns = nodes();
        let oracle = Oracle { stopped: BTreeSet::from([ProcessId(1)]), ..Oracle::default() };
        let b0 = Ballot { round: 0, proposer: ProcessId(1) };
        let mut out = Outbox::default();
        let accept = Message::Accept { inst: v0(), ballot: b0, value: seq("[{+1,+2,+3,+4}]") };
        ns.get_mut(&ProcessId(2)).unwrap().handle(ProcessId(1), &accept, &oracle, &mut out);
        ns.remove(&ProcessId(1));

        let n2 = ns.get_mut(&ProcessId(2)).unwrap();
        let mut out = Outbox::default();
        n2.propose(seq("[{+1,+2,+3,+6}]"), &oracle, &mut out);
        assert!(out.sends.iter().all(|(_, m)| m.kind() == "PREPARE"));
        let start = out.sends.into_iter().map(|(t, m)| (ProcessId(2), t, m)).collect();
        run_fifo(&mut ns, start);
        for n in ns.values() {
            assert_eq!(n.learned(), Some(&seq("[{+1,+2,+3,+4}]")));
        }
    }
}
