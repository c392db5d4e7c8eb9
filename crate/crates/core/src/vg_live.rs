//! Consensus-free live view generator.
//!
//! One instance exists per (server, associated view). Servers exchange
//! `SEQ-VIEW` proposals, merge them (union when compatible, a fresh union view
//! on top of the last converged sequence when they conflict), converge once a
//! quorum sends an identical proposal, and generate a sequence once a quorum
//! reports convergence with `SEQ-CONV`. Different servers may generate
//! different sequences for the same view, but any two are ordered by
//! inclusion.

use std::collections::{BTreeMap, BTreeSet};

use log::debug;

use crate::error::Result;
use crate::message::{Message, Outbox};
use crate::view::{ProcessId, View, ViewSeq};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LiveGen {
    assoc: View,
    members: BTreeSet<ProcessId>,
    quorum: usize,
    /// Current proposal; empty until the first proposal is made or adopted.
    proposed: ViewSeq,
    last_converged: ViewSeq,
    /// Every view seen in any proposal, ours included.
    known: BTreeSet<View>,
    seq_view_tally: BTreeMap<ViewSeq, BTreeSet<ProcessId>>,
    seq_conv_tally: BTreeMap<ViewSeq, BTreeSet<ProcessId>>,
    converged: BTreeSet<ViewSeq>,
    fired: BTreeSet<ViewSeq>,
    /// Address `SEQ-CONV` to the members of the next view as well, so it can
    /// stand in for `INSTALL-SEQ`.
    conv_to_next_view: bool,
}

impl LiveGen {
    pub fn new(assoc: View, conv_to_next_view: bool) -> Result<Self> {
        let quorum = assoc.quorum()?;
        Ok(LiveGen {
            members: assoc.members(),
            assoc,
            quorum,
            proposed: ViewSeq::empty(),
            last_converged: ViewSeq::empty(),
            known: BTreeSet::new(),
            seq_view_tally: BTreeMap::new(),
            seq_conv_tally: BTreeMap::new(),
            converged: BTreeSet::new(),
            fired: BTreeSet::new(),
            conv_to_next_view,
        })
    }

    pub fn assoc(&self) -> &View {
        &self.assoc
    }

    pub fn proposed(&self) -> &ViewSeq {
        &self.proposed
    }

    pub fn last_converged(&self) -> &ViewSeq {
        &self.last_converged
    }

    pub fn fired(&self) -> &BTreeSet<ViewSeq> {
        &self.fired
    }

    /// Makes the single initial proposal. Returns whether anything was sent.
    pub fn gen_view(&mut self, seq: ViewSeq, out: &mut Outbox) -> bool {
        if !self.proposed.is_empty() || seq.is_empty() || !seq.all_strictly_contain(&self.assoc) {
            return false;
        }
        self.known.extend(seq.iter().cloned());
        self.proposed = seq;
        self.broadcast_proposal(out);
        self.maybe_converge(out);
        true
    }

    pub fn on_seq_view(&mut self, from: ProcessId, seq: ViewSeq, out: &mut Outbox) {
        if !self.members.contains(&from) {
            debug!("SEQ-VIEW from non-member {from} for {}", self.assoc);
            return;
        }
        if seq.is_empty() || !seq.all_strictly_contain(&self.assoc) {
            debug!("trivial SEQ-VIEW {seq} from {from} for {}", self.assoc);
            return;
        }
        self.seq_view_tally.entry(seq.clone()).or_default().insert(from);

        if seq.iter().any(|w| !self.known.contains(w)) {
            self.known.extend(seq.iter().cloned());
            let next = self.merge_known();
            if next != self.proposed {
                self.proposed = next;
                self.broadcast_proposal(out);
            }
        }
        self.maybe_converge(out);
    }

    /// Returns the sequence to hand to the server when a quorum has converged
    /// on it for the first time.
    ///
    /// A sequence some member converged on is folded into our own last
    /// converged sequence when the two together still form a chain. Without
    /// this a server that moved on before seeing the quorum would keep
    /// proposing something the converged members can no longer agree to.
    pub fn on_seq_conv(&mut self, from: ProcessId, seq: ViewSeq, out: &mut Outbox) -> Option<ViewSeq> {
        if !self.members.contains(&from) {
            debug!("SEQ-CONV from non-member {from} for {}", self.assoc);
            return None;
        }
        let joined = (!seq.is_empty() && seq.all_strictly_contain(&self.assoc) && !seq.is_subseq_of(&self.last_converged))
            .then(|| ViewSeq::from_views(self.last_converged.iter().chain(seq.iter()).cloned()).ok())
            .flatten();
        if let Some(lc) = joined {
            self.known.extend(lc.iter().cloned());
            self.last_converged = lc;
            if !self.proposed.is_empty() {
                let next = self.merge_known();
                if next != self.proposed {
                    self.proposed = next;
                    self.broadcast_proposal(out);
                }
                self.maybe_converge(out);
            }
        }
        let tally = self.seq_conv_tally.entry(seq.clone()).or_default();
        tally.insert(from);
        if tally.len() >= self.quorum && !self.fired.contains(&seq) {
            self.fired.insert(seq.clone());
            return Some(seq);
        }
        None
    }

    /// The proposal implied by everything known so far. Without conflicts
    /// it is the chain of all known views. With conflicts, the conflicting
    /// views are dropped in favour of a single view holding every known
    /// update, keeping the last converged sequence and any view that
    /// conflicts with nothing.
    fn merge_known(&mut self) -> ViewSeq {
        let conflicted: BTreeSet<&View> = self
            .known
            .iter()
            .filter(|w| self.known.iter().any(|x| w.conflicts(x)))
            .collect();
        if conflicted.is_empty() {
            return ViewSeq::from_views(self.known.iter().cloned()).expect("no conflicts among known views");
        }
        let top = self.known.iter().fold(self.assoc.clone(), |acc, w| acc.union(w));
        let views: BTreeSet<View> = self
            .last_converged
            .iter()
            .chain(self.known.iter().filter(|w| !conflicted.contains(w)))
            .cloned()
            .chain([top.clone()])
            .collect();
        self.known.insert(top);
        ViewSeq::from_views(views).expect("kept views are comparable with each other and with the top view")
    }

    fn broadcast_proposal(&self, out: &mut Outbox) {
        out.send_all(&self.members, Message::SeqView { ov: self.assoc.clone(), seq: self.proposed.clone() });
    }

    fn maybe_converge(&mut self, out: &mut Outbox) {
        if self.proposed.is_empty() || self.converged.contains(&self.proposed) {
            return;
        }
        let votes = self.seq_view_tally.get(&self.proposed).map_or(0, BTreeSet::len);
        if votes < self.quorum {
            return;
        }
        self.last_converged = self.proposed.clone();
        self.converged.insert(self.proposed.clone());
        let mut targets = self.members.clone();
        if self.conv_to_next_view {
            if let Ok(w) = self.proposed.least_updated() {
                targets.extend(w.members());
            }
        }
        out.send_all(&targets, Message::SeqConv { ov: self.assoc.clone(), seq: self.proposed.clone() });
    }
}
