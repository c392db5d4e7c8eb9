//! Perfect view generator: a non-triviality filter in front of consensus.

use crate::error::Result;
use crate::message::{Message, Oracle, Outbox};
use crate::paxos::Paxos;
use crate::view::{ProcessId, View, ViewSeq};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PerfectGen {
    paxos: Paxos,
    delivered: bool,
}

impl PerfectGen {
    pub fn new(me: ProcessId, assoc: View, retry_after: u64) -> Result<Self> {
        Ok(PerfectGen { paxos: Paxos::new(me, assoc, retry_after)?, delivered: false })
    }

    pub fn assoc(&self) -> &View {
        self.paxos.inst()
    }

    pub fn paxos(&self) -> &Paxos {
        &self.paxos
    }

    pub fn gen_view(&mut self, seq: ViewSeq, oracle: &Oracle, out: &mut Outbox) -> bool {
        if seq.is_empty() || !seq.all_strictly_contain(self.paxos.inst()) {
            return false;
        }
        self.paxos.propose(seq, oracle, out);
        true
    }

    pub fn on_timeout(&mut self, oracle: &Oracle, out: &mut Outbox) {
        self.paxos.on_timeout(oracle, out);
    }

    /// Returns the decided sequence the first time it becomes known here.
    pub fn handle(&mut self, from: ProcessId, msg: &Message, oracle: &Oracle, out: &mut Outbox) -> Option<ViewSeq> {
        let learned = self.paxos.handle(from, msg, oracle, out)?;
        if self.delivered {
            return None;
        }
        self.delivered = true;
        Some(learned)
    }
}
