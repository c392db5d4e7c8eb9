//! Small-scope exploration of the agreement layers.
//!
//! The simulator samples one schedule per seed. Here every schedule is
//! enumerated for a handful of servers.
//!
//! For Paxos the network is the set of every message ever sent, and any of
//! them may be delivered at any time, any number of times. Reordering, loss
//! and duplication are all covered while the visited states stay few
//! enough to memoize. Proposer retries are bounded. Safety is checked at
//! every reachable state, and from every reachable state a fair synchronous
//! continuation (everything delivered, no further interference) must reach
//! a decision.
//!
//! The live generator assumes reliable links, so there each message is
//! delivered exactly once, in any order.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::message::{Message, Oracle, Outbox};
use crate::paxos::{Ballot, Paxos};
use crate::view::{ProcessId, Update, View, ViewSeq};
use crate::vg_live::LiveGen;

type Packet = (ProcessId, ProcessId, Message);

/// A set of messages, as indices into a [`Packets`] table. Hashing
/// a bitset is much cheaper than hashing the messages themselves.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
struct Net(Vec<u64>);

impl Net {
    fn insert(&mut self, i: usize) {
        if self.0.len() <= i / 64 {
            self.0.resize(i / 64 + 1, 0);
        }
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn remove(&mut self, i: usize) {
        if let Some(w) = self.0.get_mut(i / 64) {
            *w &= !(1 << (i % 64));
        }
        while self.0.last() == Some(&0) {
            self.0.pop();
        }
    }

    fn ids(&self) -> Vec<usize> {
        (0..self.0.len() * 64).filter(|&i| self.0[i / 64] & (1 << (i % 64)) != 0).collect()
    }

    fn len(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// Interning table shared by one exploration.
#[derive(Default)]
struct Packets {
    list: Vec<Packet>,
    index: HashMap<Packet, usize>,
}

impl Packets {
    fn id(&mut self, p: Packet) -> usize {
        if let Some(&i) = self.index.get(&p) {
            return i;
        }
        self.list.push(p.clone());
        self.index.insert(p, self.list.len() - 1);
        self.list.len() - 1
    }
}

/// Depth-first search over all states reachable from `init`, calling
/// `visit` once per distinct state. Returns the number of states.
fn explore<S, F, V>(init: S, successors: F, mut visit: V) -> usize
where
    S: Clone + Eq + Hash,
    F: Fn(&S) -> Vec<S>,
    V: FnMut(&S),
{
    let mut seen = HashSet::new();
    let mut stack = vec![init];
    while let Some(s) = stack.pop() {
        if seen.contains(&s) {
            continue;
        }
        visit(&s);
        let next = successors(&s);
        seen.insert(s);
        stack.extend(next.into_iter().filter(|n| !seen.contains(n)));
    }
    seen.len()
}

/// Applies `pass` until nothing changes any more.
fn fixpoint<S: Clone + PartialEq>(mut s: S, pass: impl Fn(S) -> S) -> S {
    loop {
        let next = pass(s.clone());
        if next == s {
            return s;
        }
        s = next;
    }
}

fn enqueue(net: &mut Net, packets: &RefCell<Packets>, from: ProcessId, out: Outbox) {
    let mut table = packets.borrow_mut();
    for (to, m) in out.sends {
        net.insert(table.id((from, to, m)));
    }
}

fn packet(packets: &RefCell<Packets>, i: usize) -> Packet {
    packets.borrow().list[i].clone()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Exploration {
    pub states: usize,
    /// Violations of the safety properties, at most ten.
    pub safety: Vec<String>,
    /// States from which the fair continuation failed to decide, at most ten.
    pub stuck: Vec<String>,
    /// Distinct decisions reached across all schedules.
    pub outcomes: BTreeSet<Vec<ViewSeq>>,
}

impl Exploration {
    pub fn is_ok(&self) -> bool {
        self.safety.is_empty() && self.stuck.is_empty()
    }

    fn safety(&mut self, msg: impl FnOnce() -> String) {
        if self.safety.len() < 10 {
            self.safety.push(msg());
        }
    }

    fn stuck(&mut self, msg: impl FnOnce() -> String) {
        if self.stuck.len() < 10 {
            self.stuck.push(msg());
        }
    }
}

/// Which servers propose, and with what.
#[derive(Clone, Debug)]
pub struct PaxosSetup {
    pub view: View,
    /// `(proposer, value)`. The leader takes the fast path; the others
    /// start with a prepare round.
    pub proposers: Vec<(ProcessId, ViewSeq)>,
    /// Timeouts each proposer may take, anywhere in the schedule.
    pub retries: u8,
}

impl PaxosSetup {
    /// Servers 1, 2, 3; the listed ones propose, each a different value.
    pub fn three(proposers: &[u32]) -> Self {
        let view = View::initial([1, 2, 3].map(ProcessId));
        let proposers = proposers
            .iter()
            .map(|&p| (ProcessId(p), ViewSeq::singleton(view.with_updates(&[Update::join(ProcessId(10 + p))]))))
            .collect();
        PaxosSetup { view, proposers, retries: 1 }
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct PaxosState {
    nodes: Vec<Paxos>,
    net: Net,
    retries: Vec<u8>,
}

struct PaxosModel<'a> {
    setup: &'a PaxosSetup,
    packets: RefCell<Packets>,
    quorum: usize,
}

impl PaxosModel<'_> {
    fn index(s: &PaxosState, p: ProcessId) -> usize {
        s.nodes.iter().position(|n| n.me() == p).expect("known member")
    }

    fn deliver(&self, mut s: PaxosState, id: usize) -> PaxosState {
        let (from, to, msg) = packet(&self.packets, id);
        let k = Self::index(&s, to);
        let mut out = Outbox::default();
        s.nodes[k].handle(from, &msg, &Oracle::default(), &mut out);
        enqueue(&mut s.net, &self.packets, to, out);
        s
    }

    fn retry(&self, mut s: PaxosState, j: usize) -> PaxosState {
        s.retries[j] = s.retries[j].saturating_sub(1);
        let p = self.setup.proposers[j].0;
        let k = Self::index(&s, p);
        let mut out = Outbox::default();
        s.nodes[k].start_round(&mut out);
        enqueue(&mut s.net, &self.packets, p, out);
        s
    }

    fn is_learning(&self, id: usize) -> bool {
        matches!(self.packets.borrow().list[id].2, Message::Accepted { .. } | Message::Learn { .. })
    }

    /// Values some learner could learn: a quorum of distinct acceptors has
    /// sent ACCEPTED for the same ballot and value.
    fn chosen(&self, s: &PaxosState) -> BTreeSet<ViewSeq> {
        let table = self.packets.borrow();
        let mut votes: BTreeMap<(Ballot, &ViewSeq), BTreeSet<ProcessId>> = BTreeMap::new();
        for id in s.net.ids() {
            if let (from, _, Message::Accepted { ballot, value, .. }) = &table.list[id] {
                votes.entry((*ballot, value)).or_default().insert(*from);
            }
        }
        votes.into_iter().filter(|(_, who)| who.len() >= self.quorum).map(|((_, v), _)| v.clone()).collect()
    }

    /// Stabilization from `s`: every message is delivered, learners
    /// included, and only the first proposer retries.
    fn settle(&self, s: &PaxosState) -> PaxosState {
        let mut s = s.clone();
        for _ in 0..4 {
            s = fixpoint(s, |s| {
                let ids = s.net.ids();
                ids.into_iter().fold(s, |s, id| self.deliver(s, id))
            });
            if s.nodes.iter().all(|n| n.learned().is_some()) {
                break;
            }
            s = self.retry(s, 0);
        }
        s
    }

    fn successors(&self, s: &PaxosState) -> Vec<PaxosState> {
        let mut next: Vec<PaxosState> = s
            .net
            .ids()
            .into_iter()
            .filter(|&id| !self.is_learning(id))
            .map(|id| self.deliver(s.clone(), id))
            .filter(|n| n != s)
            .collect();
        next.extend((0..self.setup.proposers.len()).filter(|&j| s.retries[j] > 0).map(|j| self.retry(s.clone(), j)));
        next
    }
}

/// Enumerates every schedule for `setup`. Agreement and Validity are
/// checked at every state; Termination from every state once the network
/// stabilizes.
///
/// Learner messages (ACCEPTED, LEARN) stay in the network during the
/// enumeration and are only delivered by the stabilizing continuation.
/// Learning only ever stops a proposer from retrying, so withholding it can
/// only add behaviours. What a learner could learn at a state is exactly
/// the set of values with a quorum of ACCEPTED messages, which is what is
/// checked.
pub fn explore_paxos(setup: &PaxosSetup) -> Exploration {
    let model = PaxosModel { setup, packets: RefCell::default(), quorum: setup.view.quorum().expect("non-empty view") };
    let mut nodes: Vec<Paxos> = setup
        .view
        .members()
        .into_iter()
        .map(|p| Paxos::new(p, setup.view.clone(), 1).expect("member of a non-empty view"))
        .collect();
    let mut net = Net::default();
    for (p, value) in &setup.proposers {
        let k = nodes.iter().position(|n| n.me() == *p).expect("proposer is a member");
        let mut out = Outbox::default();
        if nodes[k].is_leader() {
            nodes[k].propose(value.clone(), &Oracle::default(), &mut out);
        } else {
            nodes[k].set_value(value.clone());
            nodes[k].start_round(&mut out);
        }
        enqueue(&mut net, &model.packets, *p, out);
    }
    let init = PaxosState { nodes, net, retries: vec![setup.retries; setup.proposers.len()] };
    let proposed: BTreeSet<&ViewSeq> = setup.proposers.iter().map(|(_, v)| v).collect();

    let mut report = Exploration::default();
    report.states = explore(init, |s| model.successors(s), |s| {
        let chosen = model.chosen(s);
        if chosen.len() > 1 {
            report.safety(|| format!("agreement: {} different values could be learned", chosen.len()));
        }
        for v in &chosen {
            if !proposed.contains(v) {
                report.safety(|| format!("validity: {v} could be learned but nobody proposed it"));
            }
        }
        let end = model.settle(s);
        let learned: BTreeSet<&ViewSeq> = end.nodes.iter().filter_map(Paxos::learned).collect();
        if end.nodes.iter().any(|n| n.learned().is_none()) {
            report.stuck(|| format!("no decision after stabilization with {} messages sent", s.net.len()));
        } else if learned.len() != 1 || !chosen.iter().all(|c| learned.contains(c)) {
            report.safety(|| format!("agreement: stabilization learned {learned:?} after {chosen:?} was chosen"));
        } else {
            report.outcomes.insert(learned.into_iter().cloned().collect());
        }
    });
    report
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct LiveState {
    gens: Vec<LiveGen>,
    /// Initial proposals not made yet.
    pending: Vec<Option<ViewSeq>>,
    /// Messages in flight. Links are reliable, so each is delivered once.
    net: Net,
    delivered: Vec<BTreeSet<ViewSeq>>,
}

struct LiveModel {
    members: Vec<ProcessId>,
    packets: RefCell<Packets>,
}

impl LiveModel {
    fn deliver(&self, mut s: LiveState, id: usize) -> LiveState {
        let (from, to, msg) = packet(&self.packets, id);
        s.net.remove(id);
        let k = self.members.iter().position(|&p| p == to).expect("member");
        let mut out = Outbox::default();
        match msg {
            Message::SeqView { seq, .. } => s.gens[k].on_seq_view(from, seq, &mut out),
            Message::SeqConv { seq, .. } => {
                if let Some(seq) = s.gens[k].on_seq_conv(from, seq, &mut out) {
                    s.delivered[k].insert(seq);
                }
            }
            _ => {}
        }
        enqueue(&mut s.net, &self.packets, to, out);
        s
    }

    fn start(&self, mut s: LiveState, k: usize) -> LiveState {
        let seq = s.pending[k].take().expect("initial proposal pending");
        let mut out = Outbox::default();
        s.gens[k].gen_view(seq, &mut out);
        enqueue(&mut s.net, &self.packets, self.members[k], out);
        s
    }

    fn successors(&self, s: &LiveState) -> Vec<LiveState> {
        let mut next: Vec<LiveState> =
            s.net.ids().into_iter().map(|id| self.deliver(s.clone(), id)).filter(|n| n != s).collect();
        next.extend((0..self.members.len()).filter(|&k| s.pending[k].is_some()).map(|k| self.start(s.clone(), k)));
        next
    }

    fn new(view: &View, proposals: &[ViewSeq]) -> (Self, LiveState) {
        let members: Vec<ProcessId> = view.members().into_iter().collect();
        assert_eq!(members.len(), proposals.len(), "one proposal per member");
        let init = LiveState {
            gens: members.iter().map(|_| LiveGen::new(view.clone(), false).expect("non-empty view")).collect(),
            pending: proposals.iter().cloned().map(Some).collect(),
            net: Net::default(),
            delivered: vec![BTreeSet::new(); members.len()],
        };
        (LiveModel { members, packets: RefCell::default() }, init)
    }

    /// Safety of what `s` has delivered so far.
    fn audit(&self, s: &LiveState, bound: usize, report: &mut Exploration) {
        let all: BTreeSet<&ViewSeq> = s.delivered.iter().flatten().collect();
        let list: Vec<&ViewSeq> = all.iter().copied().collect();
        for (i, a) in list.iter().enumerate() {
            for b in &list[i + 1..] {
                if !a.is_subseq_of(b) && !b.is_subseq_of(a) {
                    report.safety(|| format!("weak accuracy: {a} and {b} were both delivered"));
                }
            }
        }
        if all.len() > bound {
            report.safety(|| format!("{} sequences delivered, bound is {bound}", all.len()));
        }
    }

    /// Termination of a state with nothing left in flight.
    fn finish(&self, end: &LiveState, report: &mut Exploration) {
        if end.delivered.iter().any(BTreeSet::is_empty) {
            let proposals: BTreeMap<ProcessId, String> =
                self.members.iter().copied().zip(end.gens.iter().map(|g| g.proposed().to_string())).collect();
            report.stuck(|| format!("a server never delivered; final proposals {proposals:?}"));
        } else {
            report.outcomes.insert(end.delivered.iter().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect());
        }
    }
}

fn live_bound(view: &View) -> usize {
    view.size() - view.quorum().expect("non-empty view") + 1
}

/// Enumerates every schedule of one live generator instance in which
/// server `i` of `view` starts with `proposals[i]`. Checks that delivered
/// sequences are pairwise ordered by inclusion (Weak Accuracy), that at
/// most `|v| - q + 1` distinct sequences are delivered, and that every
/// server delivers once all messages are through.
///
/// Only practical when the proposals agree; with divergent proposals the
/// state space runs into the millions, and [`sample_live`] is the tool.
pub fn explore_live(view: &View, proposals: &[ViewSeq]) -> Exploration {
    let (model, init) = LiveModel::new(view, proposals);
    let bound = live_bound(view);
    let mut report = Exploration::default();
    report.states = explore(init, |s| model.successors(s), |s| {
        model.audit(s, bound, &mut report);
        // Links are reliable, so every fair schedule ends in a state with
        // nothing left to deliver, and checking those states is enough.
        if s.net.len() == 0 && s.pending.iter().all(Option::is_none) {
            model.finish(s, &mut report);
        }
    });
    report
}

/// Same checks as [`explore_live`] on `runs` uniformly random complete
/// schedules. `states` counts the steps taken over all runs.
pub fn sample_live(view: &View, proposals: &[ViewSeq], runs: usize, seed: u64) -> Exploration {
    let (model, init) = LiveModel::new(view, proposals);
    let bound = live_bound(view);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Exploration::default();
    for _ in 0..runs {
        let mut s = init.clone();
        loop {
            let mut next = model.successors(&s);
            if next.is_empty() {
                break;
            }
            report.states += 1;
            s = next.swap_remove(rng.gen_range(0..next.len()));
            model.audit(&s, bound, &mut report);
        }
        model.finish(&s, &mut report);
    }
    report
}
