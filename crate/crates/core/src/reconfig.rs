//! The server state machine: join/leave intake, timer-driven generation,
//! reliable multicast of generated sequences, state transfer and view
//! installation, plus the read/write service that runs between
//! reconfigurations.

use std::collections::{BTreeMap, BTreeSet};

use log::debug;

use crate::error::Result;
use crate::message::{InstallSeq, Message, Oracle, Outbox, Timer};
use crate::register::RegisterPair;
use crate::rw;
use crate::trace::{GenSource, Note};
use crate::vg_live::LiveGen;
use crate::vg_perfect::PerfectGen;
use crate::view::{ProcessId, Update, View, ViewSeq};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GeneratorKind {
    Live,
    Perfect,
}

impl std::fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GeneratorKind::Live => "live",
            GeneratorKind::Perfect => "perfect",
        })
    }
}

impl std::str::FromStr for GeneratorKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(GeneratorKind::Live),
            "perfect" => Ok(GeneratorKind::Perfect),
            _ => Err(crate::error::Error::Parse(format!("unknown generator `{s}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub generator: GeneratorKind,
    /// Lets a quorum of `SEQ-CONV` stand in for the `INSTALL-SEQ` multicast.
    pub optimize_install: bool,
    pub reconfig_period: u64,
    pub paxos_timeout: u64,
    pub request_retry: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            generator: GeneratorKind::Live,
            optimize_install: true,
            reconfig_period: 50,
            paxos_timeout: 200,
            request_retry: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    /// Not yet a member; waiting for a view that includes this server.
    PendingJoin,
    Active,
    /// Excluded by a newer view; waiting for enough of it to be installed.
    Leaving,
    Halted,
}

#[derive(Clone, Debug)]
enum Generator {
    Live(LiveGen),
    Perfect(PerfectGen),
}

#[derive(Clone, Debug, Default)]
struct Transition {
    state: BTreeMap<ProcessId, (RegisterPair, BTreeSet<Update>)>,
    seqs: Vec<ViewSeq>,
    done: bool,
}

#[derive(Clone, Debug)]
struct Request {
    update: Update,
    view: View,
    confirmed_by: BTreeSet<ProcessId>,
    confirmed: bool,
}

#[derive(Clone, Debug)]
pub struct Server {
    me: ProcessId,
    cfg: ServerConfig,
    cv: View,
    recv: BTreeSet<Update>,
    reg: RegisterPair,
    status: Status,
    paused: bool,
    queue: Vec<(ProcessId, Message)>,
    generators: BTreeMap<View, Generator>,
    delivered: BTreeSet<InstallSeq>,
    transitions: BTreeMap<(View, View), Transition>,
    conv_seen: BTreeMap<(View, ViewSeq), BTreeSet<ProcessId>>,
    conv_fired: BTreeSet<(View, ViewSeq)>,
    request: Option<Request>,
    /// View excluding this server, and who has confirmed installing it.
    leave_wait: Option<View>,
    /// VIEW-UPDATED messages can overtake our own view of the leave.
    view_updated: BTreeSet<(ProcessId, View)>,
    installed: Vec<View>,
    /// Snapshot of the oracle for the event being handled.
    oracle: Oracle,
}

impl Server {
    /// A member of the initial view, active from the start.
    pub fn initial(me: ProcessId, v0: View, reg: RegisterPair, cfg: ServerConfig, out: &mut Outbox) -> Self {
        let mut s = Server::new(me, v0.clone(), reg, Status::Active, cfg);
        out.timer(s.cfg.reconfig_period, Timer::Reconfig { view: v0.clone() });
        out.note(Note::Install { view: v0.clone(), reg: s.reg.clone() });
        s.installed.push(v0);
        s
    }

    /// A server outside the system; it has to `join` before serving.
    pub fn outsider(me: ProcessId, known: View, reg: RegisterPair, cfg: ServerConfig) -> Self {
        Server::new(me, known, reg, Status::PendingJoin, cfg)
    }

    fn new(me: ProcessId, cv: View, reg: RegisterPair, status: Status, cfg: ServerConfig) -> Self {
        Server {
            me,
            cfg,
            cv,
            recv: BTreeSet::new(),
            reg,
            status,
            paused: false,
            queue: Vec::new(),
            generators: BTreeMap::new(),
            delivered: BTreeSet::new(),
            transitions: BTreeMap::new(),
            conv_seen: BTreeMap::new(),
            conv_fired: BTreeSet::new(),
            request: None,
            leave_wait: None,
            view_updated: BTreeSet::new(),
            installed: Vec::new(),
            oracle: Oracle::default(),
        }
    }

    pub fn id(&self) -> ProcessId {
        self.me
    }

    pub fn current_view(&self) -> &View {
        &self.cv
    }

    pub fn register(&self) -> &RegisterPair {
        &self.reg
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn recv(&self) -> &BTreeSet<Update> {
        &self.recv
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn installed(&self) -> &[View] {
        &self.installed
    }

    /// Whether this server still has work that only a timer can push
    /// forward. Used by the simulator to detect quiescence.
    pub fn is_busy(&self) -> bool {
        if self.status == Status::Halted {
            return false;
        }
        let member = self.cv.is_member(self.me) && self.status == Status::Active;
        let pending_request = self.request.as_ref().is_some_and(|r| !r.confirmed);
        let joining = self.status == Status::PendingJoin && self.request.is_some();
        // consensus on views we already moved past cannot matter any more
        let consensus = self.generators.iter().any(|(ov, g)| match g {
            Generator::Perfect(p) => *ov == self.cv && p.paxos().is_pending(),
            Generator::Live(_) => false,
        });
        (member && !self.recv.is_empty())
            || pending_request
            || joining
            || self.leave_wait.is_some()
            || self.paused
            || consensus
    }

    fn generator(&mut self, ov: &View) -> Option<&mut Generator> {
        if !ov.is_member(self.me) {
            return None;
        }
        if !self.generators.contains_key(ov) {
            let g = match self.cfg.generator {
                GeneratorKind::Live => Generator::Live(LiveGen::new(ov.clone(), self.cfg.optimize_install).ok()?),
                GeneratorKind::Perfect => {
                    Generator::Perfect(PerfectGen::new(self.me, ov.clone(), self.cfg.paxos_timeout).ok()?)
                }
            };
            self.generators.insert(ov.clone(), g);
        }
        self.generators.get_mut(ov)
    }

    fn gen_view(&mut self, ov: View, seq: ViewSeq, source: GenSource, out: &mut Outbox) {
        let oracle = self.oracle.clone();
        let Some(g) = self.generator(&ov) else { return };
        let started = match g {
            Generator::Live(g) => g.gen_view(seq.clone(), out),
            Generator::Perfect(g) => g.gen_view(seq.clone(), &oracle, out),
        };
        if started {
            out.note(Note::GenView { ov, seq, source });
        }
    }

    // ---- join / leave -------------------------------------------------

    pub fn join(&mut self, oracle: &Oracle, out: &mut Outbox) {
        if self.status != Status::PendingJoin || self.request.is_some() {
            return;
        }
        if self.cv.is_subset_of(&oracle.directory) {
            self.cv = oracle.directory.clone();
        }
        out.note(Note::JoinInvoke);
        self.send_request(Update::join(self.me), out);
        out.timer(self.cfg.request_retry, Timer::RequestRetry);
    }

    pub fn leave(&mut self, out: &mut Outbox) {
        if self.status != Status::Active || self.request.is_some() {
            return;
        }
        out.note(Note::LeaveInvoke);
        self.send_request(Update::leave(self.me), out);
        out.timer(self.cfg.request_retry, Timer::RequestRetry);
    }

    fn send_request(&mut self, update: Update, out: &mut Outbox) {
        self.request = Some(Request { update, view: self.cv.clone(), confirmed_by: BTreeSet::new(), confirmed: false });
        out.send_all(&self.cv.members(), Message::Reconfig { update, view: self.cv.clone() });
    }

    fn on_request_retry(&mut self, oracle: &Oracle, out: &mut Outbox) {
        let Some(req) = &self.request else { return };
        if req.confirmed || matches!(self.status, Status::Leaving | Status::Halted) {
            return;
        }
        if self.status == Status::PendingJoin && self.cv.is_subset_of(&oracle.directory) {
            self.cv = oracle.directory.clone();
        }
        let update = req.update;
        self.send_request(update, out);
        out.timer(self.cfg.request_retry, Timer::RequestRetry);
    }

    fn on_reconfig(&mut self, from: ProcessId, update: Update, view: &View, out: &mut Outbox) {
        if let Some(w) = &self.leave_wait {
            out.send(from, Message::ViewReply { view: w.clone() });
            return;
        }
        if self.status != Status::Active {
            return;
        }
        if *view != self.cv {
            out.send(from, Message::ViewReply { view: self.cv.clone() });
            return;
        }
        if self.cv.contains_entry(&update) {
            return;
        }
        self.recv.insert(update);
        out.send(from, Message::RecConfirm { update, view: view.clone() });
    }

    fn on_rec_confirm(&mut self, from: ProcessId, update: Update, view: &View, out: &mut Outbox) {
        let Some(req) = self.request.as_mut() else { return };
        if req.update != update || req.view != *view || req.confirmed || !view.is_member(from) {
            return;
        }
        req.confirmed_by.insert(from);
        if req.confirmed_by.len() >= view.quorum().unwrap_or(usize::MAX) {
            req.confirmed = true;
            out.note(Note::RequestConfirmed { update });
        }
    }

    fn on_view_reply(&mut self, view: &View, out: &mut Outbox) {
        let Some(req) = &self.request else { return };
        if req.confirmed || self.status != Status::PendingJoin || !self.cv.is_subset_of(view) {
            return;
        }
        self.cv = view.clone();
        let update = req.update;
        self.send_request(update, out);
    }

    // ---- generation --------------------------------------------------

    fn on_reconfig_timer(&mut self, view: &View, out: &mut Outbox) {
        if *view != self.cv || self.status != Status::Active {
            return;
        }
        if self.recv.is_empty() {
            out.timer(self.cfg.reconfig_period, Timer::Reconfig { view: view.clone() });
            return;
        }
        let next = self.cv.with_updates(&self.recv);
        self.gen_view(self.cv.clone(), ViewSeq::singleton(next), GenSource::Timer, out);
    }

    fn new_view(&mut self, ov: View, seq: ViewSeq, out: &mut Outbox) {
        out.note(Note::NewView { ov: ov.clone(), seq: seq.clone() });
        let Ok(w) = seq.least_updated().cloned() else { return };
        let m = InstallSeq { w, seq, ov };
        if self.cfg.optimize_install && self.cfg.generator == GeneratorKind::Live {
            // The SEQ-CONV quorum already reached the group; act as a
            // receiver of the multicast.
            self.r_receive(m, out);
        } else {
            out.send_all(&m.group(), Message::InstallSeq(m.clone()));
        }
    }

    fn on_seq_conv(&mut self, from: ProcessId, ov: &View, seq: &ViewSeq, out: &mut Outbox) {
        if ov.is_member(self.me) {
            let fired = match self.generator(ov) {
                Some(Generator::Live(g)) => g.on_seq_conv(from, seq.clone(), out),
                _ => None,
            };
            if let Some(seq) = fired {
                self.new_view(ov.clone(), seq, out);
            }
            return;
        }
        if !self.cfg.optimize_install || !ov.is_member(from) {
            return;
        }
        let key = (ov.clone(), seq.clone());
        let tally = self.conv_seen.entry(key.clone()).or_default();
        tally.insert(from);
        if tally.len() >= ov.quorum().unwrap_or(usize::MAX) && self.conv_fired.insert(key) {
            self.new_view(ov.clone(), seq.clone(), out);
        }
    }

    // ---- reliable multicast and installation -----------------------------

    fn r_receive(&mut self, m: InstallSeq, out: &mut Outbox) {
        if self.delivered.contains(&m) {
            return;
        }
        if m.seq.least_updated().ok() != Some(&m.w) || !m.seq.all_strictly_contain(&m.ov) {
            out.note(Note::Fault { reason: format!("malformed-install-seq:{}", m.seq) });
            return;
        }
        self.delivered.insert(m.clone());
        let others: Vec<ProcessId> = m.group().into_iter().filter(|&p| p != self.me).collect();
        out.send_all(&others, Message::InstallSeq(m.clone()));
        self.on_install_seq(m, out);
    }

    fn on_install_seq(&mut self, m: InstallSeq, out: &mut Outbox) {
        out.note(Note::RDeliver { w: m.w.clone(), seq: m.seq.clone(), ov: m.ov.clone() });
        let InstallSeq { w, seq, ov } = m;
        let newer = self.cv.is_subset_of(&w);
        if ov.is_member(self.me) {
            if newer {
                self.paused = true;
            }
            out.send_all(
                &w.members(),
                Message::StateUpdate { ov: ov.clone(), w: w.clone(), reg: self.reg.clone(), updates: self.recv.clone() },
            );
        }
        if !newer {
            return;
        }
        if w.is_member(self.me) {
            let t = self.transitions.entry((ov.clone(), w.clone())).or_default();
            if !t.done {
                t.seqs.push(seq);
            }
            self.try_complete(&ov, &w, out);
        } else if w.contains_entry(&Update::leave(self.me)) && self.leave_wait.is_none() {
            self.status = Status::Leaving;
            self.paused = false;
            self.leave_wait = Some(w);
            out.note(Note::DisableOps);
            // Clients still waiting on us get pointed at the new view.
            for (from, msg) in std::mem::take(&mut self.queue) {
                self.on_client(from, &msg, out);
            }
            self.check_leave_done(out);
        }
    }

    fn on_state_update(&mut self, from: ProcessId, ov: &View, w: &View, reg: &RegisterPair, updates: &BTreeSet<Update>, out: &mut Outbox) {
        if !ov.is_member(from) || !w.is_member(self.me) {
            return;
        }
        let t = self.transitions.entry((ov.clone(), w.clone())).or_default();
        if t.done {
            return;
        }
        t.state.insert(from, (reg.clone(), updates.clone()));
        self.try_complete(ov, w, out);
    }

    fn try_complete(&mut self, ov: &View, w: &View, out: &mut Outbox) {
        let key = (ov.clone(), w.clone());
        let Some(t) = self.transitions.get_mut(&key) else { return };
        let Ok(q) = ov.quorum() else { return };
        if t.done || t.seqs.is_empty() || t.state.len() < q {
            return;
        }
        t.done = true;
        let seq = t.seqs[0].clone();
        let mut collected = BTreeSet::new();
        for (reg, updates) in t.state.values() {
            self.reg.adopt_if_newer(reg);
            collected.extend(updates.iter().copied());
        }
        if !self.cv.is_subset_of(w) {
            return;
        }
        self.recv.extend(collected);
        self.recv.retain(|u| !w.contains_entry(u));
        let old_members = ov.members();
        self.cv = w.clone();
        if self.status == Status::PendingJoin {
            self.status = Status::Active;
            self.request = None;
            out.note(Note::EnableOps);
        }
        let gone: Vec<ProcessId> = old_members.difference(&w.members()).copied().collect();
        out.send_all(&gone, Message::ViewUpdated { view: w.clone() });

        let rest = seq.newer_than(w);
        if !rest.is_empty() {
            // `w` is auxiliary: move the state along towards the rest of
            // the sequence without serving in `w`.
            self.gen_view(w.clone(), rest, GenSource::Aux, out);
            return;
        }
        self.install(out);
    }

    fn install(&mut self, out: &mut Outbox) {
        self.installed.push(self.cv.clone());
        out.note(Note::Install { view: self.cv.clone(), reg: self.reg.clone() });
        self.paused = false;
        out.timer(self.cfg.reconfig_period, Timer::Reconfig { view: self.cv.clone() });
        if let Some(req) = &self.request {
            if !req.confirmed && req.update.sign == crate::view::Sign::Minus {
                let update = req.update;
                self.send_request(update, out);
            }
        }
        for (from, msg) in std::mem::take(&mut self.queue) {
            self.on_client(from, &msg, out);
        }
    }

    fn on_view_updated(&mut self, from: ProcessId, view: &View, out: &mut Outbox) {
        self.view_updated.insert((from, view.clone()));
        self.check_leave_done(out);
    }

    fn check_leave_done(&mut self, out: &mut Outbox) {
        let Some(w) = &self.leave_wait else { return };
        let acks: BTreeSet<ProcessId> = self
            .view_updated
            .iter()
            .filter(|(from, view)| w.is_member(*from) && (w == view || w.is_subset_of(view)))
            .map(|(from, _)| *from)
            .collect();
        if acks.len() >= w.quorum().unwrap_or(usize::MAX) {
            self.leave_wait = None;
            self.status = Status::Halted;
            out.note(Note::Halt);
        }
    }

    // ---- read/write service ----------------------------------------------

    fn on_client(&mut self, from: ProcessId, msg: &Message, out: &mut Outbox) {
        match self.status {
            Status::Halted => {}
            Status::Leaving => {
                let w = self.leave_wait.clone().unwrap_or_else(|| self.cv.clone());
                if let Some(reply) = rw::serve(&mut self.reg.clone(), &w, msg) {
                    out.send(from, reply);
                }
            }
            Status::PendingJoin => self.queue.push((from, msg.clone())),
            Status::Active if self.paused => self.queue.push((from, msg.clone())),
            Status::Active => {
                if let Some(reply) = rw::serve(&mut self.reg, &self.cv, msg) {
                    out.send(from, reply);
                }
            }
        }
    }

    // ---- dispatch ----------------------------------------------------------

    pub fn on_message(&mut self, from: ProcessId, msg: &Message, oracle: &Oracle, out: &mut Outbox) {
        if self.status == Status::Halted {
            return;
        }
        self.oracle = oracle.clone();
        match msg {
            Message::SeqView { ov, seq } => {
                if let Some(Generator::Live(g)) = self.generator(ov) {
                    g.on_seq_view(from, seq.clone(), out);
                }
            }
            Message::SeqConv { ov, seq } => self.on_seq_conv(from, ov, seq, out),
            Message::Prepare { inst, .. }
            | Message::Promise { inst, .. }
            | Message::Accept { inst, .. }
            | Message::Accepted { inst, .. }
            | Message::Learn { inst, .. }
            | Message::Nack { inst, .. }
            | Message::Forward { inst, .. } => {
                let inst = inst.clone();
                let learned = match self.generator(&inst) {
                    Some(Generator::Perfect(g)) => g.handle(from, msg, oracle, out),
                    _ => None,
                };
                if let Some(seq) = learned {
                    out.note(Note::Learn { inst: inst.clone(), value: seq.clone() });
                    self.new_view(inst, seq, out);
                }
            }
            Message::Reconfig { update, view } => self.on_reconfig(from, *update, view, out),
            Message::RecConfirm { update, view } => self.on_rec_confirm(from, *update, view, out),
            Message::ViewReply { view } => self.on_view_reply(view, out),
            Message::InstallSeq(m) => self.r_receive(m.clone(), out),
            Message::StateUpdate { ov, w, reg, updates } => self.on_state_update(from, ov, w, reg, updates, out),
            Message::ViewUpdated { view } => self.on_view_updated(from, view, out),
            m if m.is_client_request() => self.on_client(from, m, out),
            other => debug!("server {} ignores {}", self.me, other.kind()),
        }
    }

    pub fn on_timer(&mut self, timer: &Timer, oracle: &Oracle, out: &mut Outbox) {
        if self.status == Status::Halted {
            return;
        }
        self.oracle = oracle.clone();
        match timer {
            Timer::Reconfig { view } => self.on_reconfig_timer(view, out),
            Timer::Paxos { inst } => {
                if let Some(Generator::Perfect(g)) = self.generators.get_mut(inst) {
                    g.on_timeout(oracle, out);
                }
            }
            Timer::RequestRetry => self.on_request_retry(oracle, out),
            Timer::ClientRetry { .. } => {}
        }
    }
}
