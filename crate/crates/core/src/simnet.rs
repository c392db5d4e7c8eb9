//! Deterministic discrete-event simulator.
//!
//! Events are kept in a map ordered by `(time, seqno)`; `seqno` is assigned
//! at scheduling time, so the execution order is a pure function of the
//! scenario and the seed. Message delays come from a seeded ChaCha stream,
//! optionally overridden by scenario rules, and collapse to a fixed bound
//! after the global stabilization time.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::message::{Message, Oracle, Outbox, Timer};
use crate::reconfig::{GeneratorKind, Server, ServerConfig, Status};
use crate::register::RegisterPair;
use crate::rw::Client;
use crate::scenario::{Cmd, DelayModel, DelayRule, Scenario};
use crate::trace::{Note, TraceEvent, TraceLine};
use crate::view::{ProcessId, View};

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub seed: u64,
    pub delay: DelayModel,
    pub rules: Vec<DelayRule>,
    pub gst: Option<u64>,
    pub gst_bound: u64,
    pub server: ServerConfig,
    pub client_retry: u64,
    pub max_steps: u64,
    pub expect_violation: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            delay: DelayModel::Uniform(1, 10),
            rules: Vec::new(),
            gst: None,
            gst_bound: 1,
            server: ServerConfig::default(),
            client_retry: 300,
            max_steps: 200_000,
            expect_violation: false,
        }
    }
}

impl SimConfig {
    /// Defaults overridden by whatever the scenario sets.
    pub fn for_scenario(sc: &Scenario, seed: u64) -> Self {
        let mut cfg = SimConfig { seed, ..SimConfig::default() };
        if let Some(d) = &sc.delay {
            cfg.delay = d.clone();
        }
        cfg.rules = sc.rules.clone();
        cfg.gst = sc.gst;
        if let Some(b) = sc.gst_bound {
            cfg.gst_bound = b;
        }
        if let Some(g) = sc.generator {
            cfg.server.generator = g;
        }
        if let Some(o) = sc.optimize_install {
            cfg.server.optimize_install = o;
        }
        if let Some(p) = sc.reconfig_period {
            cfg.server.reconfig_period = p;
        }
        if let Some(p) = sc.paxos_timeout {
            cfg.server.paxos_timeout = p;
        }
        if let Some(p) = sc.request_retry {
            cfg.server.request_retry = p;
        }
        if let Some(p) = sc.client_retry {
            cfg.client_retry = p;
        }
        if let Some(m) = sc.max_steps {
            cfg.max_steps = m;
        }
        cfg.expect_violation = sc.expect_violation;
        cfg
    }

    pub fn generator(&self) -> GeneratorKind {
        self.server.generator
    }
}

#[derive(Clone, Debug)]
enum EventKind {
    Deliver { from: ProcessId, to: ProcessId, msg: Message, cause: u64 },
    Timer { proc: ProcessId, timer: Timer, cause: u64 },
    Command(Cmd),
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
enum Proc {
    Server(Server),
    Client(Client),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// Nothing left to do.
    Quiescent,
    /// Step budget exhausted while work was still pending.
    Exhausted,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub trace: Vec<TraceLine>,
    pub outcome: Outcome,
    pub steps: u64,
    pub end_time: u64,
    pub generator: GeneratorKind,
    pub expect_violation: bool,
    pub initial_view: View,
    pub final_views: BTreeMap<ProcessId, View>,
}

impl RunResult {
    /// Views installed anywhere, in order of first installation.
    pub fn installed_views(&self) -> Vec<View> {
        let mut seen = vec![self.initial_view.clone()];
        for l in &self.trace {
            if let TraceEvent::Note(Note::Install { view, .. }) = &l.event {
                if !seen.contains(view) {
                    seen.push(view.clone());
                }
            }
        }
        seen
    }
}

pub struct Sim {
    cfg: SimConfig,
    now: u64,
    next_seq: u64,
    queue: BTreeMap<(u64, u64), EventKind>,
    procs: BTreeMap<ProcessId, Proc>,
    crashed: BTreeSet<ProcessId>,
    oracle: Oracle,
    trace: Vec<TraceLine>,
    rng: ChaCha8Rng,
    steps: u64,
    initial_view: View,
}

impl Sim {
    pub fn new(sc: &Scenario, cfg: SimConfig) -> Result<Self> {
        if sc.is_template() {
            return Err(Error::Scenario("template scenarios must be instantiated with a seed first".into()));
        }
        sc.validate()?;
        let v0 = sc.initial_view();
        let reg = RegisterPair::initial(sc.initial_value());
        let mut sim = Sim {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            now: 0,
            // seq 0 is reserved for the boot lines
            next_seq: 1,
            queue: BTreeMap::new(),
            procs: BTreeMap::new(),
            crashed: BTreeSet::new(),
            oracle: Oracle { directory: v0.clone(), stopped: BTreeSet::new() },
            trace: Vec::new(),
            steps: 0,
            initial_view: v0.clone(),
        };
        for &p in &sc.servers {
            let mut out = Outbox::default();
            let s = Server::initial(p, v0.clone(), reg.clone(), sim.cfg.server.clone(), &mut out);
            sim.procs.insert(p, Proc::Server(s));
            sim.apply(p, 0, out);
        }
        for p in sc.joiners() {
            let s = Server::outsider(p, v0.clone(), reg.clone(), sim.cfg.server.clone());
            sim.procs.insert(p, Proc::Server(s));
        }
        for &c in &sc.clients {
            sim.procs.insert(c, Proc::Client(Client::new(c, v0.clone(), sim.cfg.client_retry)));
        }
        for (t, cmd) in &sc.commands {
            sim.schedule(*t, EventKind::Command(cmd.clone()));
        }
        Ok(sim)
    }

    fn schedule(&mut self, at: u64, ev: EventKind) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.insert((at, seq), ev);
        seq
    }

    fn delay(&mut self, from: ProcessId, to: ProcessId, msg: &Message) -> u64 {
        if let Some(gst) = self.cfg.gst {
            if self.now >= gst {
                return self.cfg.gst_bound.max(1);
            }
        }
        if !self.cfg.rules.is_empty() {
            let rendered = msg.to_string();
            if let Some(r) = self.cfg.rules.iter().find(|r| r.matches(msg.kind(), from, to, &rendered)) {
                return r.ticks.max(1);
            }
        }
        match self.cfg.delay {
            DelayModel::Fixed(d) => d.max(1),
            DelayModel::Uniform(lo, hi) => self.rng.gen_range(lo.max(1)..=hi.max(lo).max(1)),
        }
    }

    fn record(&mut self, seq: u64, proc: ProcessId, event: TraceEvent) {
        self.trace.push(TraceLine { time: self.now, seq, proc, event });
    }

    /// Drains a handler's outbox: notes go to the trace (and update the
    /// oracle), messages and timers are scheduled.
    fn apply(&mut self, proc: ProcessId, cause: u64, out: Outbox) {
        for note in out.notes {
            match &note {
                Note::Install { view, .. } if self.oracle.directory.is_subset_of(view) => {
                    self.oracle.directory = view.clone();
                }
                Note::Halt => {
                    self.oracle.stopped.insert(proc);
                }
                _ => {}
            }
            self.record(cause, proc, TraceEvent::Note(note));
        }
        for (to, msg) in out.sends {
            let d = self.delay(proc, to, &msg);
            self.schedule(self.now + d, EventKind::Deliver { from: proc, to, msg, cause });
        }
        for (after, timer) in out.timers {
            self.schedule(self.now + after.max(1), EventKind::Timer { proc, timer, cause });
        }
    }

    fn stopped(&self, p: ProcessId) -> bool {
        self.crashed.contains(&p)
            || matches!(self.procs.get(&p), Some(Proc::Server(s)) if s.status() == Status::Halted)
    }

    fn busy(&self) -> bool {
        self.procs.iter().any(|(p, proc)| {
            !self.crashed.contains(p)
                && match proc {
                    Proc::Server(s) => s.is_busy(),
                    Proc::Client(c) => c.is_busy(),
                }
        })
    }

    /// Executes one event; returns false when the run is over.
    pub fn step(&mut self) -> bool {
        let only_timers = self.queue.values().all(|e| matches!(e, EventKind::Timer { .. }));
        if self.queue.is_empty() || (only_timers && !self.busy()) {
            return false;
        }
        let ((time, seq), ev) = self.queue.pop_first().expect("queue is non-empty");
        self.now = time;
        self.steps += 1;
        let oracle = self.oracle.clone();
        let mut out = Outbox::default();
        let proc = match ev {
            EventKind::Deliver { from, to, msg, cause } => {
                if self.stopped(to) {
                    return true;
                }
                let body = msg.to_string();
                let body = body.strip_prefix(msg.kind()).unwrap_or(&body).trim_start().to_string();
                self.record(seq, to, TraceEvent::Deliver { cause, from, kind: msg.kind().to_string(), body });
                match self.procs.get_mut(&to) {
                    Some(Proc::Server(s)) => s.on_message(from, &msg, &oracle, &mut out),
                    Some(Proc::Client(c)) => c.on_message(from, &msg, &mut out),
                    None => {}
                }
                to
            }
            EventKind::Timer { proc, timer, cause } => {
                if self.stopped(proc) {
                    return true;
                }
                self.record(seq, proc, TraceEvent::Timer { cause, timer: timer.to_string() });
                match self.procs.get_mut(&proc) {
                    Some(Proc::Server(s)) => s.on_timer(&timer, &oracle, &mut out),
                    Some(Proc::Client(c)) => {
                        if let Timer::ClientRetry { tag } = timer {
                            c.on_timeout(tag, &oracle, &mut out);
                        }
                    }
                    None => {}
                }
                proc
            }
            EventKind::Command(cmd) => {
                let p = cmd.target();
                if self.stopped(p) {
                    return true;
                }
                self.record(seq, p, TraceEvent::Command { cmd: cmd.to_string() });
                match (&cmd, self.procs.get_mut(&p)) {
                    (Cmd::Crash(_), _) => {
                        self.crashed.insert(p);
                        self.oracle.stopped.insert(p);
                        self.record(seq, p, TraceEvent::Crash);
                    }
                    (Cmd::Join(_), Some(Proc::Server(s))) => s.join(&oracle, &mut out),
                    (Cmd::Leave(_), Some(Proc::Server(s))) => {
                        if s.status() == Status::PendingJoin {
                            // Not a member yet; try again once it might be.
                            let later = self.now + self.cfg.server.reconfig_period;
                            self.schedule(later, EventKind::Command(cmd.clone()));
                        } else {
                            s.leave(&mut out);
                        }
                    }
                    (Cmd::Write(_, v), Some(Proc::Client(c))) => c.write(v.clone(), &mut out),
                    (Cmd::Read(_), Some(Proc::Client(c))) => c.read(&mut out),
                    _ => {}
                }
                p
            }
        };
        self.apply(proc, seq, out);
        true
    }

    pub fn run(mut self) -> RunResult {
        let mut outcome = Outcome::Quiescent;
        while self.step() {
            if self.steps >= self.cfg.max_steps {
                if self.busy() || self.queue.values().any(|e| !matches!(e, EventKind::Timer { .. })) {
                    outcome = Outcome::Exhausted;
                }
                break;
            }
        }
        let final_views = self
            .procs
            .iter()
            .filter_map(|(p, proc)| match proc {
                Proc::Server(s) if !self.crashed.contains(p) && s.status() != Status::PendingJoin => {
                    Some((*p, s.current_view().clone()))
                }
                _ => None,
            })
            .collect();
        RunResult {
            trace: self.trace,
            outcome,
            steps: self.steps,
            end_time: self.now,
            generator: self.cfg.server.generator,
            expect_violation: self.cfg.expect_violation,
            initial_view: self.initial_view,
            final_views,
        }
    }
}

/// Instantiates (if needed) and runs a scenario.
pub fn run_scenario(sc: &Scenario, cfg: SimConfig) -> Result<RunResult> {
    let concrete = sc.instantiate(cfg.seed)?;
    Ok(Sim::new(&concrete, cfg)?.run())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::render;

    fn scenario(s: &str) -> Scenario {
        s.parse().unwrap()
    }

    #[test]
    fn empty_scenario_keeps_initial_view() {
        let sc = scenario("servers 1 2 3\n");
        let r = run_scenario(&sc, SimConfig::for_scenario(&sc, 1)).unwrap();
        assert_eq!(r.outcome, Outcome::Quiescent);
        assert_eq!(r.installed_views(), vec![sc.initial_view()]);
        assert!(r.trace.iter().all(|l| !matches!(l.event, TraceEvent::Note(Note::OpComplete { .. }))));
    }

    #[test]
    fn same_seed_same_trace() {
        let sc = scenario("servers 1 2 3\nclients 101 102\nat 0 join 4\nat 1 write 101 a\nat 2 read 102\nat 30 leave 2\n");
        let a = render(&run_scenario(&sc, SimConfig::for_scenario(&sc, 7)).unwrap().trace);
        let b = render(&run_scenario(&sc, SimConfig::for_scenario(&sc, 7)).unwrap().trace);
        assert_eq!(a, b);
        let c = render(&run_scenario(&sc, SimConfig::for_scenario(&sc, 8)).unwrap().trace);
        assert_ne!(a, c);
    }

    #[test]
    fn post_gst_delays_are_bounded() {
        let sc = scenario("servers 1 2 3\nclients 101\ndelay uniform 5 50\ngst 0\ngst-bound 2\nat 0 read 101\n");
        let r = run_scenario(&sc, SimConfig::for_scenario(&sc, 3)).unwrap();
        let time_of: BTreeMap<u64, u64> = r.trace.iter().map(|l| (l.seq, l.time)).collect();
        let mut n = 0;
        for l in &r.trace {
            if let TraceEvent::Deliver { cause, .. } = l.event {
                assert_eq!(l.time - time_of[&cause], 2);
                n += 1;
            }
        }
        assert!(n >= 6);
    }

    #[test]
    fn join_gets_installed() {
        let sc = scenario("servers 1 2 3\nat 0 join 4\n");
        let r = run_scenario(&sc, SimConfig::for_scenario(&sc, 1)).unwrap();
        assert_eq!(r.outcome, Outcome::Quiescent);
        let last = r.installed_views().last().unwrap().clone();
        assert_eq!(last.members().len(), 4);
        assert!(r.trace.iter().any(|l| l.proc == ProcessId(4) && l.event == TraceEvent::Note(Note::EnableOps)));
    }

    #[test]
    fn crashed_process_receives_nothing() {
        let sc = scenario("servers 1 2 3\nclients 101\nat 0 crash 3\nat 1 write 101 a\n");
        let r = run_scenario(&sc, SimConfig::for_scenario(&sc, 2)).unwrap();
        assert!(r.trace.iter().any(|l| l.event == TraceEvent::Crash));
        assert!(!r.trace.iter().any(|l| l.proc == ProcessId(3) && matches!(l.event, TraceEvent::Deliver { .. })));
        assert!(r.trace.iter().any(|l| matches!(l.event, TraceEvent::Note(Note::OpComplete { .. }))));
    }
}
