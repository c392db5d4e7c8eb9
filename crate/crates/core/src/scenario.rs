//! Line-oriented scenario files.
//!
//! ```text
//! # comment
//! servers 1 2 3
//! clients 101 102
//! initial-value init
//! generator live
//! delay uniform 1 10
//! rule SEQ-VIEW from 1 to * 20
//! at 0 join 4
//! at 5 write 101 alpha
//! at 9 read 102
//! at 40 crash 2
//! ```
//!
//! A `random ...` header turns the file into a template; [`Scenario::instantiate`]
//! draws the concrete servers, clients and timeline from a seed.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::reconfig::GeneratorKind;
use crate::register::Value;
use crate::view::{ProcessId, View};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Cmd {
    Join(ProcessId),
    Leave(ProcessId),
    Write(ProcessId, Value),
    Read(ProcessId),
    Crash(ProcessId),
}

impl Cmd {
    pub fn target(&self) -> ProcessId {
        match self {
            Cmd::Join(p) | Cmd::Leave(p) | Cmd::Write(p, _) | Cmd::Read(p) | Cmd::Crash(p) => *p,
        }
    }
}

impl fmt::Display for Cmd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cmd::Join(p) => write!(f, "join {p}"),
            Cmd::Leave(p) => write!(f, "leave {p}"),
            Cmd::Write(p, v) => write!(f, "write {p} {v}"),
            Cmd::Read(p) => write!(f, "read {p}"),
            Cmd::Crash(p) => write!(f, "crash {p}"),
        }
    }
}

impl FromStr for Cmd {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t: Vec<&str> = s.split_whitespace().collect();
        let id = |i: usize| -> Result<ProcessId> {
            t.get(i).ok_or_else(|| Error::Scenario(format!("missing id in `{s}`")))?.parse()
        };
        match (t.first().copied(), t.len()) {
            (Some("join"), 2) => Ok(Cmd::Join(id(1)?)),
            (Some("leave"), 2) => Ok(Cmd::Leave(id(1)?)),
            (Some("read"), 2) => Ok(Cmd::Read(id(1)?)),
            (Some("crash"), 2) => Ok(Cmd::Crash(id(1)?)),
            (Some("write"), 3) => Ok(Cmd::Write(id(1)?, t[2].parse()?)),
            _ => Err(Error::Scenario(format!("bad command `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DelayModel {
    Uniform(u64, u64),
    Fixed(u64),
}

/// Overrides the delay of matching messages. `None` fields match anything;
/// `when` matches a substring of the rendered message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelayRule {
    pub kind: Option<String>,
    pub from: Option<ProcessId>,
    pub to: Option<ProcessId>,
    pub ticks: u64,
    pub when: Option<String>,
}

impl DelayRule {
    pub fn matches(&self, kind: &str, from: ProcessId, to: ProcessId, rendered: &str) -> bool {
        self.kind.as_deref().is_none_or(|k| k == kind)
            && self.from.is_none_or(|p| p == from)
            && self.to.is_none_or(|p| p == to)
            && self.when.as_deref().is_none_or(|w| rendered.contains(w))
    }
}

impl fmt::Display for DelayRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |p: Option<ProcessId>| p.map_or("*".to_string(), |p| p.to_string());
        write!(f, "rule {} from {} to {} {}", self.kind.as_deref().unwrap_or("*"), opt(self.from), opt(self.to), self.ticks)?;
        if let Some(w) = &self.when {
            write!(f, " when {w}")?;
        }
        Ok(())
    }
}

/// Parameters for seed-instantiated scenarios.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RandomTemplate {
    pub servers: RangeInclusive<usize>,
    pub clients: RangeInclusive<usize>,
    pub max_ops: usize,
    pub max_reconfigs: usize,
    pub crashes: bool,
    pub horizon: u64,
}

impl Default for RandomTemplate {
    fn default() -> Self {
        RandomTemplate { servers: 3..=7, clients: 2..=4, max_ops: 4, max_reconfigs: 3, crashes: true, horizon: 300 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Scenario {
    pub servers: Vec<ProcessId>,
    pub clients: Vec<ProcessId>,
    pub initial_value: Option<Value>,
    pub generator: Option<GeneratorKind>,
    pub delay: Option<DelayModel>,
    pub rules: Vec<DelayRule>,
    pub gst: Option<u64>,
    pub gst_bound: Option<u64>,
    pub optimize_install: Option<bool>,
    pub reconfig_period: Option<u64>,
    pub paxos_timeout: Option<u64>,
    pub client_retry: Option<u64>,
    pub request_retry: Option<u64>,
    pub max_steps: Option<u64>,
    pub expect_violation: bool,
    pub random: Option<RandomTemplate>,
    pub commands: Vec<(u64, Cmd)>,
}

fn bad(line: usize, msg: impl fmt::Display) -> Error {
    Error::Scenario(format!("line {line}: {msg}"))
}

fn num<T: FromStr>(line: usize, s: Option<&&str>) -> Result<T> {
    let s = s.ok_or_else(|| bad(line, "missing number"))?;
    s.parse().map_err(|_| bad(line, format!("bad number `{s}`")))
}

fn range(line: usize, s: Option<&&str>) -> Result<RangeInclusive<usize>> {
    let s = s.ok_or_else(|| bad(line, "missing range"))?;
    let (lo, hi) = s.split_once("..").unwrap_or((s, s));
    let lo: usize = lo.parse().map_err(|_| bad(line, format!("bad range `{s}`")))?;
    let hi: usize = hi.parse().map_err(|_| bad(line, format!("bad range `{s}`")))?;
    if lo > hi {
        return Err(bad(line, format!("empty range `{s}`")));
    }
    Ok(lo..=hi)
}

fn on_off(line: usize, s: Option<&&str>) -> Result<bool> {
    match s.copied() {
        Some("on") => Ok(true),
        Some("off") => Ok(false),
        _ => Err(bad(line, "expected on|off")),
    }
}

fn wildcard(line: usize, s: Option<&&str>) -> Result<Option<ProcessId>> {
    match s.copied() {
        Some("*") => Ok(None),
        Some(p) => Ok(Some(p.parse().map_err(|_| bad(line, format!("bad id `{p}`")))?)),
        None => Err(bad(line, "missing id")),
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut sc = Scenario::default();
        let mut last_time = 0;
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let t: Vec<&str> = line.split_whitespace().collect();
            let ids = |xs: &[&str]| -> Result<Vec<ProcessId>> {
                xs.iter().map(|x| x.parse().map_err(|_| bad(n, format!("bad id `{x}`")))).collect()
            };
            match t[0] {
                "servers" => sc.servers = ids(&t[1..])?,
                "clients" => sc.clients = ids(&t[1..])?,
                "initial-value" => {
                    sc.initial_value = Some(t.get(1).ok_or_else(|| bad(n, "missing value"))?.parse()?)
                }
                "generator" => sc.generator = Some(t.get(1).ok_or_else(|| bad(n, "missing generator"))?.parse()?),
                "delay" => {
                    sc.delay = Some(match t.get(1).copied() {
                        Some("uniform") => {
                            let (lo, hi) = (num(n, t.get(2))?, num(n, t.get(3))?);
                            if lo == 0 || lo > hi {
                                return Err(bad(n, "uniform delays need 1 <= lo <= hi"));
                            }
                            DelayModel::Uniform(lo, hi)
                        }
                        Some("fixed") => {
                            let d = num(n, t.get(2))?;
                            if d == 0 {
                                return Err(bad(n, "delays must be positive"));
                            }
                            DelayModel::Fixed(d)
                        }
                        _ => return Err(bad(n, "expected `delay uniform LO HI` or `delay fixed D`")),
                    })
                }
                "rule" => {
                    if t.len() < 7 || t[2] != "from" || t[4] != "to" {
                        return Err(bad(n, "expected `rule KIND from ID to ID TICKS [when TEXT]`"));
                    }
                    let when = match t.get(7).copied() {
                        Some("when") => Some(t[8..].join(" ")),
                        Some(other) => return Err(bad(n, format!("unexpected `{other}`"))),
                        None => None,
                    };
                    sc.rules.push(DelayRule {
                        kind: (t[1] != "*").then(|| t[1].to_string()),
                        from: wildcard(n, t.get(3))?,
                        to: wildcard(n, t.get(5))?,
                        ticks: num(n, t.get(6))?,
                        when,
                    });
                }
                "gst" => sc.gst = Some(num(n, t.get(1))?),
                "gst-bound" => sc.gst_bound = Some(num(n, t.get(1))?),
                "optimize-install" => sc.optimize_install = Some(on_off(n, t.get(1))?),
                "reconfig-period" => sc.reconfig_period = Some(num(n, t.get(1))?),
                "paxos-timeout" => sc.paxos_timeout = Some(num(n, t.get(1))?),
                "client-retry" => sc.client_retry = Some(num(n, t.get(1))?),
                "request-retry" => sc.request_retry = Some(num(n, t.get(1))?),
                "max-steps" => sc.max_steps = Some(num(n, t.get(1))?),
                "expect-violation" => sc.expect_violation = true,
                "random" => {
                    let mut tpl = RandomTemplate::default();
                    let mut k = 1;
                    while k < t.len() {
                        let v = t.get(k + 1);
                        match t[k] {
                            "servers" => tpl.servers = range(n, v)?,
                            "clients" => tpl.clients = range(n, v)?,
                            "ops" => tpl.max_ops = num(n, v)?,
                            "reconfigs" => tpl.max_reconfigs = num(n, v)?,
                            "crashes" => tpl.crashes = on_off(n, v)?,
                            "horizon" => tpl.horizon = num(n, v)?,
                            other => return Err(bad(n, format!("unknown random parameter `{other}`"))),
                        }
                        k += 2;
                    }
                    if *tpl.servers.start() == 0 {
                        return Err(bad(n, "at least one server is required"));
                    }
                    sc.random = Some(tpl);
                }
                "at" => {
                    let time: u64 = num(n, t.get(1))?;
                    if time < last_time {
                        return Err(bad(n, "command times must be non-decreasing"));
                    }
                    last_time = time;
                    let cmd = t[2..].join(" ").parse().map_err(|e: Error| bad(n, e))?;
                    sc.commands.push((time, cmd));
                }
                other => return Err(bad(n, format!("unknown directive `{other}`"))),
            }
        }
        if sc.random.is_none() {
            sc.validate()?;
        }
        Ok(sc)
    }
}

impl Scenario {
    pub fn initial_view(&self) -> View {
        View::initial(self.servers.iter().copied())
    }

    pub fn initial_value(&self) -> Value {
        self.initial_value.clone().unwrap_or_else(|| Value::new("init").expect("literal token"))
    }

    /// Servers that are not in the initial view but join at some point.
    pub fn joiners(&self) -> Vec<ProcessId> {
        let mut out = Vec::new();
        for (_, c) in &self.commands {
            if let Cmd::Join(p) = c {
                if !out.contains(p) {
                    out.push(*p);
                }
            }
        }
        out
    }

    pub fn is_template(&self) -> bool {
        self.random.is_some()
    }

    /// Checks roles, id uniqueness and the crash budget.
    pub fn validate(&self) -> Result<()> {
        if self.servers.is_empty() {
            return Err(Error::Scenario("no initial servers".into()));
        }
        let v0: BTreeSet<_> = self.servers.iter().copied().collect();
        let clients: BTreeSet<_> = self.clients.iter().copied().collect();
        if v0.len() != self.servers.len() || clients.len() != self.clients.len() {
            return Err(Error::Scenario("duplicate process id".into()));
        }
        if v0.iter().any(|p| p.0 == 0) || clients.iter().any(|p| p.0 == 0) {
            return Err(Error::Scenario("process id 0 is reserved".into()));
        }
        if !v0.is_disjoint(&clients) {
            return Err(Error::Scenario("server and client ids overlap".into()));
        }
        let mut joined = BTreeSet::new();
        let mut left = BTreeSet::new();
        let mut crashed = BTreeSet::new();
        for (_, c) in &self.commands {
            match c {
                Cmd::Join(p) => {
                    if v0.contains(p) || clients.contains(p) || p.0 == 0 || !joined.insert(*p) {
                        return Err(Error::Scenario(format!("{p} cannot join")));
                    }
                }
                Cmd::Leave(p) => {
                    if !(v0.contains(p) || joined.contains(p)) || !left.insert(*p) {
                        return Err(Error::Scenario(format!("{p} cannot leave")));
                    }
                }
                Cmd::Write(p, _) | Cmd::Read(p) => {
                    if !clients.contains(p) {
                        return Err(Error::Scenario(format!("{p} is not a client")));
                    }
                }
                Cmd::Crash(p) => {
                    if !(v0.contains(p) || joined.contains(p)) || !crashed.insert(*p) {
                        return Err(Error::Scenario(format!("{p} cannot crash")));
                    }
                }
            }
        }
        let smallest = v0.len() - left.iter().filter(|p| v0.contains(p)).count();
        if smallest == 0 {
            return Err(Error::Scenario("leaves would empty the system".into()));
        }
        let budget = (smallest - 1) / 2;
        if crashed.len() > budget && !self.expect_violation {
            return Err(Error::Scenario(format!(
                "{} crashes exceed the budget of {budget} for a view of {smallest} servers (mark the scenario expect-violation)",
                crashed.len()
            )));
        }
        Ok(())
    }

    /// Draws a concrete scenario from the template. Non-template scenarios
    /// are returned unchanged.
    pub fn instantiate(&self, seed: u64) -> Result<Scenario> {
        let Some(tpl) = &self.random else {
            return Ok(self.clone());
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
        let n = rng.gen_range(tpl.servers.clone());
        let c = rng.gen_range(tpl.clients.clone());
        let mut sc = Scenario { random: None, commands: Vec::new(), ..self.clone() };
        sc.servers = (1..=n as u32).map(ProcessId).collect();
        sc.clients = (0..c as u32).map(|i| ProcessId(101 + i)).collect();
        let mut cmds: Vec<(u64, Cmd)> = Vec::new();
        let horizon = tpl.horizon.max(1);

        let mut leavers = Vec::new();
        let mut next_joiner = n as u32 + 1;
        let reconfigs = rng.gen_range(0..=tpl.max_reconfigs);
        for _ in 0..reconfigs {
            let remaining = n - leavers.len();
            let can_leave = remaining > 2;
            if can_leave && rng.gen_bool(0.4) {
                let candidates: Vec<ProcessId> =
                    sc.servers.iter().copied().filter(|p| !leavers.contains(p)).collect();
                let p = *candidates.choose(&mut rng).expect("more than two remain");
                leavers.push(p);
                cmds.push((rng.gen_range(0..horizon), Cmd::Leave(p)));
            } else {
                cmds.push((rng.gen_range(0..horizon), Cmd::Join(ProcessId(next_joiner))));
                next_joiner += 1;
            }
        }

        if tpl.crashes {
            let budget = (n - leavers.len() - 1) / 2;
            let k = rng.gen_range(0..=budget);
            let mut stable: Vec<ProcessId> = sc.servers.iter().copied().filter(|p| !leavers.contains(p)).collect();
            stable.shuffle(&mut rng);
            for p in stable.into_iter().take(k) {
                cmds.push((rng.gen_range(0..horizon), Cmd::Crash(p)));
            }
        }

        for &client in &sc.clients {
            let ops = rng.gen_range(1..=tpl.max_ops.max(1));
            for k in 0..ops {
                let at = rng.gen_range(0..horizon);
                let cmd = if rng.gen_bool(0.5) {
                    Cmd::Write(client, Value::new(format!("v{client}_{}", k + 1))?)
                } else {
                    Cmd::Read(client)
                };
                cmds.push((at, cmd));
            }
        }
        cmds.sort_by_key(|(t, _)| *t);
        sc.commands = cmds;
        sc.validate()?;
        Ok(sc)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids = |xs: &[ProcessId]| xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
        writeln!(f, "servers {}", ids(&self.servers))?;
        if !self.clients.is_empty() {
            writeln!(f, "clients {}", ids(&self.clients))?;
        }
        if let Some(v) = &self.initial_value {
            writeln!(f, "initial-value {v}")?;
        }
        if let Some(g) = self.generator {
            writeln!(f, "generator {g}")?;
        }
        match self.delay {
            Some(DelayModel::Uniform(lo, hi)) => writeln!(f, "delay uniform {lo} {hi}")?,
            Some(DelayModel::Fixed(d)) => writeln!(f, "delay fixed {d}")?,
            None => {}
        }
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        let opt = [
            ("gst", self.gst),
            ("gst-bound", self.gst_bound),
            ("reconfig-period", self.reconfig_period),
            ("paxos-timeout", self.paxos_timeout),
            ("client-retry", self.client_retry),
            ("request-retry", self.request_retry),
            ("max-steps", self.max_steps),
        ];
        for (k, v) in opt {
            if let Some(v) = v {
                writeln!(f, "{k} {v}")?;
            }
        }
        if let Some(on) = self.optimize_install {
            writeln!(f, "optimize-install {}", if on { "on" } else { "off" })?;
        }
        if self.expect_violation {
            writeln!(f, "expect-violation")?;
        }
        if let Some(t) = &self.random {
            writeln!(
                f,
                "random servers {}..{} clients {}..{} ops {} reconfigs {} crashes {} horizon {}",
                t.servers.start(),
                t.servers.end(),
                t.clients.start(),
                t.clients.end(),
                t.max_ops,
                t.max_reconfigs,
                if t.crashes { "on" } else { "off" },
                t.horizon
            )?;
        }
        for (t, c) in &self.commands {
            writeln!(f, "at {t} {c}")?;
        }
        Ok(())
    }
}
