//! Run traces. One event per line:
//!
//! ```text
//! t=<int> seq=<int> <proc> <EVENT_KIND> <fields...>
//! ```
//!
//! `seq` is the id of the simulator event being executed; every line emitted
//! while handling that event shares it. `DELIVER` and `TIMER` lines carry
//! `cause=<seq>`, the id of the event whose handler sent the message or armed
//! the timer, which is what the step meter follows backwards.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::register::{RegisterPair, Timestamp, Value};
use crate::view::{ProcessId, Update, View, ViewSeq};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Read,
    Write,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::Read => "read",
            OpKind::Write => "write",
        })
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "read" => Ok(OpKind::Read),
            "write" => Ok(OpKind::Write),
            _ => Err(Error::Parse(format!("bad op kind `{s}`"))),
        }
    }
}

/// Identifies one client operation: `<client>.<n>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OpId {
    pub client: ProcessId,
    pub n: u32,
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.client, self.n)
    }
}

impl FromStr for OpId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (c, n) = s.split_once('.').ok_or_else(|| Error::Parse(format!("bad op id `{s}`")))?;
        Ok(OpId { client: c.parse()?, n: n.parse().map_err(|_| Error::Parse(format!("bad op id `{s}`")))? })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GenSource {
    /// Started by the reconfiguration timer.
    Timer,
    /// Re-proposal after reaching an auxiliary view.
    Aux,
}

/// Protocol-level events recorded by handlers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Note {
    GenView { ov: View, seq: ViewSeq, source: GenSource },
    NewView { ov: View, seq: ViewSeq },
    RDeliver { w: View, seq: ViewSeq, ov: View },
    Install { view: View, reg: RegisterPair },
    EnableOps,
    DisableOps,
    Halt,
    JoinInvoke,
    LeaveInvoke,
    RequestConfirmed { update: Update },
    OpInvoke { op: OpId, kind: OpKind, value: Option<Value> },
    OpComplete { op: OpId, kind: OpKind, value: Value, ts: Timestamp, view: View },
    Learn { inst: View, value: ViewSeq },
    Fault { reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    Deliver { cause: u64, from: ProcessId, kind: String, body: String },
    Timer { cause: u64, timer: String },
    Command { cmd: String },
    Crash,
    Note(Note),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceLine {
    pub time: u64,
    pub seq: u64,
    pub proc: ProcessId,
    pub event: TraceEvent,
}

impl fmt::Display for Note {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Note::GenView { ov, seq, source } => {
                let src = match source {
                    GenSource::Timer => "timer",
                    GenSource::Aux => "aux",
                };
                write!(f, "GEN_VIEW view={ov} seq={seq} source={src}")
            }
            Note::NewView { ov, seq } => write!(f, "NEW_VIEW view={ov} seq={seq}"),
            Note::RDeliver { w, seq, ov } => write!(f, "R_DELIVER w={w} seq={seq} ov={ov}"),
            Note::Install { view, reg } => write!(f, "INSTALL view={view} reg={reg}"),
            Note::EnableOps => f.write_str("ENABLE_OPS"),
            Note::DisableOps => f.write_str("DISABLE_OPS"),
            Note::Halt => f.write_str("HALT"),
            Note::JoinInvoke => f.write_str("JOIN_INVOKE"),
            Note::LeaveInvoke => f.write_str("LEAVE_INVOKE"),
            Note::RequestConfirmed { update } => write!(f, "REQUEST_CONFIRMED update={update}"),
            Note::OpInvoke { op, kind, value } => {
                write!(f, "OP_INVOKE op={op} kind={kind}")?;
                match value {
                    Some(v) => write!(f, " value={v}"),
                    None => Ok(()),
                }
            }
            Note::OpComplete { op, kind, value, ts, view } => {
                write!(f, "OP_COMPLETE op={op} kind={kind} value={value} ts={ts} view={view}")
            }
            Note::Learn { inst, value } => write!(f, "LEARN inst={inst} value={value}"),
            Note::Fault { reason } => write!(f, "FAULT reason={reason}"),
        }
    }
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} seq={} {} ", self.time, self.seq, self.proc)?;
        match &self.event {
            TraceEvent::Deliver { cause, from, kind, body } => {
                write!(f, "DELIVER cause={cause} from={from} {kind}")?;
                if !body.is_empty() {
                    write!(f, " {body}")?;
                }
                Ok(())
            }
            TraceEvent::Timer { cause, timer } => write!(f, "TIMER cause={cause} {timer}"),
            TraceEvent::Command { cmd } => write!(f, "CMD {cmd}"),
            TraceEvent::Crash => f.write_str("CRASH"),
            TraceEvent::Note(n) => write!(f, "{n}"),
        }
    }
}

fn fields(tokens: &[&str]) -> BTreeMap<String, String> {
    tokens
        .iter()
        .filter_map(|t| t.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

fn field<T: FromStr<Err = Error>>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    map.get(key).ok_or_else(|| Error::Parse(format!("missing field `{key}`")))?.parse()
}

fn prefixed<'a>(tok: Option<&'a str>, prefix: &str) -> Result<&'a str> {
    tok.and_then(|t| t.strip_prefix(prefix)).ok_or_else(|| Error::Parse(format!("expected `{prefix}`")))
}

fn num(s: &str) -> Result<u64> {
    s.parse().map_err(|_| Error::Parse(format!("bad number `{s}`")))
}

impl FromStr for TraceLine {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let mut it = tokens.iter().copied();
        let time = num(prefixed(it.next(), "t=")?)?;
        let seq = num(prefixed(it.next(), "seq=")?)?;
        let proc: ProcessId = it.next().ok_or_else(|| Error::Parse("missing process".into()))?.parse()?;
        let kind = it.next().ok_or_else(|| Error::Parse("missing event kind".into()))?;
        let rest: Vec<&str> = it.collect();
        let map = fields(&rest);
        let event = match kind {
            "DELIVER" => {
                let cause = num(prefixed(rest.first().copied(), "cause=")?)?;
                let from = prefixed(rest.get(1).copied(), "from=")?.parse()?;
                let kind = rest.get(2).ok_or_else(|| Error::Parse("missing message kind".into()))?.to_string();
                TraceEvent::Deliver { cause, from, kind, body: rest[3..].join(" ") }
            }
            "TIMER" => {
                let cause = num(prefixed(rest.first().copied(), "cause=")?)?;
                TraceEvent::Timer { cause, timer: rest[1..].join(" ") }
            }
            "CMD" => TraceEvent::Command { cmd: rest.join(" ") },
            "CRASH" => TraceEvent::Crash,
            "GEN_VIEW" => TraceEvent::Note(Note::GenView {
                ov: field(&map, "view")?,
                seq: field(&map, "seq")?,
                source: match map.get("source").map(String::as_str) {
                    Some("timer") => GenSource::Timer,
                    Some("aux") => GenSource::Aux,
                    _ => return Err(Error::Parse("bad source".into())),
                },
            }),
            "NEW_VIEW" => TraceEvent::Note(Note::NewView { ov: field(&map, "view")?, seq: field(&map, "seq")? }),
            "R_DELIVER" => TraceEvent::Note(Note::RDeliver {
                w: field(&map, "w")?,
                seq: field(&map, "seq")?,
                ov: field(&map, "ov")?,
            }),
            "INSTALL" => {
                let reg = map.get("reg").ok_or_else(|| Error::Parse("missing reg".into()))?;
                let (v, ts) = reg.rsplit_once('@').ok_or_else(|| Error::Parse(format!("bad reg `{reg}`")))?;
                TraceEvent::Note(Note::Install {
                    view: field(&map, "view")?,
                    reg: RegisterPair { value: v.parse()?, ts: ts.parse()? },
                })
            }
            "ENABLE_OPS" => TraceEvent::Note(Note::EnableOps),
            "DISABLE_OPS" => TraceEvent::Note(Note::DisableOps),
            "HALT" => TraceEvent::Note(Note::Halt),
            "JOIN_INVOKE" => TraceEvent::Note(Note::JoinInvoke),
            "LEAVE_INVOKE" => TraceEvent::Note(Note::LeaveInvoke),
            "REQUEST_CONFIRMED" => TraceEvent::Note(Note::RequestConfirmed { update: field(&map, "update")? }),
            "OP_INVOKE" => TraceEvent::Note(Note::OpInvoke {
                op: field(&map, "op")?,
                kind: field(&map, "kind")?,
                value: map.get("value").map(|v| v.parse()).transpose()?,
            }),
            "OP_COMPLETE" => TraceEvent::Note(Note::OpComplete {
                op: field(&map, "op")?,
                kind: field(&map, "kind")?,
                value: field(&map, "value")?,
                ts: field(&map, "ts")?,
                view: field(&map, "view")?,
            }),
            "LEARN" => TraceEvent::Note(Note::Learn { inst: field(&map, "inst")?, value: field(&map, "value")? }),
            "FAULT" => TraceEvent::Note(Note::Fault { reason: rest.join(" ").trim_start_matches("reason=").to_string() }),
            other => return Err(Error::Parse(format!("unknown event kind `{other}`"))),
        };
        Ok(TraceLine { time, seq, proc, event })
    }
}

pub fn render(trace: &[TraceLine]) -> String {
    let mut out = String::new();
    for line in trace {
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

/// Parses a rendered trace. Blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<Vec<TraceLine>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| l.parse().map_err(|e: Error| Error::Parse(format!("line {}: {e}", i + 1))))
        .collect()
}
