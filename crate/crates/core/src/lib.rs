//! FreeStore: a dynamic atomic read/write register whose membership can be
//! changed at run time, either without consensus (live view generator) or
//! on top of single-decree Paxos (perfect view generator).
//!
//! Everything runs inside a deterministic discrete-event simulator
//! ([`simnet`]); the [`checker`] module audits the resulting traces and
//! [`metrics`] counts communication steps.

pub mod checker;
pub mod error;
pub mod explore;
pub mod message;
pub mod metrics;
pub mod paxos;
pub mod reconfig;
pub mod register;
pub mod rw;
pub mod scenario;
pub mod simnet;
pub mod trace;
pub mod vg_live;
pub mod vg_perfect;
pub mod view;

pub use checker::{check, Property, Report, RunInfo, Verdict};
pub use error::{Error, Result};
pub use metrics::{Convention, Metrics, OpSteps, ReconfigSteps};
pub use message::{InstallSeq, Message, Oracle, Outbox, Timer};
pub use paxos::{Ballot, Paxos};
pub use reconfig::{GeneratorKind, Server, ServerConfig, Status};
pub use register::{RegisterPair, Timestamp, Value};
pub use rw::Client;
pub use scenario::{Cmd, DelayModel, DelayRule, RandomTemplate, Scenario};
pub use simnet::{run_scenario, Outcome, RunResult, Sim, SimConfig};
pub use trace::{GenSource, Note, OpId, OpKind, TraceEvent, TraceLine};
pub use view::{ProcessId, Sign, Update, View, ViewSeq};
