//! Offline audits of run traces. Every checker is a pure function of the
//! trace, so a rendered trace can be parsed back and re-checked.

pub mod atomicity;
pub mod bounds;
pub mod liveness;
pub mod views;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::Error;
use crate::reconfig::GeneratorKind;
use crate::simnet::{Outcome, RunResult};
use crate::trace::TraceLine;
use crate::view::View;

pub use atomicity::{check_atomicity, History, OpRecord};
pub use bounds::check_generator_bounds;
pub use liveness::check_liveness;
pub use views::check_views;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "kebab-case")]
pub enum Verdict {
    Ok,
    /// Verified, but not exhaustively.
    Heuristic,
    Violation(String),
    Skipped(String),
}

impl Verdict {
    pub fn is_violation(&self) -> bool {
        matches!(self, Verdict::Violation(_))
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Ok => f.write_str("ok"),
            Verdict::Heuristic => f.write_str("ok (heuristic)"),
            Verdict::Violation(d) => write!(f, "violation: {d}"),
            Verdict::Skipped(d) => write!(f, "skipped: {d}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Property {
    Atomicity,
    Views,
    Liveness,
    Bounds,
}

impl Property {
    pub const ALL: [Property; 4] = [Property::Atomicity, Property::Views, Property::Liveness, Property::Bounds];
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Property::Atomicity => "atomicity",
            Property::Views => "views",
            Property::Liveness => "liveness",
            Property::Bounds => "bounds",
        })
    }
}

impl FromStr for Property {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "atomicity" => Ok(Property::Atomicity),
            "views" => Ok(Property::Views),
            "liveness" => Ok(Property::Liveness),
            "bounds" => Ok(Property::Bounds),
            _ => Err(Error::Parse(format!("unknown property `{s}`"))),
        }
    }
}

/// Parses `all` or a comma-separated list of property names.
pub fn parse_properties(s: &str) -> Result<Vec<Property>, Error> {
    if s == "all" {
        return Ok(Property::ALL.to_vec());
    }
    let mut out: Vec<Property> = s.split(',').map(str::trim).map(str::parse).collect::<Result<_, _>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct Finding {
    pub property: Property,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Report {
    pub findings: Vec<Finding>,
}

impl Report {
    pub fn is_ok(&self) -> bool {
        !self.findings.iter().any(|f| f.verdict.is_violation())
    }

    pub fn verdict(&self, p: Property) -> Option<&Verdict> {
        self.findings.iter().find(|f| f.property == p).map(|f| &f.verdict)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for finding in &self.findings {
            writeln!(f, "{:<10} {}", finding.property, finding.verdict)?;
        }
        Ok(())
    }
}

/// What the checkers need to know besides the trace itself.
#[derive(Clone, Debug)]
pub struct RunInfo {
    pub initial_view: View,
    pub generator: GeneratorKind,
    pub expect_violation: bool,
    pub exhausted: bool,
}

impl RunInfo {
    pub fn of(run: &RunResult) -> Self {
        RunInfo {
            initial_view: run.initial_view.clone(),
            generator: run.generator,
            expect_violation: run.expect_violation,
            exhausted: run.outcome == Outcome::Exhausted,
        }
    }
}

pub fn check(trace: &[TraceLine], info: &RunInfo, props: &[Property]) -> Report {
    let findings = props
        .iter()
        .map(|&property| {
            let verdict = match property {
                Property::Atomicity => check_atomicity(&History::from_trace(trace)),
                Property::Views => check_views(trace, &info.initial_view),
                Property::Liveness => check_liveness(trace, info),
                Property::Bounds => check_generator_bounds(trace, info.generator),
            };
            Finding { property, verdict }
        })
        .collect();
    Report { findings }
}
