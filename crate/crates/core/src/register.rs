use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::view::ProcessId;

/// Write timestamp: a counter with the writer id in the low-order position.
/// The derived ordering is lexicographic on `(counter, writer)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp {
    pub counter: u64,
    pub writer: ProcessId,
}

impl Timestamp {
    pub const INITIAL: Timestamp = Timestamp { counter: 0, writer: ProcessId(0) };

    /// `succ(max, c)`.
    pub fn succ(self, writer: ProcessId) -> Timestamp {
        Timestamp { counter: self.counter + 1, writer }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.counter, self.writer)
    }
}

impl FromStr for Timestamp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (c, w) = s.split_once('.').ok_or_else(|| Error::Parse(format!("bad timestamp `{s}`")))?;
        Ok(Timestamp {
            counter: c.parse().map_err(|_| Error::Parse(format!("bad timestamp `{s}`")))?,
            writer: w.parse()?,
        })
    }
}

/// Opaque register value. Values travel through line-oriented traces, so
/// they are restricted to non-empty tokens without whitespace.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Value(String);

impl Value {
    pub fn new(s: impl Into<String>) -> Result<Self> {
        let s = s.into();
        if s.is_empty() || s.chars().any(char::is_whitespace) {
            return Err(Error::Parse(format!("bad value `{s}`")));
        }
        Ok(Value(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Value {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Value::new(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegisterPair {
    pub value: Value,
    pub ts: Timestamp,
}

impl RegisterPair {
    pub fn initial(value: Value) -> Self {
        RegisterPair { value, ts: Timestamp::INITIAL }
    }

    /// Adopts `other` if it carries a strictly higher timestamp.
    pub fn adopt_if_newer(&mut self, other: &RegisterPair) -> bool {
        if other.ts > self.ts {
            *self = other.clone();
            true
        } else {
            false
        }
    }
}

impl fmt::Display for RegisterPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.value, self.ts)
    }
}
