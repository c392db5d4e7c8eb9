//! Views, view sequences and the quorum arithmetic built on them.
//!
//! A view is nothing more than a set of join/leave updates. Membership,
//! quorum size and fault threshold are all derived from the entries, and two
//! views are compared only through their entries.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of a server or client process.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProcessId(pub u32);

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for ProcessId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.parse::<u32>()
            .map(ProcessId)
            .map_err(|_| Error::Parse(format!("bad process id `{s}`")))
    }
}

/// Join (`Plus`) or leave (`Minus`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

/// A single reconfiguration request: `<+,i>` or `<-,i>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Update {
    pub sign: Sign,
    pub server: ProcessId,
}

impl Update {
    pub fn join(server: ProcessId) -> Self {
        Update { sign: Sign::Plus, server }
    }

    pub fn leave(server: ProcessId) -> Self {
        Update { sign: Sign::Minus, server }
    }
}

impl fmt::Display for Update {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.sign {
            Sign::Plus => '+',
            Sign::Minus => '-',
        };
        write!(f, "{s}{}", self.server)
    }
}

impl FromStr for Update {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (sign, rest) = match s.as_bytes().first() {
            Some(b'+') => (Sign::Plus, &s[1..]),
            Some(b'-') => (Sign::Minus, &s[1..]),
            _ => return Err(Error::Parse(format!("bad update `{s}`"))),
        };
        Ok(Update { sign, server: rest.parse()? })
    }
}

/// An immutable set of updates. Identity, equality and ordering are defined on
/// the entries only; the derived `Ord` is an arbitrary total order used for
/// map keys, not containment.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct View {
    entries: BTreeSet<Update>,
}

impl View {
    pub fn new(entries: impl IntoIterator<Item = Update>) -> Self {
        View { entries: entries.into_iter().collect() }
    }

    /// The bootstrap view `{<+,j> : j in initial}`.
    pub fn initial(members: impl IntoIterator<Item = ProcessId>) -> Self {
        View::new(members.into_iter().map(Update::join))
    }

    pub fn entries(&self) -> &BTreeSet<Update> {
        &self.entries
    }

    pub fn contains_entry(&self, u: &Update) -> bool {
        self.entries.contains(u)
    }

    pub fn members(&self) -> BTreeSet<ProcessId> {
        self.entries
            .iter()
            .filter(|u| u.sign == Sign::Plus && !self.entries.contains(&Update::leave(u.server)))
            .map(|u| u.server)
            .collect()
    }

    pub fn is_member(&self, p: ProcessId) -> bool {
        self.entries.contains(&Update::join(p)) && !self.entries.contains(&Update::leave(p))
    }

    pub fn size(&self) -> usize {
        self.members().len()
    }

    /// `ceil((n+1)/2)`.
    pub fn quorum(&self) -> Result<usize> {
        match self.size() {
            0 => Err(Error::DegenerateView(self.to_string())),
            n => Ok(n / 2 + 1),
        }
    }

    /// `floor((n-1)/2)`.
    pub fn f_max(&self) -> Result<usize> {
        match self.size() {
            0 => Err(Error::DegenerateView(self.to_string())),
            n => Ok((n - 1) / 2),
        }
    }

    /// Strict containment of entries: `self ⊂ other`.
    pub fn is_subset_of(&self, other: &View) -> bool {
        self.entries.len() < other.entries.len() && self.entries.is_subset(&other.entries)
    }

    /// `self` is more up-to-date than `other`, i.e. `other ⊂ self`.
    pub fn is_more_updated(&self, other: &View) -> bool {
        other.is_subset_of(self)
    }

    /// Neither view contains the other and they differ.
    pub fn conflicts(&self, other: &View) -> bool {
        self != other && !self.is_subset_of(other) && !other.is_subset_of(self)
    }

    /// View whose entries are the union of both.
    pub fn union(&self, other: &View) -> View {
        View { entries: self.entries.union(&other.entries).copied().collect() }
    }

    pub fn with_updates<'a>(&self, updates: impl IntoIterator<Item = &'a Update>) -> View {
        let mut entries = self.entries.clone();
        entries.extend(updates);
        View { entries }
    }

    /// Membership rendered as `{1,3}`.
    pub fn members_string(&self) -> String {
        let ids: Vec<String> = self.members().iter().map(|p| p.to_string()).collect();
        format!("{{{}}}", ids.join(","))
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, u) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{u}")?;
        }
        f.write_str("}")
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let inner = s
            .strip_prefix('{')
            .and_then(|r| r.strip_suffix('}'))
            .ok_or_else(|| Error::Parse(format!("bad view `{s}`")))?;
        if inner.is_empty() {
            return Ok(View::default());
        }
        inner.split(',').map(str::parse).collect::<Result<BTreeSet<_>>>().map(|entries| View { entries })
    }
}

/// A sequence of views totally ordered by strict containment, stored
/// ascending. Construction validates the chain.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ViewSeq {
    views: Vec<View>,
}

impl ViewSeq {
    pub fn empty() -> Self {
        ViewSeq::default()
    }

    pub fn singleton(v: View) -> Self {
        ViewSeq { views: vec![v] }
    }

    /// Builds a sequence from views in any order; duplicates collapse. Fails
    /// if two views are not comparable by containment.
    pub fn from_views(views: impl IntoIterator<Item = View>) -> Result<Self> {
        let mut views: Vec<View> = views.into_iter().collect();
        views.sort_by_key(|v| v.entries.len());
        views.dedup();
        for pair in views.windows(2) {
            if !pair[0].is_subset_of(&pair[1]) {
                return Err(Error::NotAChain(format!("{} / {}", pair[0], pair[1])));
            }
        }
        Ok(ViewSeq { views })
    }

    /// Checks an already-ordered list without re-sorting; used to validate
    /// sequences received from the network.
    pub fn from_ordered(views: Vec<View>) -> Result<Self> {
        for pair in views.windows(2) {
            if !pair[0].is_subset_of(&pair[1]) {
                return Err(Error::NotAChain(format!("{} / {}", pair[0], pair[1])));
            }
        }
        Ok(ViewSeq { views })
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    pub fn iter(&self) -> std::slice::Iter<'_, View> {
        self.views.iter()
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn contains(&self, v: &View) -> bool {
        self.views.contains(v)
    }

    /// The view not contained in any other view of the sequence.
    pub fn most_updated(&self) -> Result<&View> {
        self.views.last().ok_or(Error::EmptySequence)
    }

    /// The view contained in every other view of the sequence.
    pub fn least_updated(&self) -> Result<&View> {
        self.views.first().ok_or(Error::EmptySequence)
    }

    /// Set union of two sequences, re-ordered by containment. The inputs must
    /// not hold conflicting views.
    pub fn union(&self, other: &ViewSeq) -> Result<ViewSeq> {
        if let Some((a, b)) = self.first_conflict(other) {
            return Err(Error::NotAChain(format!("{a} / {b}")));
        }
        ViewSeq::from_views(self.views.iter().chain(other.views.iter()).cloned())
    }

    /// Some pair `(a, b)` with `a` in `self`, `b` in `other` that conflict.
    pub fn first_conflict<'a>(&'a self, other: &'a ViewSeq) -> Option<(&'a View, &'a View)> {
        self.views
            .iter()
            .flat_map(|a| other.views.iter().map(move |b| (a, b)))
            .find(|(a, b)| a.conflicts(b))
    }

    /// Every view of `self` is also a view of `other`.
    pub fn is_subseq_of(&self, other: &ViewSeq) -> bool {
        self.views.iter().all(|v| other.contains(v))
    }

    /// Every view strictly contains `base` (non-triviality).
    pub fn all_strictly_contain(&self, base: &View) -> bool {
        self.views.iter().all(|w| base.is_subset_of(w))
    }

    /// Views of the sequence strictly more up-to-date than `base`.
    pub fn newer_than(&self, base: &View) -> ViewSeq {
        ViewSeq { views: self.views.iter().filter(|w| base.is_subset_of(w)).cloned().collect() }
    }
}

impl fmt::Display for ViewSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, v) in self.views.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str("]")
    }
}

impl FromStr for ViewSeq {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let inner = s
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| Error::Parse(format!("bad sequence `{s}`")))?;
        let mut views = Vec::new();
        let mut rest = inner;
        while !rest.is_empty() {
            let end = rest.find('}').ok_or_else(|| Error::Parse(format!("bad sequence `{s}`")))?;
            views.push(rest[..=end].parse()?);
            rest = rest[end + 1..].trim_start_matches(',');
        }
        ViewSeq::from_ordered(views)
    }
}

impl<'a> IntoIterator for &'a ViewSeq {
    type Item = &'a View;
    type IntoIter = std::slice::Iter<'a, View>;

    fn into_iter(self) -> Self::IntoIter {
        self.views.iter()
    }
}
