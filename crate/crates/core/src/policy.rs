//! Labels and the access decision shared by every storage engine.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::domain::{same_party, Domain};

/// Reader and writer domain sets attached to a stored object.
///
/// Members are kept in party-level form, so a reader entry for `cmp.com`
/// admits scripts from `cdn.cmp.com` at registrable granularity.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Label {
    readers: BTreeSet<Domain>,
    writers: BTreeSet<Domain>,
}

impl Label {
    pub fn new<R, W>(readers: R, writers: W) -> Self
    where
        R: IntoIterator<Item = Domain>,
        W: IntoIterator<Item = Domain>,
    {
        Label {
            readers: readers.into_iter().map(|d| d.party()).collect(),
            writers: writers.into_iter().map(|d| d.party()).collect(),
        }
    }

    pub fn readers(&self) -> &BTreeSet<Domain> {
        &self.readers
    }

    pub fn writers(&self) -> &BTreeSet<Domain> {
        &self.writers
    }

    pub fn is_empty(&self) -> bool {
        self.readers.is_empty() && self.writers.is_empty()
    }

    /// Overwrites the reader set.
    pub fn set_readers<I: IntoIterator<Item = Domain>>(&mut self, domains: I) {
        self.readers = domains.into_iter().map(|d| d.party()).collect();
    }

    /// Overwrites the writer set.
    pub fn set_writers<I: IntoIterator<Item = Domain>>(&mut self, domains: I) {
        self.writers = domains.into_iter().map(|d| d.party()).collect();
    }

    pub fn can_read(&self, accessor: &Domain) -> bool {
        self.readers.contains(&accessor.party())
    }

    pub fn can_write(&self, accessor: &Domain) -> bool {
        self.writers.contains(&accessor.party())
    }
}

/// Renders a domain set as `{a,b}` with members in lexicographic order.
pub fn braced(set: &BTreeSet<Domain>) -> String {
    let mut out = String::from("{");
    for (i, d) in set.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(d.registrable());
    }
    out.push('}');
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessMode {
    Read,
    Write,
}

impl fmt::Display for AccessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccessMode::Read => "read",
            AccessMode::Write => "write",
        })
    }
}

/// Which check settled a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum DecisionReason {
    HostParty,
    Owner,
    ReaderSet,
    WriterSet,
    DefaultDeny,
    HttpOnlyDeny,
}

impl DecisionReason {
    pub fn is_allow(self) -> bool {
        matches!(
            self,
            DecisionReason::HostParty
                | DecisionReason::Owner
                | DecisionReason::ReaderSet
                | DecisionReason::WriterSet
        )
    }
}

impl fmt::Display for DecisionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Outcome of an access check. `allowed` is always consistent with `reason`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Decision {
    allowed: bool,
    reason: DecisionReason,
}

impl Decision {
    pub fn new(reason: DecisionReason) -> Self {
        Decision {
            allowed: reason.is_allow(),
            reason,
        }
    }

    pub fn allowed(&self) -> bool {
        self.allowed
    }

    pub fn reason(&self) -> DecisionReason {
        self.reason
    }
}

/// The label check. Host party first, then owner, then the reader or writer
/// set for the requested mode. Writer membership does not grant reads.
pub fn decide_access(
    label: &Label,
    owner: &Domain,
    host: &Domain,
    accessor: &Domain,
    mode: AccessMode,
) -> Decision {
    let reason = if same_party(accessor, host) {
        DecisionReason::HostParty
    } else if same_party(accessor, owner) {
        DecisionReason::Owner
    } else {
        match mode {
            AccessMode::Read if label.can_read(accessor) => DecisionReason::ReaderSet,
            AccessMode::Write if label.can_write(accessor) => DecisionReason::WriterSet,
            _ => DecisionReason::DefaultDeny,
        }
    };
    Decision::new(reason)
}

/// Who may change an object's label: its host or its owner.
pub fn decide_relabel(owner: &Domain, host: &Domain, accessor: &Domain) -> Decision {
    if same_party(accessor, host) {
        Decision::new(DecisionReason::HostParty)
    } else if same_party(accessor, owner) {
        Decision::new(DecisionReason::Owner)
    } else {
        Decision::new(DecisionReason::DefaultDeny)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Denial {
    pub accessor: Domain,
    pub name: String,
    pub mode: AccessMode,
}

/// Result of a write-path operation. `applied` mirrors `decision.allowed()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WriteOutcome {
    pub applied: bool,
    pub decision: Decision,
    pub denial: Option<Denial>,
}

impl WriteOutcome {
    pub(crate) fn from_decision(decision: Decision, accessor: &Domain, name: &str) -> Self {
        WriteOutcome {
            applied: decision.allowed(),
            decision,
            denial: (!decision.allowed()).then(|| Denial {
                accessor: accessor.clone(),
                name: name.to_string(),
                mode: AccessMode::Write,
            }),
        }
    }
}

/// Result of a read. `Absent` and `Denied` render identically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadResult {
    Value(String),
    Absent,
    Denied(Decision),
}

impl ReadResult {
    /// The string a script observes: the value, or empty.
    pub fn rendered(&self) -> &str {
        match self {
            ReadResult::Value(v) => v,
            ReadResult::Absent | ReadResult::Denied(_) => "",
        }
    }

    pub fn value(&self) -> Option<&str> {
        match self {
            ReadResult::Value(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_denied(&self) -> bool {
        matches!(self, ReadResult::Denied(_))
    }
}
