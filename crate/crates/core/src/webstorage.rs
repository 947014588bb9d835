//! Labeled localStorage and IndexedDB partitions.

use std::collections::BTreeMap;
use std::fmt;

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

use crate::domain::Domain;
use crate::policy::{
    braced, decide_access, decide_relabel, AccessMode, Decision, DecisionReason, Label, ReadResult,
    WriteOutcome,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StorageError {
    #[error("storage key must not be empty")]
    EmptyKey,
    #[error("no object with key {0:?}")]
    NotFound(String),
    #[error("{operation} needs a {expected} partition, got {found}")]
    WrongArea {
        operation: &'static str,
        expected: &'static str,
        found: &'static str,
    },
}

/// Which store a partition belongs to. An IndexedDB partition is one object
/// store inside one database.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StorageArea {
    Local,
    #[serde(rename = "idb")]
    IndexedDb {
        db_name: String,
        store_name: String,
    },
}

impl StorageArea {
    pub fn idb(db_name: impl Into<String>, store_name: impl Into<String>) -> Self {
        StorageArea::IndexedDb {
            db_name: db_name.into(),
            store_name: store_name.into(),
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            StorageArea::Local => "local",
            StorageArea::IndexedDb { .. } => "idb",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StorageRecord {
    pub key: String,
    pub value: String,
    pub owner: Domain,
    pub label: Label,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Gate {
    Labels,
    Legacy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoragePartition {
    host: Domain,
    area: StorageArea,
    records: IndexMap<String, StorageRecord>,
}

impl StoragePartition {
    pub fn new(host: &Domain, area: StorageArea) -> Self {
        StoragePartition {
            host: host.party(),
            area,
            records: IndexMap::new(),
        }
    }

    pub fn local(host: &Domain) -> Self {
        Self::new(host, StorageArea::Local)
    }

    pub fn indexed_db(host: &Domain, db_name: &str, store_name: &str) -> Self {
        Self::new(host, StorageArea::idb(db_name, store_name))
    }

    pub fn host(&self) -> &Domain {
        &self.host
    }

    pub fn area(&self) -> &StorageArea {
        &self.area
    }

    pub fn get(&self, key: &str) -> Option<&StorageRecord> {
        self.records.get(key)
    }

    pub fn records(&self) -> impl Iterator<Item = &StorageRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn expect_area(&self, operation: &'static str, idb: bool) -> Result<(), StorageError> {
        let is_idb = matches!(self.area, StorageArea::IndexedDb { .. });
        if is_idb == idb {
            Ok(())
        } else {
            Err(StorageError::WrongArea {
                operation,
                expected: if idb { "idb" } else { "local" },
                found: self.area.kind_name(),
            })
        }
    }

    /// Enforcement decision for a write of `key`; creating a key is always
    /// allowed.
    pub fn check_write(&self, script: &Domain, key: &str) -> Decision {
        match self.records.get(key) {
            None => Decision::new(DecisionReason::Owner),
            Some(rec) => decide_access(
                &rec.label,
                &rec.owner,
                &self.host,
                script,
                AccessMode::Write,
            ),
        }
    }

    pub fn check_read(&self, script: &Domain, key: &str) -> Option<Decision> {
        self.records
            .get(key)
            .map(|rec| decide_access(&rec.label, &rec.owner, &self.host, script, AccessMode::Read))
    }

    /// Enforcement decision for `setReaders`/`setWriters` on `key`.
    pub fn check_relabel(&self, script: &Domain, key: &str) -> Result<Decision, StorageError> {
        let rec = self
            .records
            .get(key)
            .ok_or_else(|| StorageError::NotFound(key.to_string()))?;
        Ok(decide_relabel(&rec.owner, &self.host, script))
    }

    fn write(&mut self, script: &Domain, key: &str, value: &str, gate: Gate) -> WriteOutcome {
        let decision = match gate {
            Gate::Labels => self.check_write(script, key),
            Gate::Legacy => Decision::new(DecisionReason::HostParty),
        };
        let outcome = WriteOutcome::from_decision(decision, script, key);
        if outcome.applied {
            match self.records.get_mut(key) {
                Some(rec) => rec.value = value.to_string(),
                None => {
                    self.records.insert(
                        key.to_string(),
                        StorageRecord {
                            key: key.to_string(),
                            value: value.to_string(),
                            owner: script.party(),
                            label: Label::default(),
                        },
                    );
                }
            }
        }
        outcome
    }

    fn read(&self, script: &Domain, key: &str) -> ReadResult {
        match self.records.get(key) {
            None => ReadResult::Absent,
            Some(rec) => {
                let decision =
                    decide_access(&rec.label, &rec.owner, &self.host, script, AccessMode::Read);
                if decision.allowed() {
                    ReadResult::Value(rec.value.clone())
                } else {
                    ReadResult::Denied(decision)
                }
            }
        }
    }

    /// `localStorage.setItem(key, value)` by `script`.
    pub fn set_item(
        &mut self,
        script: &Domain,
        key: &str,
        value: &str,
    ) -> Result<WriteOutcome, StorageError> {
        self.expect_area("setItem", false)?;
        non_empty(key)?;
        Ok(self.write(script, key, value, Gate::Labels))
    }

    /// `localStorage.getItem(key)` by `script`.
    pub fn get_item(&self, script: &Domain, key: &str) -> Result<ReadResult, StorageError> {
        self.expect_area("getItem", false)?;
        Ok(self.read(script, key))
    }

    /// `IDBObjectStore.put` by `script`.
    pub fn idb_put(
        &mut self,
        script: &Domain,
        key: &str,
        value: &str,
    ) -> Result<WriteOutcome, StorageError> {
        self.expect_area("put", true)?;
        non_empty(key)?;
        Ok(self.write(script, key, value, Gate::Labels))
    }

    /// `IDBObjectStore.get` by `script`.
    pub fn idb_get(&self, script: &Domain, key: &str) -> Result<ReadResult, StorageError> {
        self.expect_area("get", true)?;
        Ok(self.read(script, key))
    }

    /// Write with pre-label semantics, for either area.
    pub fn put_legacy(
        &mut self,
        script: &Domain,
        key: &str,
        value: &str,
    ) -> Result<(), StorageError> {
        non_empty(key)?;
        self.write(script, key, value, Gate::Legacy);
        Ok(())
    }

    /// Replaces the reader set of `key`. Only the host or the owner may do so.
    pub fn set_readers<I>(
        &mut self,
        script: &Domain,
        key: &str,
        domains: I,
    ) -> Result<WriteOutcome, StorageError>
    where
        I: IntoIterator<Item = Domain>,
    {
        self.relabel(script, key, Gate::Labels, |label| {
            label.set_readers(domains)
        })
    }

    /// Replaces the writer set of `key`. Only the host or the owner may do so.
    pub fn set_writers<I>(
        &mut self,
        script: &Domain,
        key: &str,
        domains: I,
    ) -> Result<WriteOutcome, StorageError>
    where
        I: IntoIterator<Item = Domain>,
    {
        self.relabel(script, key, Gate::Labels, |label| {
            label.set_writers(domains)
        })
    }

    /// Label replacement without the authorization check.
    pub fn relabel_legacy<I>(
        &mut self,
        script: &Domain,
        key: &str,
        mode: AccessMode,
        domains: I,
    ) -> Result<(), StorageError>
    where
        I: IntoIterator<Item = Domain>,
    {
        self.relabel(script, key, Gate::Legacy, |label| match mode {
            AccessMode::Read => label.set_readers(domains),
            AccessMode::Write => label.set_writers(domains),
        })
        .map(|_| ())
    }

    fn relabel(
        &mut self,
        script: &Domain,
        key: &str,
        gate: Gate,
        update: impl FnOnce(&mut Label),
    ) -> Result<WriteOutcome, StorageError> {
        let decision = match gate {
            Gate::Labels => self.check_relabel(script, key)?,
            Gate::Legacy => {
                self.check_relabel(script, key)?;
                Decision::new(DecisionReason::HostParty)
            }
        };
        let outcome = WriteOutcome::from_decision(decision, script, key);
        if outcome.applied {
            if let Some(rec) = self.records.get_mut(key) {
                update(&mut rec.label);
            }
        }
        Ok(outcome)
    }

    /// One tab-separated line per record:
    /// `kind host db/store key owner Reader={..} Writer={..} value`.
    pub fn dump(&self) -> Vec<String> {
        let location = match &self.area {
            StorageArea::Local => "-".to_string(),
            StorageArea::IndexedDb {
                db_name,
                store_name,
            } => format!("{db_name}/{store_name}"),
        };
        self.records
            .values()
            .map(|rec| {
                format!(
                    "{}\t{}\t{}\t{}\t{}\tReader={}\tWriter={}\t{}",
                    self.area.kind_name(),
                    self.host,
                    location,
                    rec.key,
                    rec.owner,
                    braced(rec.label.readers()),
                    braced(rec.label.writers()),
                    rec.value
                )
            })
            .collect()
    }
}

fn non_empty(key: &str) -> Result<(), StorageError> {
    if key.is_empty() {
        Err(StorageError::EmptyKey)
    } else {
        Ok(())
    }
}

/// Every partition of one browser profile, keyed by host and area.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct WebStorage {
    partitions: BTreeMap<(Domain, StorageArea), StoragePartition>,
}

impl fmt::Debug for WebStorage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.partitions.keys()).finish()
    }
}

impl WebStorage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn partition(&self, host: &Domain, area: &StorageArea) -> Option<&StoragePartition> {
        self.partitions.get(&(host.party(), area.clone()))
    }

    /// The partition for `(host, area)`, created empty on first use.
    pub fn partition_mut(&mut self, host: &Domain, area: &StorageArea) -> &mut StoragePartition {
        self.partitions
            .entry((host.party(), area.clone()))
            .or_insert_with(|| StoragePartition::new(host, area.clone()))
    }

    pub fn partitions(&self) -> impl Iterator<Item = &StoragePartition> {
        self.partitions.values()
    }

    pub fn dump(&self) -> Vec<String> {
        self.partitions
            .values()
            .flat_map(StoragePartition::dump)
            .collect()
    }
}
