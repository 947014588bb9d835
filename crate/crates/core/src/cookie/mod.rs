//! Labeled cookie jar.
//!
//! Cookies are filed under the host page's party, one record per name. The
//! HTTP path is trusted and replaces records wholesale. The script path
//! (`document.cookie`) is subject to the label check on every overwrite and
//! can never change a record's owner.

mod parse;

use std::collections::BTreeMap;
use std::fmt;

use indexmap::IndexMap;
use serde::Serialize;

pub use parse::{canonical, parse_domain_list, parse_set_cookie, CookieParseError};

use crate::domain::{Domain, DomainResolver};
use crate::policy::{
    decide_access, decide_relabel, AccessMode, Decision, DecisionReason, Label, ReadResult,
    WriteOutcome,
};
use parse::{parse_cookie_string, ParsedCookie};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
pub enum SameSite {
    Strict,
    Lax,
    None,
    #[default]
    Unset,
}

impl SameSite {
    fn from_attr(raw: &str) -> Self {
        match raw.to_ascii_lowercase().as_str() {
            "strict" => SameSite::Strict,
            "lax" => SameSite::Lax,
            "none" => SameSite::None,
            _ => SameSite::Unset,
        }
    }

    fn attr(self) -> Option<&'static str> {
        match self {
            SameSite::Strict => Some("Strict"),
            SameSite::Lax => Some("Lax"),
            SameSite::None => Some("None"),
            SameSite::Unset => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CookieRecord {
    pub name: String,
    pub value: String,
    /// Jar partition: the host page's party for script-set cookies.
    pub domain: Domain,
    pub owner: Domain,
    pub label: Label,
    pub secure: bool,
    pub http_only: bool,
    pub same_site: SameSite,
    /// Absolute expiry in seconds; `None` for session cookies.
    pub expires_at: Option<i64>,
    pub created_at: i64,
}

impl CookieRecord {
    /// Parses a header with the bundled suffix list.
    pub fn parse(header: &str, origin: &Domain, now: i64) -> Result<Self, CookieParseError> {
        parse_set_cookie(header, origin, now, &DomainResolver::default())
    }

    pub fn is_expired(&self, now: i64) -> bool {
        self.expires_at.is_some_and(|t| t <= now)
    }

    pub fn canonical(&self) -> String {
        canonical(self)
    }
}

impl fmt::Display for CookieRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&canonical(self))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Gate {
    Labels,
    Legacy,
}

type Partition = IndexMap<String, CookieRecord>;

#[derive(Clone, Default)]
pub struct CookieJar {
    partitions: BTreeMap<Domain, Partition>,
    resolver: DomainResolver,
}

impl PartialEq for CookieJar {
    fn eq(&self, other: &Self) -> bool {
        self.partitions == other.partitions
    }
}

impl fmt::Debug for CookieJar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(
                self.partitions
                    .iter()
                    .map(|(k, v)| (k, v.keys().collect::<Vec<_>>())),
            )
            .finish()
    }
}

impl CookieJar {
    pub fn new() -> Self {
        Self::default()
    }

    /// A jar whose Reader/Writer/Domain attributes resolve through `resolver`.
    pub fn with_resolver(resolver: DomainResolver) -> Self {
        CookieJar {
            partitions: BTreeMap::new(),
            resolver,
        }
    }

    pub fn resolver(&self) -> &DomainResolver {
        &self.resolver
    }

    pub fn parse_set_cookie(
        &self,
        header: &str,
        origin: &Domain,
        now: i64,
    ) -> Result<CookieRecord, CookieParseError> {
        parse_set_cookie(header, origin, now, &self.resolver)
    }

    /// Stores a record received over HTTP, replacing any record of the same
    /// name in its partition.
    pub fn http_set_cookie(&mut self, record: CookieRecord) {
        self.partitions
            .entry(record.domain.party())
            .or_default()
            .insert(record.name.clone(), record);
    }

    pub fn get(&self, host: &Domain, name: &str) -> Option<&CookieRecord> {
        self.partitions.get(&host.party())?.get(name)
    }

    fn live(&self, host: &Domain, name: &str, now: i64) -> Option<&CookieRecord> {
        self.get(host, name).filter(|r| !r.is_expired(now))
    }

    /// All records, partition by partition, in insertion order.
    pub fn records(&self) -> impl Iterator<Item = &CookieRecord> {
        self.partitions.values().flat_map(|p| p.values())
    }

    pub fn partition(&self, host: &Domain) -> impl Iterator<Item = &CookieRecord> {
        self.partitions
            .get(&host.party())
            .into_iter()
            .flat_map(|p| p.values())
    }

    pub fn len(&self) -> usize {
        self.partitions.values().map(IndexMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// What enforcement would decide for a script write of cookie `name`.
    /// Writing a name with no live record creates it, which is always allowed.
    pub fn check_js_write(&self, host: &Domain, script: &Domain, name: &str, now: i64) -> Decision {
        match self.live(host, name, now) {
            None => Decision::new(DecisionReason::Owner),
            Some(rec) if rec.http_only => Decision::new(DecisionReason::HttpOnlyDeny),
            Some(rec) => decide_access(&rec.label, &rec.owner, host, script, AccessMode::Write),
        }
    }

    /// What enforcement would decide for a script read of cookie `name`, or
    /// `None` when there is nothing to read.
    pub fn check_js_read(
        &self,
        host: &Domain,
        script: &Domain,
        name: &str,
        now: i64,
    ) -> Option<Decision> {
        self.live(host, name, now)
            .map(|rec| read_decision(rec, host, script))
    }

    /// `document.cookie = assignment` executed by `script` on page `host`.
    ///
    /// Denied writes leave the jar untouched and report the denial in the
    /// outcome. Grammar errors never mutate the jar.
    pub fn js_set_cookie(
        &mut self,
        host: &Domain,
        script: &Domain,
        assignment: &str,
        now: i64,
    ) -> Result<WriteOutcome, CookieParseError> {
        let parsed = parse_cookie_string(assignment, now, &self.resolver)?;
        let decision = self.check_js_write(host, script, &parsed.name, now);
        let outcome = WriteOutcome::from_decision(decision, script, &parsed.name);
        if outcome.applied {
            self.apply_js_write(host, script, parsed, now, Gate::Labels);
        }
        Ok(outcome)
    }

    /// The same write with pre-label semantics: only `HttpOnly` is honored.
    /// Returns whether the write took effect.
    pub fn js_set_cookie_legacy(
        &mut self,
        host: &Domain,
        script: &Domain,
        assignment: &str,
        now: i64,
    ) -> Result<bool, CookieParseError> {
        let parsed = parse_cookie_string(assignment, now, &self.resolver)?;
        if self
            .live(host, &parsed.name, now)
            .is_some_and(|r| r.http_only)
        {
            return Ok(false);
        }
        self.apply_js_write(host, script, parsed, now, Gate::Legacy);
        Ok(true)
    }

    fn apply_js_write(
        &mut self,
        host: &Domain,
        script: &Domain,
        parsed: ParsedCookie,
        now: i64,
        gate: Gate,
    ) {
        let host = host.party();
        let partition = self.partitions.entry(host.clone()).or_default();
        match partition.get_mut(&parsed.name) {
            Some(rec) if !rec.is_expired(now) => {
                rec.value = parsed.value;
                rec.secure = parsed.secure;
                rec.same_site = parsed.same_site;
                rec.expires_at = parsed.expires_at;
                let may_relabel =
                    gate == Gate::Legacy || decide_relabel(&rec.owner, &host, script).allowed();
                if may_relabel {
                    if let Some(readers) = parsed.readers {
                        rec.label.set_readers(readers);
                    }
                    if let Some(writers) = parsed.writers {
                        rec.label.set_writers(writers);
                    }
                }
            }
            _ => {
                let record = CookieRecord {
                    name: parsed.name,
                    value: parsed.value,
                    domain: host,
                    owner: script.party(),
                    label: Label::new(
                        parsed.readers.unwrap_or_default(),
                        parsed.writers.unwrap_or_default(),
                    ),
                    secure: parsed.secure,
                    // document.cookie cannot create HttpOnly cookies.
                    http_only: false,
                    same_site: parsed.same_site,
                    expires_at: parsed.expires_at,
                    created_at: now,
                };
                partition.shift_remove(&record.name);
                partition.insert(record.name.clone(), record);
            }
        }
    }

    /// A single-cookie read by `script`.
    pub fn js_get_cookie(
        &self,
        host: &Domain,
        script: &Domain,
        name: &str,
        now: i64,
    ) -> ReadResult {
        match self.live(host, name, now) {
            None => ReadResult::Absent,
            Some(rec) => {
                let decision = read_decision(rec, host, script);
                if decision.allowed() {
                    ReadResult::Value(rec.value.clone())
                } else {
                    ReadResult::Denied(decision)
                }
            }
        }
    }

    /// `document.cookie` as seen by `script`: readable live cookies of the
    /// host partition as `name=value` joined by `"; "`. Unreadable cookies are
    /// omitted.
    pub fn js_get_cookie_string(&self, host: &Domain, script: &Domain, now: i64) -> String {
        let mut out = String::new();
        for rec in self.partition(host) {
            if rec.is_expired(now) || !read_decision(rec, host, script).allowed() {
                continue;
            }
            if !out.is_empty() {
                out.push_str("; ");
            }
            out.push_str(&rec.name);
            out.push('=');
            out.push_str(&rec.value);
        }
        out
    }

    /// Drops every record with `expires_at <= now`, and empty partitions.
    pub fn purge_expired(&mut self, now: i64) {
        for partition in self.partitions.values_mut() {
            partition.retain(|_, rec| !rec.is_expired(now));
        }
        self.partitions.retain(|_, p| !p.is_empty());
    }

    /// Canonical serialization of every record.
    pub fn dump(&self) -> Vec<String> {
        self.records().map(canonical).collect()
    }
}

fn read_decision(rec: &CookieRecord, host: &Domain, script: &Domain) -> Decision {
    if rec.http_only {
        Decision::new(DecisionReason::HttpOnlyDeny)
    } else {
        decide_access(&rec.label, &rec.owner, host, script, AccessMode::Read)
    }
}
