//! Deterministic replay of access logs against the labeled engines.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::cookie::{parse_domain_list, CookieJar, CookieParseError};
use crate::domain::{Domain, DomainResolver};
use crate::log::{AccessEvent, Api, IdbLocation};
use crate::policy::{AccessMode, Decision, DecisionReason, ReadResult};
use crate::webstorage::{StorageArea, StorageError, WebStorage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayMode {
    /// Pre-label browser: record what enforcement would deny, then let it happen.
    Observe,
    #[default]
    Enforce,
}

impl fmt::Display for ReplayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReplayMode::Observe => "observe",
            ReplayMode::Enforce => "enforce",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DenialEvent {
    pub event_seq: u64,
    pub site_id: String,
    pub accessor: Domain,
    pub object_key: String,
    pub mode: AccessMode,
    pub reason: DecisionReason,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayErrorKind {
    #[error(transparent)]
    Cookie(#[from] CookieParseError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("seq {seq} (site {site_id}): {kind}")]
pub struct ReplayError {
    pub seq: u64,
    pub site_id: String,
    pub kind: ReplayErrorKind,
}

/// Browser state of one crawled site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteState {
    pub cookies: CookieJar,
    pub storage: WebStorage,
}

impl SiteState {
    pub fn new(resolver: DomainResolver) -> Self {
        SiteState {
            cookies: CookieJar::with_resolver(resolver),
            storage: WebStorage::new(),
        }
    }

    /// Cookie lines prefixed `cookie\t`, then storage lines.
    pub fn dump(&self) -> Vec<String> {
        self.cookies
            .dump()
            .into_iter()
            .map(|line| format!("cookie\t{line}"))
            .chain(self.storage.dump())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub mode: ReplayMode,
    pub sites: BTreeMap<String, SiteState>,
    pub denials: Vec<DenialEvent>,
    pub errors: Vec<ReplayError>,
}

impl ReplayOutcome {
    /// Final state of every site, one `site_id\t...` line per record.
    pub fn state_dump(&self) -> Vec<String> {
        self.sites
            .iter()
            .flat_map(|(site, state)| {
                state
                    .dump()
                    .into_iter()
                    .map(move |l| format!("{site}\t{l}"))
            })
            .collect()
    }

    pub fn denials_tsv(&self) -> String {
        let mut out = String::from("seq\tsite\taccessor\tobject\tmode\treason\n");
        for d in &self.denials {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                d.event_seq, d.site_id, d.accessor, d.object_key, d.mode, d.reason
            ));
        }
        out
    }
}

pub fn replay(events: &[AccessEvent], mode: ReplayMode) -> ReplayOutcome {
    replay_with(events, mode, &DomainResolver::default())
}

pub fn replay_with(
    events: &[AccessEvent],
    mode: ReplayMode,
    resolver: &DomainResolver,
) -> ReplayOutcome {
    let mut replayer = Replayer::with_resolver(mode, resolver.clone());
    for event in events {
        replayer.feed(event);
    }
    replayer.finish()
}

/// Incremental replay. Events must arrive in seq order.
pub struct Replayer {
    resolver: DomainResolver,
    outcome: ReplayOutcome,
}

impl Replayer {
    pub fn new(mode: ReplayMode) -> Self {
        Self::with_resolver(mode, DomainResolver::default())
    }

    pub fn with_resolver(mode: ReplayMode, resolver: DomainResolver) -> Self {
        Replayer {
            resolver,
            outcome: ReplayOutcome {
                mode,
                sites: BTreeMap::new(),
                denials: Vec::new(),
                errors: Vec::new(),
            },
        }
    }

    pub fn feed(&mut self, event: &AccessEvent) {
        let mode = self.outcome.mode;
        let state = match self.outcome.sites.get_mut(&event.site_id) {
            Some(state) => state,
            None => self
                .outcome
                .sites
                .entry(event.site_id.clone())
                .or_insert_with(|| SiteState::new(self.resolver.clone())),
        };
        match apply(state, event, mode, &self.resolver) {
            Ok(None) => {}
            Ok(Some((access, decision))) => self.outcome.denials.push(DenialEvent {
                event_seq: event.seq,
                site_id: event.site_id.clone(),
                accessor: event.script.clone(),
                object_key: event.object_key().into_owned(),
                mode: access,
                reason: decision.reason(),
            }),
            Err(kind) => self.outcome.errors.push(ReplayError {
                seq: event.seq,
                site_id: event.site_id.clone(),
                kind,
            }),
        }
    }

    pub fn finish(self) -> ReplayOutcome {
        self.outcome
    }
}

fn area_of(idb: Option<&IdbLocation>) -> StorageArea {
    match idb {
        None => StorageArea::Local,
        Some(loc) => StorageArea::idb(&loc.db, &loc.store),
    }
}

fn denied(mode: AccessMode, decision: Decision) -> Option<(AccessMode, Decision)> {
    (!decision.allowed()).then_some((mode, decision))
}

fn read_denial(result: ReadResult) -> Option<(AccessMode, Decision)> {
    match result {
        ReadResult::Denied(decision) => Some((AccessMode::Read, decision)),
        _ => None,
    }
}

/// Applies one event; returns the (would-be) denial it produced.
fn apply(
    state: &mut SiteState,
    event: &AccessEvent,
    mode: ReplayMode,
    resolver: &DomainResolver,
) -> Result<Option<(AccessMode, Decision)>, ReplayErrorKind> {
    let (host, script, now) = (&event.host, &event.script, event.time);
    let value = event.value.as_deref().unwrap_or("");
    let jar = &mut state.cookies;
    let storage = &mut state.storage;

    Ok(match event.api {
        Api::HttpSetCookie => {
            let record = jar.parse_set_cookie(&event.cookie_string(), script, now)?;
            jar.http_set_cookie(record);
            None
        }
        Api::GetCookie => read_denial(jar.js_get_cookie(host, script, &event.key, now)),
        Api::SetCookie => {
            let assignment = event.cookie_string();
            match mode {
                ReplayMode::Enforce => {
                    let outcome = jar.js_set_cookie(host, script, &assignment, now)?;
                    denied(AccessMode::Write, outcome.decision)
                }
                ReplayMode::Observe => {
                    let decision = jar.check_js_write(host, script, &event.key, now);
                    jar.js_set_cookie_legacy(host, script, &assignment, now)?;
                    denied(AccessMode::Write, decision)
                }
            }
        }
        Api::GetItem | Api::IdbGet => {
            let area = area_of(event.idb.as_ref());
            match storage.partition(host, &area) {
                None => None,
                Some(p) if event.api == Api::GetItem => {
                    read_denial(p.get_item(script, &event.key)?)
                }
                Some(p) => read_denial(p.idb_get(script, &event.key)?),
            }
        }
        Api::SetItem | Api::IdbPut => {
            let partition = storage.partition_mut(host, &area_of(event.idb.as_ref()));
            match mode {
                ReplayMode::Enforce => {
                    let outcome = if event.api == Api::SetItem {
                        partition.set_item(script, &event.key, value)?
                    } else {
                        partition.idb_put(script, &event.key, value)?
                    };
                    denied(AccessMode::Write, outcome.decision)
                }
                ReplayMode::Observe => {
                    let decision = partition.check_write(script, &event.key);
                    partition.put_legacy(script, &event.key, value)?;
                    denied(AccessMode::Write, decision)
                }
            }
        }
        Api::SetReaders | Api::SetWriters => {
            let (attribute, target) = if event.api == Api::SetReaders {
                ("Reader", AccessMode::Read)
            } else {
                ("Writer", AccessMode::Write)
            };
            let domains = parse_domain_list(attribute, value, resolver)?;
            let partition = storage.partition_mut(host, &area_of(event.idb.as_ref()));
            match mode {
                ReplayMode::Enforce => {
                    let outcome = match target {
                        AccessMode::Read => partition.set_readers(script, &event.key, domains)?,
                        AccessMode::Write => partition.set_writers(script, &event.key, domains)?,
                    };
                    denied(AccessMode::Write, outcome.decision)
                }
                ReplayMode::Observe => {
                    let decision = partition.check_relabel(script, &event.key)?;
                    partition.relabel_legacy(script, &event.key, target, domains)?;
                    denied(AccessMode::Write, decision)
                }
            }
        }
    })
}
