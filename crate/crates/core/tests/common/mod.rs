#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use proptest::collection::vec;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use storagelabel::classify::{CategoryCell, PartySplit};
use storagelabel::log::IdbLocation;
use storagelabel::{
    AccessEvent, AccessMode, Api, Category, ClassificationReport, CookieJar, Domain, Percent,
    ReplayOutcome, StorageArea, StoreKind,
};

pub const HOSTS: [&str; 3] = ["fp.com", "shop.org", "www.news.co.uk"];
pub const SCRIPTS: [&str; 9] = [
    "fp.com",
    "www.fp.com",
    "shop.org",
    "news.co.uk",
    "cmp.com",
    "cdn.cmp.com",
    "tracker.com",
    "ad_net.com",
    "analytics.com",
];
pub const KEYS: [&str; 3] = ["a", "b", "c"];
pub const STORES: [&str; 2] = ["s", "t"];

pub fn d(s: &str) -> Domain {
    Domain::parse(s).unwrap()
}

pub fn sample<S: Strategy>(strategy: &S, runner: &mut TestRunner) -> S::Value {
    strategy.new_tree(runner).unwrap().current()
}

pub fn labeled_jar() -> CookieJar {
    let fp = d("fp.com");
    let mut jar = CookieJar::new();
    for header in [
        "session_id=123; Domain=fp.com; Reader={cmp.com}; Writer={}",
        "__consent=TRUE; Domain=fp.com; Owner=cmp.com; Reader={tracker.com}; Writer={}",
        "tracker_id=567; Domain=fp.com; Owner=cmp.com; Reader={tracker.com}; Writer={tracker.com}",
    ] {
        let record = jar.parse_set_cookie(header, &fp, 0).unwrap();
        jar.http_set_cookie(record);
    }
    jar
}

// ---------------------------------------------------------------------------
// Synthetic logs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RawEvent {
    site: usize,
    api: usize,
    script: usize,
    key: usize,
    store: usize,
    value: u8,
    readers: Option<Vec<usize>>,
    writers: Option<Vec<usize>>,
    max_age: Option<i64>,
    http_only: bool,
}

fn domain_set() -> impl Strategy<Value = Option<Vec<usize>>> {
    proptest::option::weighted(0.3, vec(0..SCRIPTS.len(), 0..3))
}

fn raw_event(sites: usize) -> impl Strategy<Value = RawEvent> {
    (
        0..sites,
        0..Api::ALL.len(),
        0..SCRIPTS.len(),
        0..KEYS.len(),
        0..3usize,
        any::<u8>(),
        domain_set(),
        domain_set(),
        proptest::option::weighted(0.15, 0..4i64),
        proptest::bool::weighted(0.15),
    )
        .prop_map(
            |(site, api, script, key, store, value, readers, writers, max_age, http_only)| {
                RawEvent {
                    site,
                    api,
                    script,
                    key,
                    store,
                    value,
                    readers,
                    writers,
                    max_age,
                    http_only,
                }
            },
        )
}

fn braced(members: &[usize]) -> String {
    let names: Vec<_> = members.iter().map(|&i| SCRIPTS[i]).collect();
    format!("{{{}}}", names.join(","))
}

fn build_event(seq: u64, raw: &RawEvent) -> AccessEvent {
    let api = Api::ALL[raw.api];
    let host = HOSTS[raw.site % HOSTS.len()];
    let script = if api == Api::HttpSetCookie {
        host
    } else {
        SCRIPTS[raw.script]
    };
    let idb_store = raw.store.checked_sub(1).map(|i| IdbLocation {
        db: "d".into(),
        store: STORES[i].into(),
    });
    let (kind, idb) = match api {
        Api::GetCookie | Api::SetCookie | Api::HttpSetCookie => (StoreKind::Cookie, None),
        Api::GetItem | Api::SetItem => (StoreKind::Local, None),
        Api::IdbGet | Api::IdbPut => (
            StoreKind::Idb,
            Some(idb_store.unwrap_or(IdbLocation {
                db: "d".into(),
                store: "s".into(),
            })),
        ),
        Api::SetReaders | Api::SetWriters => match idb_store {
            None => (StoreKind::Local, None),
            Some(loc) => (StoreKind::Idb, Some(loc)),
        },
    };
    let value = match api {
        Api::GetCookie | Api::GetItem | Api::IdbGet => None,
        Api::SetReaders => Some(braced(raw.readers.as_deref().unwrap_or(&[]))),
        Api::SetWriters => Some(braced(raw.writers.as_deref().unwrap_or(&[]))),
        _ => Some(format!("v{}", raw.value)),
    };
    let attrs = matches!(api, Api::SetCookie | Api::HttpSetCookie)
        .then(|| {
            let mut parts = Vec::new();
            if let Some(r) = &raw.readers {
                parts.push(format!("Reader={}", braced(r)));
            }
            if let Some(w) = &raw.writers {
                parts.push(format!("Writer={}", braced(w)));
            }
            if let Some(age) = raw.max_age {
                parts.push(format!("Max-Age={age}"));
            }
            if raw.http_only {
                parts.push("HttpOnly".into());
            }
            parts.join("; ")
        })
        .filter(|a| !a.is_empty());
    AccessEvent {
        seq,
        api,
        kind,
        site_id: format!("site{}", raw.site),
        host: d(host),
        script: d(script),
        key: KEYS[raw.key].into(),
        idb,
        value,
        attrs,
        time: seq as i64,
    }
}

/// Logs over at most `max_sites` sites and `max_events` events, seq = time =
/// position.
pub fn log_strategy(
    max_sites: usize,
    max_events: usize,
) -> impl Strategy<Value = Vec<AccessEvent>> {
    (1..=max_sites)
        .prop_flat_map(move |sites| vec(raw_event(sites), 0..=max_events))
        .prop_map(|raws| {
            raws.iter()
                .enumerate()
                .map(|(i, raw)| build_event(i as u64 + 1, raw))
                .collect()
        })
}

/// A large log for throughput checks, drawn from a seeded generator.
pub fn synthetic_log(events: usize, sites: usize, seed: u64) -> Vec<AccessEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..events)
        .map(|i| {
            let raw = RawEvent {
                site: rng.gen_range(0..sites),
                api: rng.gen_range(0..6),
                script: rng.gen_range(0..SCRIPTS.len()),
                key: rng.gen_range(0..KEYS.len()),
                store: rng.gen_range(0..3),
                value: rng.gen(),
                readers: rng
                    .gen_bool(0.2)
                    .then(|| vec![rng.gen_range(0..SCRIPTS.len())]),
                writers: None,
                max_age: None,
                http_only: false,
            };
            build_event(i as u64 + 1, &raw)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Brute-force replay oracle (enforcement semantics)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelRecord {
    pub value: String,
    pub owner: String,
    pub readers: BTreeSet<String>,
    pub writers: BTreeSet<String>,
    pub http_only: bool,
    pub expires_at: Option<i64>,
}

/// (site, store, key) → record. Store is `cookie`, `local` or `idb:db/store`.
pub type ModelState = BTreeMap<(String, String, String), ModelRecord>;

#[derive(Debug, Default)]
pub struct ModelOutcome {
    pub denials: Vec<(u64, AccessMode)>,
    pub errors: Vec<u64>,
    pub state: ModelState,
}

fn party(d: &Domain) -> String {
    d.registrable().to_string()
}

fn list(raw: &str) -> BTreeSet<String> {
    raw.trim_matches(|c| c == '{' || c == '}')
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| party(&d(s)))
        .collect()
}

struct Attrs {
    readers: Option<BTreeSet<String>>,
    writers: Option<BTreeSet<String>>,
    max_age: Option<i64>,
    http_only: bool,
}

fn attrs(event: &AccessEvent) -> Attrs {
    let mut out = Attrs {
        readers: None,
        writers: None,
        max_age: None,
        http_only: false,
    };
    for part in event.attrs.as_deref().unwrap_or("").split("; ") {
        if let Some(r) = part.strip_prefix("Reader=") {
            out.readers = Some(list(r));
        } else if let Some(w) = part.strip_prefix("Writer=") {
            out.writers = Some(list(w));
        } else if let Some(age) = part.strip_prefix("Max-Age=") {
            out.max_age = Some(age.parse().unwrap());
        } else if part == "HttpOnly" {
            out.http_only = true;
        }
    }
    out
}

fn store_id(event: &AccessEvent) -> String {
    match (&event.kind, &event.idb) {
        (StoreKind::Cookie, _) => "cookie".into(),
        (_, None) => "local".into(),
        (_, Some(loc)) => format!("idb:{}/{}", loc.db, loc.store),
    }
}

fn allowed(rec: &ModelRecord, host: &str, who: &str, mode: AccessMode) -> bool {
    if rec.http_only {
        return false;
    }
    who == host
        || who == rec.owner
        || match mode {
            AccessMode::Read => rec.readers.contains(who),
            AccessMode::Write => rec.writers.contains(who),
        }
}

/// Re-derives the final state and denials of an enforcing replay directly
/// from the access rules.
pub fn model_enforce(events: &[AccessEvent]) -> ModelOutcome {
    let mut out = ModelOutcome::default();
    for e in events {
        let id = (e.site_id.clone(), store_id(e), e.key.clone());
        let (host, who, now) = (party(&e.host), party(&e.script), e.time);
        let value = e.value.clone().unwrap_or_default();
        let live = out
            .state
            .get(&id)
            .filter(|r| e.kind != StoreKind::Cookie || r.expires_at.is_none_or(|t| t > now))
            .cloned();
        match e.api {
            Api::HttpSetCookie => {
                let a = attrs(e);
                out.state.insert(
                    id,
                    ModelRecord {
                        value,
                        owner: who,
                        readers: a.readers.unwrap_or_default(),
                        writers: a.writers.unwrap_or_default(),
                        http_only: a.http_only,
                        expires_at: a.max_age.map(|m| now + m),
                    },
                );
            }
            Api::GetCookie | Api::GetItem | Api::IdbGet => {
                if let Some(rec) = live {
                    if !allowed(&rec, &host, &who, AccessMode::Read) {
                        out.denials.push((e.seq, AccessMode::Read));
                    }
                }
            }
            Api::SetCookie | Api::SetItem | Api::IdbPut => {
                let a = attrs(e);
                let expires_at = a.max_age.map(|m| now + m);
                match live {
                    None => {
                        out.state.insert(
                            id,
                            ModelRecord {
                                value,
                                owner: who,
                                readers: a.readers.unwrap_or_default(),
                                writers: a.writers.unwrap_or_default(),
                                http_only: false,
                                expires_at,
                            },
                        );
                    }
                    Some(mut rec) => {
                        if !allowed(&rec, &host, &who, AccessMode::Write) {
                            out.denials.push((e.seq, AccessMode::Write));
                            continue;
                        }
                        rec.value = value;
                        if e.kind == StoreKind::Cookie {
                            rec.expires_at = expires_at;
                            if who == host || who == rec.owner {
                                if let Some(r) = a.readers {
                                    rec.readers = r;
                                }
                                if let Some(w) = a.writers {
                                    rec.writers = w;
                                }
                            }
                        }
                        out.state.insert(id, rec);
                    }
                }
            }
            Api::SetReaders | Api::SetWriters => match out.state.get_mut(&id) {
                None => out.errors.push(e.seq),
                Some(rec) if who == host || who == rec.owner => {
                    if e.api == Api::SetReaders {
                        rec.readers = list(&value);
                    } else {
                        rec.writers = list(&value);
                    }
                }
                Some(_) => out.denials.push((e.seq, AccessMode::Write)),
            },
        }
    }
    out
}

fn names(set: &BTreeSet<Domain>) -> BTreeSet<String> {
    set.iter().map(party).collect()
}

/// The engine's final state in the model's shape.
pub fn engine_state(outcome: &ReplayOutcome) -> ModelState {
    let mut state = ModelState::new();
    for (site, s) in &outcome.sites {
        for rec in s.cookies.records() {
            state.insert(
                (site.clone(), "cookie".into(), rec.name.clone()),
                ModelRecord {
                    value: rec.value.clone(),
                    owner: party(&rec.owner),
                    readers: names(rec.label.readers()),
                    writers: names(rec.label.writers()),
                    http_only: rec.http_only,
                    expires_at: rec.expires_at,
                },
            );
        }
        for p in s.storage.partitions() {
            let store = match p.area() {
                StorageArea::Local => "local".to_string(),
                StorageArea::IndexedDb {
                    db_name,
                    store_name,
                } => format!("idb:{db_name}/{store_name}"),
            };
            for rec in p.records() {
                state.insert(
                    (site.clone(), store.clone(), rec.key.clone()),
                    ModelRecord {
                        value: rec.value.clone(),
                        owner: party(&rec.owner),
                        readers: names(rec.label.readers()),
                        writers: names(rec.label.writers()),
                        http_only: false,
                        expires_at: None,
                    },
                );
            }
        }
    }
    state
}

// ---------------------------------------------------------------------------
// Brute-force classification recount
// ---------------------------------------------------------------------------

fn creator_of(events: &[AccessEvent], target: &AccessEvent) -> String {
    events
        .iter()
        .find(|e| {
            e.mode().is_some()
                && e.site_id == target.site_id
                && e.kind == target.kind
                && e.object_key() == target.object_key()
        })
        .map(|e| party(&e.script))
        .unwrap()
}

fn category_of(creator: &str, accessor: &str, host: &str) -> Category {
    if creator == host {
        if accessor == host {
            Category::FpCreatedFpAccessed
        } else {
            Category::FpCreatedTpAccessed
        }
    } else if accessor == host {
        Category::TpCreatedFpAccessed
    } else if accessor == creator {
        Category::TpCreatedSameTpAccessed
    } else {
        Category::TpCreatedOtherTpAccessed
    }
}

/// Recounts every report cell from scratch with quadratic scans.
pub fn brute_force_report(events: &[AccessEvent]) -> ClassificationReport {
    let mut cells = Vec::new();
    for kind in StoreKind::ALL {
        for category in Category::ALL {
            for mode in [AccessMode::Read, AccessMode::Write] {
                let mut sites = BTreeSet::new();
                let mut objects = BTreeSet::new();
                let mut accesses = 0;
                for e in events {
                    if e.kind != kind || e.mode() != Some(mode) {
                        continue;
                    }
                    let creator = creator_of(events, e);
                    if category_of(&creator, &party(&e.script), &party(&e.host)) != category {
                        continue;
                    }
                    sites.insert(e.site_id.clone());
                    objects.insert((e.site_id.clone(), e.object_key().into_owned()));
                    accesses += 1;
                }
                cells.push(CategoryCell {
                    kind,
                    category,
                    mode,
                    websites: sites.len() as u64,
                    objects: objects.len() as u64,
                    accesses,
                });
            }
        }
    }
    let mut party_split = Vec::new();
    for kind in StoreKind::ALL {
        for (action, modes) in [
            ("read", vec![AccessMode::Read]),
            ("write", vec![AccessMode::Write]),
            ("all", vec![AccessMode::Read, AccessMode::Write]),
        ] {
            let (mut host, mut tp) = (0u64, 0u64);
            for e in events {
                if e.kind == kind && e.mode().is_some_and(|m| modes.contains(&m)) {
                    if party(&e.script) == party(&e.host) {
                        host += 1;
                    } else {
                        tp += 1;
                    }
                }
            }
            let total = host + tp;
            party_split.push(PartySplit {
                kind,
                action,
                host_accesses: host,
                third_party_accesses: tp,
                percent_third_party: (total > 0)
                    .then(|| Percent::from_hundredths(tp * 10_000 / total)),
            });
        }
    }
    ClassificationReport { cells, party_split }
}

// ---------------------------------------------------------------------------
// Cookie tossing trials
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TossingTrial {
    pub headers: Vec<String>,
    pub attempts: Vec<(usize, String)>,
}

fn domain_list() -> impl Strategy<Value = String> {
    vec(0..SCRIPTS.len(), 0..3).prop_map(|v| braced(&v))
}

fn attributes() -> impl Strategy<Value = String> {
    (
        proptest::option::of(domain_list()),
        proptest::option::of(domain_list()),
        prop_oneof![
            Just(""),
            Just("; SameSite=Strict"),
            Just("; SameSite=Lax"),
            Just("; SameSite=None")
        ],
        prop_oneof![Just(""), Just("; Secure")],
        prop_oneof![Just(""), Just("; Max-Age=60"), Just("; Max-Age=0")],
    )
        .prop_map(|(r, w, same_site, secure, age)| {
            let mut s = String::new();
            if let Some(r) = r {
                s.push_str(&format!("; Reader={r}"));
            }
            if let Some(w) = w {
                s.push_str(&format!("; Writer={w}"));
            }
            format!("{s}{same_site}{secure}{age}")
        })
}

/// A jar of labeled server cookies plus script write attempts against it.
pub fn tossing_trial() -> impl Strategy<Value = TossingTrial> {
    let header = (
        0..KEYS.len(),
        "[a-z0-9]{1,6}",
        0..SCRIPTS.len(),
        attributes(),
        proptest::bool::weighted(0.2),
    )
        .prop_map(|(key, value, owner, attrs, http_only)| {
            let attrs = attrs.replace("; Max-Age=0", "");
            let flag = if http_only { "; HttpOnly" } else { "" };
            format!(
                "{}={value}; Owner={}{attrs}{flag}",
                KEYS[key], SCRIPTS[owner]
            )
        });
    let attempt = (
        0..SCRIPTS.len(),
        0..KEYS.len(),
        "[a-z0-9]{0,6}",
        attributes(),
    )
        .prop_map(|(script, key, value, attrs)| (script, format!("{}={value}{attrs}", KEYS[key])));
    (vec(header, 1..6), vec(attempt, 1..12))
        .prop_map(|(headers, attempts)| TossingTrial { headers, attempts })
}

/// Runs a trial and counts unauthorized attempts that changed the jar, and
/// denials the rule oracle disagrees with.
pub fn tossing_violations(trial: &TossingTrial) -> usize {
    let host = d("fp.com");
    let mut jar = CookieJar::new();
    for header in &trial.headers {
        let rec = jar.parse_set_cookie(header, &host, 0).unwrap();
        jar.http_set_cookie(rec);
    }
    let mut violations = 0;
    for (script, assignment) in &trial.attempts {
        let script = d(SCRIPTS[*script]);
        let name = assignment.split('=').next().unwrap();
        let oracle = jar
            .get(&host, name)
            .filter(|rec| !rec.is_expired(0))
            .map(|rec| {
                !rec.http_only
                    && storagelabel::decide_access(
                        &rec.label,
                        &rec.owner,
                        &host,
                        &script,
                        AccessMode::Write,
                    )
                    .allowed()
            });
        let before = jar.clone();
        let outcome = jar.js_set_cookie(&host, &script, assignment, 0).unwrap();
        match oracle {
            Some(false) => {
                if outcome.applied || jar != before || jar.dump() != before.dump() {
                    violations += 1;
                }
            }
            Some(true) | None => {
                if !outcome.applied {
                    violations += 1;
                }
            }
        }
    }
    violations
}
