//! First-/third-party classification of logged storage accesses.
//!
//! An object's creator is the script of the first event that touches it on a
//! site, read or write. Each later access is then placed in one of five
//! categories by comparing creator and accessor with the host page.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::domain::{same_party, Domain};
use crate::log::{AccessEvent, StoreKind};
use crate::policy::AccessMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    FpCreatedFpAccessed,
    FpCreatedTpAccessed,
    TpCreatedFpAccessed,
    TpCreatedSameTpAccessed,
    TpCreatedOtherTpAccessed,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::FpCreatedFpAccessed,
        Category::FpCreatedTpAccessed,
        Category::TpCreatedFpAccessed,
        Category::TpCreatedSameTpAccessed,
        Category::TpCreatedOtherTpAccessed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::FpCreatedFpAccessed => "fp-created-fp-accessed",
            Category::FpCreatedTpAccessed => "fp-created-tp-accessed",
            Category::TpCreatedFpAccessed => "tp-created-fp-accessed",
            Category::TpCreatedSameTpAccessed => "tp-created-same-tp-accessed",
            Category::TpCreatedOtherTpAccessed => "tp-created-other-tp-accessed",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The category of an access by `accessor` to an object created by `creator`
/// on page `host`.
pub fn categorize(creator: &Domain, accessor: &Domain, host: &Domain) -> Category {
    match (same_party(creator, host), same_party(accessor, host)) {
        (true, true) => Category::FpCreatedFpAccessed,
        (true, false) => Category::FpCreatedTpAccessed,
        (false, true) => Category::TpCreatedFpAccessed,
        (false, false) if same_party(creator, accessor) => Category::TpCreatedSameTpAccessed,
        (false, false) => Category::TpCreatedOtherTpAccessed,
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("undefined ratio: both counts are zero")]
pub struct UndefinedRatio;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    /// Drop digits past the second decimal.
    #[default]
    Truncate,
    HalfUp,
}

/// A percentage with two decimals, held exactly as hundredths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Percent(u64);

impl Percent {
    pub fn from_hundredths(hundredths: u64) -> Self {
        Percent(hundredths)
    }

    /// `100 * part / whole` at two decimals.
    pub fn ratio(part: u64, whole: u64, rounding: Rounding) -> Result<Self, UndefinedRatio> {
        if whole == 0 {
            return Err(UndefinedRatio);
        }
        let (part, whole) = (u128::from(part), u128::from(whole));
        let hundredths = match rounding {
            Rounding::Truncate => part * 10_000 / whole,
            Rounding::HalfUp => (part * 20_000 + whole) / (2 * whole),
        };
        Ok(Percent(hundredths as u64))
    }

    pub fn hundredths(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

impl Serialize for Percent {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

/// Share of third-party accesses, `100 * tp / (host + tp)`.
pub fn percent_third_party(host_count: u64, tp_count: u64) -> Result<Percent, UndefinedRatio> {
    Percent::ratio(tp_count, host_count + tp_count, Rounding::default())
}

/// Site-scoped identity of a storage object.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectId {
    pub site_id: String,
    pub kind: StoreKind,
    pub key: String,
}

impl ObjectId {
    pub fn of(event: &AccessEvent) -> Self {
        ObjectId {
            site_id: event.site_id.clone(),
            kind: event.kind,
            key: event.object_key().into_owned(),
        }
    }
}

pub type Creators = HashMap<ObjectId, Domain>;

/// Creator of every object: the script of the first data access touching it.
/// Label calls and HTTP-delivered cookies are not script accesses and are
/// not considered.
pub fn attribute_creators(events: &[AccessEvent]) -> Creators {
    let mut creators = Creators::new();
    for event in events.iter().filter(|e| e.mode().is_some()) {
        creators
            .entry(ObjectId::of(event))
            .or_insert_with(|| event.script.clone());
    }
    creators
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("event seq {seq}: object {key:?} on site {site_id:?} has no creator")]
pub struct MissingCreator {
    pub seq: u64,
    pub site_id: String,
    pub key: String,
}

/// Category of each event; `None` for events that are not data accesses.
pub fn classify(
    events: &[AccessEvent],
    creators: &Creators,
) -> Result<Vec<Option<Category>>, MissingCreator> {
    events
        .iter()
        .map(|event| {
            if event.mode().is_none() {
                return Ok(None);
            }
            let id = ObjectId::of(event);
            let creator = creators.get(&id).ok_or_else(|| MissingCreator {
                seq: event.seq,
                site_id: id.site_id.clone(),
                key: id.key.clone(),
            })?;
            Ok(Some(categorize(creator, &event.script, &event.host)))
        })
        .collect()
}

/// Tallies classified events into a report.
pub fn aggregate(events: &[AccessEvent], categories: &[Option<Category>]) -> ClassificationReport {
    assert_eq!(
        events.len(),
        categories.len(),
        "one category slot per event"
    );
    let mut tally = Tally::default();
    for (event, category) in events.iter().zip(categories) {
        if let Some(category) = category {
            tally.record(event, *category);
        }
    }
    tally.finish()
}

#[derive(Default)]
struct Interner(HashMap<String, u32>);

impl Interner {
    fn id(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.0.get(s) {
            return id;
        }
        let id = self.0.len() as u32;
        self.0.insert(s.to_string(), id);
        id
    }
}

#[derive(Default)]
struct CellTally {
    sites: HashSet<u32>,
    objects: HashSet<(u32, u32)>,
    accesses: u64,
}

#[derive(Default)]
struct Tally {
    site_ids: Interner,
    keys: Interner,
    cells: HashMap<(StoreKind, Category, AccessMode), CellTally>,
    split: HashMap<(StoreKind, AccessMode), (u64, u64)>,
}

impl Tally {
    fn record(&mut self, event: &AccessEvent, category: Category) {
        let site = self.site_ids.id(&event.site_id);
        let key = self.keys.id(&event.object_key());
        self.record_interned(event, category, site, key);
    }

    fn record_interned(&mut self, event: &AccessEvent, category: Category, site: u32, key: u32) {
        let Some(mode) = event.mode() else { return };
        let cell = self.cells.entry((event.kind, category, mode)).or_default();
        cell.sites.insert(site);
        cell.objects.insert((site, key));
        cell.accesses += 1;
        let split = self.split.entry((event.kind, mode)).or_default();
        if same_party(&event.script, &event.host) {
            split.0 += 1;
        } else {
            split.1 += 1;
        }
    }

    fn finish(self) -> ClassificationReport {
        let mut cells = Vec::with_capacity(30);
        for kind in StoreKind::ALL {
            for category in Category::ALL {
                for mode in [AccessMode::Read, AccessMode::Write] {
                    let tally = self.cells.get(&(kind, category, mode));
                    cells.push(CategoryCell {
                        kind,
                        category,
                        mode,
                        websites: tally.map_or(0, |t| t.sites.len() as u64),
                        objects: tally.map_or(0, |t| t.objects.len() as u64),
                        accesses: tally.map_or(0, |t| t.accesses),
                    });
                }
            }
        }
        let mut party_split = Vec::with_capacity(9);
        for kind in StoreKind::ALL {
            let read = self
                .split
                .get(&(kind, AccessMode::Read))
                .copied()
                .unwrap_or_default();
            let write = self
                .split
                .get(&(kind, AccessMode::Write))
                .copied()
                .unwrap_or_default();
            let all = (read.0 + write.0, read.1 + write.1);
            for (action, (host, tp)) in [("read", read), ("write", write), ("all", all)] {
                party_split.push(PartySplit {
                    kind,
                    action,
                    host_accesses: host,
                    third_party_accesses: tp,
                    percent_third_party: percent_third_party(host, tp).ok(),
                });
            }
        }
        ClassificationReport { cells, party_split }
    }
}

/// Single-pass classifier: attributes creators and tallies as events arrive.
/// Feed events in seq order.
#[derive(Default)]
pub struct Classifier {
    tally: Tally,
    creators: HashMap<(u32, StoreKind, u32), Domain>,
}

impl Classifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, event: &AccessEvent) -> Option<Category> {
        event.mode()?;
        let site = self.tally.site_ids.id(&event.site_id);
        let key = self.tally.keys.id(&event.object_key());
        let creator = self
            .creators
            .entry((site, event.kind, key))
            .or_insert_with(|| event.script.clone());
        let category = categorize(creator, &event.script, &event.host);
        self.tally.record_interned(event, category, site, key);
        Some(category)
    }

    pub fn finish(self) -> ClassificationReport {
        self.tally.finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CategoryCell {
    pub kind: StoreKind,
    pub category: Category,
    pub mode: AccessMode,
    /// Distinct site ids.
    pub websites: u64,
    /// Distinct (site, object) pairs.
    pub objects: u64,
    pub accesses: u64,
}

/// Host-script versus third-party-script accesses for one store kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartySplit {
    pub kind: StoreKind,
    /// `read`, `write`, or `all`.
    pub action: &'static str,
    pub host_accesses: u64,
    pub third_party_accesses: u64,
    pub percent_third_party: Option<Percent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassificationReport {
    /// Every kind × category × mode combination, zeros included, in a fixed order.
    pub cells: Vec<CategoryCell>,
    pub party_split: Vec<PartySplit>,
}

impl ClassificationReport {
    pub fn empty() -> Self {
        Tally::default().finish()
    }

    pub fn cell(&self, kind: StoreKind, category: Category, mode: AccessMode) -> &CategoryCell {
        self.cells
            .iter()
            .find(|c| c.kind == kind && c.category == category && c.mode == mode)
            .expect("report holds every cell")
    }

    pub fn split(&self, kind: StoreKind, action: &str) -> &PartySplit {
        self.party_split
            .iter()
            .find(|s| s.kind == kind && s.action == action)
            .expect("report holds every split")
    }

    /// Accesses of `kind` summed over categories and modes.
    pub fn kind_total(&self, kind: StoreKind) -> u64 {
        self.cells
            .iter()
            .filter(|c| c.kind == kind)
            .map(|c| c.accesses)
            .sum()
    }

    pub fn total_accesses(&self) -> u64 {
        self.cells.iter().map(|c| c.accesses).sum()
    }

    /// Adds a report computed over a disjoint set of sites.
    pub fn merge(&mut self, other: &ClassificationReport) {
        for (mine, theirs) in self.cells.iter_mut().zip(&other.cells) {
            mine.websites += theirs.websites;
            mine.objects += theirs.objects;
            mine.accesses += theirs.accesses;
        }
        for (mine, theirs) in self.party_split.iter_mut().zip(&other.party_split) {
            mine.host_accesses += theirs.host_accesses;
            mine.third_party_accesses += theirs.third_party_accesses;
            mine.percent_third_party =
                percent_third_party(mine.host_accesses, mine.third_party_accesses).ok();
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("kind\tcategory\tmode\twebsites\tobjects\taccesses\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                c.kind, c.category, c.mode, c.websites, c.objects, c.accesses
            ));
        }
        out.push_str("\nkind\taction\thost_accesses\tthird_party_accesses\tpercent_third_party\n");
        for s in &self.party_split {
            let pct = s
                .percent_third_party
                .map_or_else(|| "-".to_string(), |p| p.to_string());
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                s.kind, s.action, s.host_accesses, s.third_party_accesses, pct
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainResolver;
    use crate::log::{parse_event_log_str, Api};

    fn d(s: &str) -> Domain {
        Domain::parse(s).unwrap()
    }

    fn ev(seq: u64, api: Api, site: &str, host: &str, script: &str, key: &str) -> AccessEvent {
        let kind = match api {
            Api::GetItem | Api::SetItem => StoreKind::Local,
            Api::IdbGet | Api::IdbPut => StoreKind::Idb,
            _ => StoreKind::Cookie,
        };
        AccessEvent {
            seq,
            api,
            kind,
            site_id: site.into(),
            host: d(host),
            script: d(script),
            key: key.into(),
            idb: None,
            value: Some("v".into()),
            attrs: None,
            time: 0,
        }
    }

    #[test]
    fn category_table() {
        let fp = d("fp.com");
        assert_eq!(
            categorize(&fp, &d("googletagmanager.com"), &fp),
            Category::FpCreatedTpAccessed
        );
        assert_eq!(
            categorize(&d("ad.com"), &d("ad.com"), &fp),
            Category::TpCreatedSameTpAccessed
        );
        let blizzcon = d("blizzcon.com");
        assert_eq!(
            categorize(&d("connect.facebook.net"), &blizzcon, &blizzcon),
            Category::TpCreatedFpAccessed
        );
        assert_eq!(
            categorize(&d("a.com"), &d("b.com"), &fp),
            Category::TpCreatedOtherTpAccessed
        );
        assert_eq!(
            categorize(&fp, &d("www.fp.com"), &fp),
            Category::FpCreatedFpAccessed
        );
    }

    #[test]
    fn creators() {
        let events = [
            ev(1, Api::SetItem, "s1", "fp.com", "fp.com", "k"),
            ev(2, Api::GetItem, "s1", "fp.com", "ad.com", "k"),
            ev(3, Api::GetCookie, "s1", "fp.com", "ad.com", "c"),
            ev(4, Api::SetCookie, "s1", "fp.com", "fp.com", "c"),
            ev(5, Api::GetItem, "s2", "fp.com", "ad.com", "k"),
        ];
        let c = attribute_creators(&events);
        let id = |site: &str, kind, key: &str| ObjectId {
            site_id: site.into(),
            kind,
            key: key.into(),
        };
        assert_eq!(c[&id("s1", StoreKind::Local, "k")], d("fp.com"));
        assert_eq!(c[&id("s1", StoreKind::Cookie, "c")], d("ad.com"));
        assert_eq!(c[&id("s2", StoreKind::Local, "k")], d("ad.com"));
    }

    #[test]
    fn http_cookies_do_not_create() {
        let events = [
            ev(1, Api::HttpSetCookie, "s", "fp.com", "fp.com", "c"),
            ev(2, Api::GetCookie, "s", "fp.com", "ad.com", "c"),
        ];
        let cats = classify(&events, &attribute_creators(&events)).unwrap();
        assert_eq!(cats, [None, Some(Category::TpCreatedSameTpAccessed)]);
    }

    #[test]
    fn missing_creator_is_an_error() {
        let events = [ev(9, Api::GetItem, "s", "fp.com", "ad.com", "k")];
        let err = classify(&events, &Creators::new()).unwrap_err();
        assert_eq!(err.seq, 9);
    }

    #[test]
    fn one_create_two_third_party_reads() {
        let events = [
            ev(1, Api::SetCookie, "s", "fp.com", "fp.com", "c"),
            ev(2, Api::GetCookie, "s", "fp.com", "t.com", "c"),
            ev(3, Api::GetCookie, "s", "fp.com", "u.com", "c"),
        ];
        let cats = classify(&events, &attribute_creators(&events)).unwrap();
        let report = aggregate(&events, &cats);
        let cell = report.cell(
            StoreKind::Cookie,
            Category::FpCreatedTpAccessed,
            AccessMode::Read,
        );
        assert_eq!((cell.websites, cell.objects, cell.accesses), (1, 1, 2));
        let own = report.cell(
            StoreKind::Cookie,
            Category::FpCreatedFpAccessed,
            AccessMode::Write,
        );
        assert_eq!(own.accesses, 1);
        assert_eq!(report.kind_total(StoreKind::Cookie), 3);
        let split = report.split(StoreKind::Cookie, "read");
        assert_eq!((split.host_accesses, split.third_party_accesses), (0, 2));
        assert_eq!(
            split.percent_third_party,
            Some(Percent::from_hundredths(10_000))
        );
    }

    #[test]
    fn empty_report_is_all_zero() {
        let report = aggregate(&[], &[]);
        assert_eq!(report, ClassificationReport::empty());
        assert_eq!(report.cells.len(), 30);
        assert!(report
            .cells
            .iter()
            .all(|c| c.accesses == 0 && c.websites == 0));
        assert!(report
            .party_split
            .iter()
            .all(|s| s.percent_third_party.is_none()));
    }

    #[test]
    fn streaming_matches_batch() {
        let text = include_str!("../tests/fixtures/listings.jsonl");
        let log = parse_event_log_str(text, &DomainResolver::default());
        let cats = classify(&log.events, &attribute_creators(&log.events)).unwrap();
        let batch = aggregate(&log.events, &cats);
        let mut streaming = Classifier::new();
        let streamed: Vec<_> = log.events.iter().map(|e| streaming.observe(e)).collect();
        assert_eq!(streamed, cats);
        assert_eq!(streaming.finish(), batch);
    }

    #[test]
    fn percent_arithmetic() {
        assert_eq!(
            percent_third_party(282_449, 2_136_907).unwrap().to_string(),
            "88.32"
        );
        assert_eq!(
            percent_third_party(43_938, 226_733).unwrap().to_string(),
            "83.76"
        );
        assert_eq!(percent_third_party(5, 0).unwrap().to_string(), "0.00");
        assert_eq!(
            percent_third_party(282_449 + 102_576, 2_136_907 + 1_271_022)
                .unwrap()
                .to_string(),
            "89.84"
        );
        assert_eq!(percent_third_party(0, 0), Err(UndefinedRatio));
        assert_eq!(
            Percent::ratio(2, 3, Rounding::HalfUp).unwrap().to_string(),
            "66.67"
        );
        assert_eq!(
            Percent::ratio(2, 3, Rounding::Truncate)
                .unwrap()
                .to_string(),
            "66.66"
        );
        assert_eq!(
            Percent::ratio(1, 8, Rounding::HalfUp).unwrap().to_string(),
            "12.50"
        );
        assert_eq!(
            Percent::ratio(1, 20_000, Rounding::HalfUp)
                .unwrap()
                .to_string(),
            "0.01"
        );
    }

    #[test]
    fn merge_disjoint_shards() {
        let a = [
            ev(1, Api::SetItem, "s1", "fp.com", "fp.com", "k"),
            ev(2, Api::GetItem, "s1", "fp.com", "ad.com", "k"),
        ];
        let b = [ev(3, Api::GetItem, "s2", "fp.com", "ad.com", "k")];
        let all: Vec<_> = a.iter().chain(&b).cloned().collect();
        let report = |events: &[AccessEvent]| {
            aggregate(
                events,
                &classify(events, &attribute_creators(events)).unwrap(),
            )
        };
        let mut merged = report(&a);
        merged.merge(&report(&b));
        assert_eq!(merged, report(&all));
    }
}
