//! Least-privilege labels for browser storage.
//!
//! Every cookie, localStorage item and IndexedDB record carries an owner and
//! a label: the domains allowed to read it and the domains allowed to write
//! it. Scripts of the host page's party and of the owner's party keep full
//! access; any other script needs to be named in the label. Alongside the
//! engines, the crate parses storage access logs, classifies accesses as
//! first- or third-party, and replays logs to report what enforcement breaks.

pub mod breakage;
pub mod classify;
pub mod cookie;
pub mod domain;
pub mod log;
pub mod policy;
pub mod replay;
pub mod webstorage;

pub use breakage::{
    blocklist_coverage, breakage_report, match_blocklist, Blocklist, BlocklistError, BreakageReport,
};
pub use classify::{
    aggregate, attribute_creators, categorize, classify, percent_third_party, Category,
    ClassificationReport, Classifier, Percent, Rounding, UndefinedRatio,
};
pub use cookie::{CookieJar, CookieParseError, CookieRecord, SameSite};
pub use domain::{
    normalize_domain, same_party, Domain, DomainError, DomainResolver, PartyGranularity, SuffixList,
};
pub use log::{parse_event_log, parse_event_log_str, AccessEvent, Api, ParsedLog, StoreKind};
pub use policy::{
    decide_access, AccessMode, Decision, DecisionReason, Label, ReadResult, WriteOutcome,
};
pub use replay::{replay, replay_with, DenialEvent, ReplayMode, ReplayOutcome, Replayer};
pub use webstorage::{StorageArea, StorageError, StoragePartition, WebStorage};
