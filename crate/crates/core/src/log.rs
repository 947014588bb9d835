//! Storage access logs: one JSON object per line, one line per API call.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Domain, DomainError, DomainResolver};
use crate::policy::AccessMode;

/// Field reference for the log format, printed by `check-log --schema`.
pub const LOG_SCHEMA: &str = r#"One JSON object per line. Blank lines are skipped.

  seq     integer   required  unique ordering key; lines are replayed in seq order
  api     string    required  GetCookie | SetCookie | GetItem | SetItem | IdbGet | IdbPut
                              | SetReaders | SetWriters | HttpSetCookie
  site    string    required  crawl page identifier; objects are scoped per site
  host    string    required  host page URL or hostname
  script  string    required  URL the calling script was loaded from; inline scripts
                              use the host page. For HttpSetCookie, the response origin.
  key     string    required  cookie name, storage key, or IndexedDB key
  value   string    optional  written value; required for SetCookie, SetItem, IdbPut,
                              HttpSetCookie. For SetReaders/SetWriters: "{a.com,b.com}"
  attrs   string    optional  cookie attributes after the first ';', e.g.
                              "Reader={cmp.com}; SameSite=Lax"
  kind    string    optional  local | idb, target store of SetReaders/SetWriters
                              (default local)
  db      string    idb only  IndexedDB database name
  store   string    idb only  IndexedDB object store name
  time    integer   optional  event time in seconds (default 0), used for cookie expiry

Example:
  {"seq":1,"api":"SetCookie","site":"s1","host":"https://fp.com/","script":"https://fp.com/fp.js","key":"__consent","value":"false","attrs":"Max-Age=2592000"}
"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Api {
    GetCookie,
    SetCookie,
    GetItem,
    SetItem,
    IdbGet,
    IdbPut,
    SetReaders,
    SetWriters,
    HttpSetCookie,
}

impl Api {
    pub const ALL: [Api; 9] = [
        Api::GetCookie,
        Api::SetCookie,
        Api::GetItem,
        Api::SetItem,
        Api::IdbGet,
        Api::IdbPut,
        Api::SetReaders,
        Api::SetWriters,
        Api::HttpSetCookie,
    ];

    pub fn from_token(token: &str) -> Option<Api> {
        Api::ALL.into_iter().find(|api| api.token() == token)
    }

    pub fn token(self) -> &'static str {
        match self {
            Api::GetCookie => "GetCookie",
            Api::SetCookie => "SetCookie",
            Api::GetItem => "GetItem",
            Api::SetItem => "SetItem",
            Api::IdbGet => "IdbGet",
            Api::IdbPut => "IdbPut",
            Api::SetReaders => "SetReaders",
            Api::SetWriters => "SetWriters",
            Api::HttpSetCookie => "HttpSetCookie",
        }
    }

    /// Read or write, for the six instrumented script APIs. Label APIs and
    /// HTTP-delivered cookies are not script data accesses.
    pub fn data_access(self) -> Option<AccessMode> {
        match self {
            Api::GetCookie | Api::GetItem | Api::IdbGet => Some(AccessMode::Read),
            Api::SetCookie | Api::SetItem | Api::IdbPut => Some(AccessMode::Write),
            Api::SetReaders | Api::SetWriters | Api::HttpSetCookie => None,
        }
    }

    pub fn is_read(self) -> bool {
        self.data_access() == Some(AccessMode::Read)
    }

    fn needs_value(self) -> bool {
        matches!(
            self,
            Api::SetCookie
                | Api::SetItem
                | Api::IdbPut
                | Api::HttpSetCookie
                | Api::SetReaders
                | Api::SetWriters
        )
    }
}

impl fmt::Display for Api {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreKind {
    Cookie,
    Local,
    Idb,
}

impl StoreKind {
    pub const ALL: [StoreKind; 3] = [StoreKind::Cookie, StoreKind::Local, StoreKind::Idb];

    pub fn name(self) -> &'static str {
        match self {
            StoreKind::Cookie => "cookie",
            StoreKind::Local => "local",
            StoreKind::Idb => "idb",
        }
    }
}

impl fmt::Display for StoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct IdbLocation {
    pub db: String,
    pub store: String,
}

/// One logged storage API invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessEvent {
    pub seq: u64,
    pub api: Api,
    pub kind: StoreKind,
    pub site_id: String,
    pub host: Domain,
    pub script: Domain,
    pub key: String,
    pub idb: Option<IdbLocation>,
    pub value: Option<String>,
    pub attrs: Option<String>,
    pub time: i64,
}

/// Separator between database, store and key in IndexedDB object keys.
pub const IDB_KEY_SEPARATOR: char = '∥';

impl AccessEvent {
    /// Cookie name, storage key, or `db∥store∥key`.
    pub fn object_key(&self) -> Cow<'_, str> {
        match &self.idb {
            None => Cow::Borrowed(&self.key),
            Some(loc) => Cow::Owned(format!(
                "{}{sep}{}{sep}{}",
                loc.db,
                loc.store,
                self.key,
                sep = IDB_KEY_SEPARATOR
            )),
        }
    }

    pub fn mode(&self) -> Option<AccessMode> {
        self.api.data_access()
    }

    /// `name=value[; attrs]`, the string a cookie write carries.
    pub fn cookie_string(&self) -> String {
        let mut s = format!("{}={}", self.key, self.value.as_deref().unwrap_or(""));
        if let Some(attrs) = self.attrs.as_deref().filter(|a| !a.trim().is_empty()) {
            s.push_str("; ");
            s.push_str(attrs);
        }
        s
    }

    /// The log line for this event. Hosts are written as raw hosts.
    pub fn to_log_line(&self) -> String {
        let line = LogLine {
            seq: Some(self.seq),
            api: Some(self.api.token().to_string()),
            site: Some(self.site_id.clone()),
            host: Some(self.host.raw_host().to_string()),
            script: Some(self.script.raw_host().to_string()),
            key: Some(self.key.clone()),
            value: self.value.clone(),
            attrs: self.attrs.clone(),
            kind: matches!(self.api, Api::SetReaders | Api::SetWriters)
                .then(|| self.kind.name().to_string()),
            db: self.idb.as_ref().map(|l| l.db.clone()),
            store: self.idb.as_ref().map(|l| l.store.clone()),
            time: (self.time != 0).then_some(self.time),
        };
        serde_json::to_string(&line).expect("log line serializes")
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogLine {
    #[serde(skip_serializing_if = "Option::is_none")]
    seq: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    api: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    site: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    host: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    script: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    key: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    attrs: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    db: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    store: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    time: Option<i64>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LogErrorKind {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("unknown api {0:?}")]
    UnknownApi(String),
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("field `{field}`: {source}")]
    InvalidDomain {
        field: &'static str,
        #[source]
        source: DomainError,
    },
    #[error("seq {0} is not strictly increasing (already used)")]
    NonMonotoneSeq(u64),
    #[error("read failed: {0}")]
    Io(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {kind}")]
pub struct LogError {
    pub line: usize,
    pub kind: LogErrorKind,
}

/// Events in seq order plus every per-line error.
#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub events: Vec<AccessEvent>,
    pub errors: Vec<LogError>,
}

impl ParsedLog {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

struct LineParser<'r> {
    resolver: &'r DomainResolver,
    cache: HashMap<String, Domain>,
}

impl LineParser<'_> {
    fn domain(&mut self, field: &'static str, raw: &str) -> Result<Domain, LogErrorKind> {
        if let Some(d) = self.cache.get(raw) {
            return Ok(d.clone());
        }
        let d = self
            .resolver
            .normalize(raw)
            .map_err(|source| LogErrorKind::InvalidDomain { field, source })?;
        if self.cache.len() > 100_000 {
            self.cache.clear();
        }
        self.cache.insert(raw.to_string(), d.clone());
        Ok(d)
    }

    fn parse(&mut self, text: &str) -> Result<AccessEvent, LogErrorKind> {
        let line: LogLine =
            serde_json::from_str(text).map_err(|e| LogErrorKind::Malformed(e.to_string()))?;
        let seq = line.seq.ok_or(LogErrorKind::MissingField("seq"))?;
        let api_token = line.api.ok_or(LogErrorKind::MissingField("api"))?;
        let api = Api::from_token(&api_token).ok_or(LogErrorKind::UnknownApi(api_token))?;
        let site_id = line.site.ok_or(LogErrorKind::MissingField("site"))?;
        let host = line.host.ok_or(LogErrorKind::MissingField("host"))?;
        let script = line.script.ok_or(LogErrorKind::MissingField("script"))?;
        let key = line.key.ok_or(LogErrorKind::MissingField("key"))?;
        if api.needs_value() && line.value.is_none() {
            return Err(LogErrorKind::MissingField("value"));
        }

        let kind = match api {
            Api::GetCookie | Api::SetCookie | Api::HttpSetCookie => StoreKind::Cookie,
            Api::GetItem | Api::SetItem => StoreKind::Local,
            Api::IdbGet | Api::IdbPut => StoreKind::Idb,
            Api::SetReaders | Api::SetWriters => match line.kind.as_deref() {
                None | Some("local") => StoreKind::Local,
                Some("idb") => StoreKind::Idb,
                Some(other) => {
                    return Err(LogErrorKind::InvalidField {
                        field: "kind",
                        reason: format!("expected local or idb, got {other:?}"),
                    })
                }
            },
        };
        let idb = match kind {
            StoreKind::Idb => Some(IdbLocation {
                db: line.db.ok_or(LogErrorKind::MissingField("db"))?,
                store: line.store.ok_or(LogErrorKind::MissingField("store"))?,
            }),
            _ => None,
        };

        Ok(AccessEvent {
            seq,
            api,
            kind,
            site_id,
            host: self.domain("host", &host)?,
            script: self.domain("script", &script)?,
            key,
            idb,
            value: line.value,
            attrs: line.attrs,
            time: line.time.unwrap_or(0),
        })
    }
}

/// Parses a whole log. Every well-formed line yields an event; bad lines are
/// reported by line number and skipped. Events come back sorted by seq, and a
/// seq seen twice is an error on the later line.
pub fn parse_event_log<R: BufRead>(reader: R, resolver: &DomainResolver) -> ParsedLog {
    let mut parser = LineParser {
        resolver,
        cache: HashMap::new(),
    };
    let mut parsed = ParsedLog::default();
    let mut lines_of: Vec<(usize, AccessEvent)> = Vec::new();

    for (index, line) in reader.lines().enumerate() {
        let number = index + 1;
        let text = match line {
            Ok(text) => text,
            Err(e) => {
                parsed.errors.push(LogError {
                    line: number,
                    kind: LogErrorKind::Io(e.to_string()),
                });
                break;
            }
        };
        if text.trim().is_empty() {
            continue;
        }
        match parser.parse(&text) {
            Ok(event) => lines_of.push((number, event)),
            Err(kind) => parsed.errors.push(LogError { line: number, kind }),
        }
    }

    let already_sorted = lines_of.windows(2).all(|w| w[0].1.seq < w[1].1.seq);
    if !already_sorted {
        lines_of.sort_by_key(|(line, event)| (event.seq, *line));
    }
    let mut last_seq = None;
    for (line, event) in lines_of {
        if last_seq == Some(event.seq) {
            parsed.errors.push(LogError {
                line,
                kind: LogErrorKind::NonMonotoneSeq(event.seq),
            });
            continue;
        }
        last_seq = Some(event.seq);
        parsed.events.push(event);
    }
    parsed.errors.sort_by_key(|e| e.line);
    parsed
}

pub fn parse_event_log_str(text: &str, resolver: &DomainResolver) -> ParsedLog {
    parse_event_log(text.as_bytes(), resolver)
}
