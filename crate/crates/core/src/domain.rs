//! Host normalization and party comparison.
//!
//! Every storage decision compares *parties*. By default a party is the
//! registrable domain (public suffix plus one label) of a host, resolved
//! against a bundled public-suffix snapshot. A resolver can instead be put in
//! exact-host mode, where each distinct host is its own party.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::{Arc, LazyLock};

use serde::{Serialize, Serializer};
use thiserror::Error;

/// The public-suffix snapshot compiled into the library.
pub const BUNDLED_SUFFIX_LIST: &str = include_str!("../data/public_suffix_list.dat");

static BUNDLED: LazyLock<Arc<SuffixList>> =
    LazyLock::new(|| Arc::new(SuffixList::parse(BUNDLED_SUFFIX_LIST)));

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("empty host in {input:?}")]
    EmptyHost { input: String },
    #[error("malformed URL {input:?}: {reason}")]
    MalformedUrl { input: String, reason: String },
    #[error("invalid host {input:?}: {reason}")]
    InvalidHost { input: String, reason: String },
}

#[derive(Debug, Error)]
#[error("cannot read suffix list {path}: {source}")]
pub struct SuffixListLoadError {
    pub path: String,
    #[source]
    pub source: std::io::Error,
}

/// How hosts are grouped into parties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartyGranularity {
    /// eTLD+1: `securepubads.g.doubleclick.net` and `doubleclick.net` are one party.
    #[default]
    Registrable,
    /// Every host is its own party.
    ExactHost,
}

/// A parsed public-suffix list.
///
/// Rules follow the publicsuffix.org format: one rule per line, `//` comments,
/// `*.` wildcards and `!` exceptions. Only the first whitespace-delimited token
/// of a line is read.
#[derive(Debug, Clone, Default)]
pub struct SuffixList {
    rules: HashSet<String>,
    wildcards: HashSet<String>,
    exceptions: HashSet<String>,
}

impl SuffixList {
    pub fn parse(text: &str) -> Self {
        let mut list = SuffixList::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            let Some(rule) = line.split_whitespace().next() else {
                continue;
            };
            let rule = rule.to_ascii_lowercase();
            if let Some(exception) = rule.strip_prefix('!') {
                list.exceptions.insert(exception.to_string());
            } else if let Some(base) = rule.strip_prefix("*.") {
                list.wildcards.insert(base.to_string());
            } else {
                list.rules.insert(rule);
            }
        }
        list
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SuffixListLoadError> {
        let path = path.as_ref();
        std::fs::read_to_string(path)
            .map(|text| Self::parse(&text))
            .map_err(|source| SuffixListLoadError {
                path: path.display().to_string(),
                source,
            })
    }

    pub fn len(&self) -> usize {
        self.rules.len() + self.wildcards.len() + self.exceptions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Byte offset in `host` where its public suffix starts.
    fn suffix_start(&self, host: &str) -> usize {
        // Offsets of every label start, leftmost first.
        let mut starts = vec![0];
        starts.extend(host.match_indices('.').map(|(i, _)| i + 1));

        for &start in &starts {
            if self.exceptions.contains(&host[start..]) {
                // An exception rule's suffix drops its leftmost label.
                return host[start..]
                    .find('.')
                    .map_or(host.len(), |dot| start + dot + 1);
            }
        }
        for (i, &start) in starts.iter().enumerate() {
            let candidate = &host[start..];
            if self.rules.contains(candidate) {
                return start;
            }
            if let Some(&parent) = starts.get(i + 1) {
                if self.wildcards.contains(&host[parent..]) {
                    return start;
                }
            }
        }
        // Implicit `*` rule: the last label is the suffix.
        *starts.last().unwrap_or(&0)
    }

    /// Public suffix plus one label, or the host itself when the host is a
    /// bare public suffix.
    pub fn registrable<'a>(&self, host: &'a str) -> &'a str {
        let suffix = self.suffix_start(host);
        if suffix == 0 {
            return host;
        }
        let before = &host[..suffix - 1];
        let start = before.rfind('.').map_or(0, |dot| dot + 1);
        &host[start..]
    }
}

/// A normalized host together with its party key.
///
/// Ordering, equality and hashing consider both fields. Use [`same_party`] (or
/// [`Domain::party`]) when comparing parties.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Domain {
    registrable: Arc<str>,
    raw_host: Arc<str>,
}

impl Domain {
    /// Normalizes with the bundled suffix list at registrable granularity.
    pub fn parse(host_or_url: &str) -> Result<Self, DomainError> {
        normalize_domain(host_or_url)
    }

    /// The party key: eTLD+1, or the whole host in exact-host mode.
    pub fn registrable(&self) -> &str {
        &self.registrable
    }

    pub fn raw_host(&self) -> &str {
        &self.raw_host
    }

    /// The party-level form of this domain (`raw_host == registrable`).
    /// Owners, partitions and label members are stored in this form.
    pub fn party(&self) -> Domain {
        Domain {
            registrable: self.registrable.clone(),
            raw_host: self.registrable.clone(),
        }
    }

    pub fn is_party_level(&self) -> bool {
        self.registrable == self.raw_host
    }
}

impl fmt::Debug for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_party_level() {
            write!(f, "Domain({})", self.registrable)
        } else {
            write!(f, "Domain({} <- {})", self.registrable, self.raw_host)
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.registrable)
    }
}

impl Serialize for Domain {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.registrable)
    }
}

/// Turns hosts and script URLs into [`Domain`]s.
#[derive(Clone)]
pub struct DomainResolver {
    suffixes: Arc<SuffixList>,
    granularity: PartyGranularity,
}

impl Default for DomainResolver {
    fn default() -> Self {
        Self {
            suffixes: BUNDLED.clone(),
            granularity: PartyGranularity::Registrable,
        }
    }
}

impl fmt::Debug for DomainResolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DomainResolver")
            .field("rules", &self.suffixes.len())
            .field("granularity", &self.granularity)
            .finish()
    }
}

impl DomainResolver {
    pub fn new(suffixes: SuffixList, granularity: PartyGranularity) -> Self {
        Self {
            suffixes: Arc::new(suffixes),
            granularity,
        }
    }

    pub fn with_granularity(mut self, granularity: PartyGranularity) -> Self {
        self.granularity = granularity;
        self
    }

    pub fn granularity(&self) -> PartyGranularity {
        self.granularity
    }

    pub fn suffix_list(&self) -> &SuffixList {
        &self.suffixes
    }

    pub fn normalize(&self, host_or_url: &str) -> Result<Domain, DomainError> {
        let host = extract_host(host_or_url)?;
        let party = match self.granularity {
            PartyGranularity::ExactHost => host.as_str(),
            PartyGranularity::Registrable if is_ip_literal(&host) => host.as_str(),
            PartyGranularity::Registrable => self.suffixes.registrable(&host),
        };
        let raw_host: Arc<str> = Arc::from(host.as_str());
        let registrable = if party.len() == host.len() {
            raw_host.clone()
        } else {
            Arc::from(party)
        };
        Ok(Domain {
            registrable,
            raw_host,
        })
    }
}

/// Normalizes a URL or bare host with the bundled suffix list.
pub fn normalize_domain(host_or_url: &str) -> Result<Domain, DomainError> {
    DomainResolver::default().normalize(host_or_url)
}

/// True iff both domains belong to the same party.
pub fn same_party(a: &Domain, b: &Domain) -> bool {
    a.registrable.eq_ignore_ascii_case(&b.registrable)
}

fn extract_host(input: &str) -> Result<String, DomainError> {
    let trimmed = input.trim();
    if trimmed.is_empty() {
        return Err(DomainError::EmptyHost {
            input: input.to_string(),
        });
    }

    let host = if trimmed.contains("://") || trimmed.starts_with("//") {
        let absolute = if trimmed.starts_with("//") {
            format!("https:{trimmed}")
        } else {
            trimmed.to_string()
        };
        let url = url::Url::parse(&absolute).map_err(|e| DomainError::MalformedUrl {
            input: input.to_string(),
            reason: e.to_string(),
        })?;
        match url.host_str() {
            Some(h) if !h.is_empty() => h.trim_start_matches('[').trim_end_matches(']').to_string(),
            _ => {
                return Err(DomainError::EmptyHost {
                    input: input.to_string(),
                })
            }
        }
    } else {
        // Bare host, possibly followed by a port or path.
        let end = trimmed.find(['/', '?', '#']).unwrap_or(trimmed.len());
        let authority = &trimmed[..end];
        let authority = authority.rsplit_once('@').map_or(authority, |(_, h)| h);
        match authority.rsplit_once(':') {
            Some((h, port)) if !h.contains(':') && port.bytes().all(|b| b.is_ascii_digit()) => {
                h.to_string()
            }
            _ => authority.to_string(),
        }
    };

    let host = host.trim_end_matches('.').to_ascii_lowercase();
    if host.is_empty() {
        return Err(DomainError::EmptyHost {
            input: input.to_string(),
        });
    }
    if host.contains(':') {
        // IPv6 literal; passed through untouched.
        return Ok(host);
    }
    if let Some(bad) = host
        .chars()
        .find(|c| !(c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')))
    {
        return Err(DomainError::InvalidHost {
            input: input.to_string(),
            reason: format!("unexpected character {bad:?}"),
        });
    }
    if host.split('.').any(str::is_empty) {
        return Err(DomainError::InvalidHost {
            input: input.to_string(),
            reason: "empty label".to_string(),
        });
    }
    Ok(host)
}

fn is_ip_literal(host: &str) -> bool {
    host.contains(':') || host.parse::<std::net::Ipv4Addr>().is_ok()
}
