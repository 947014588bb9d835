//! `Set-Cookie` grammar with the `Reader={..}` / `Writer={..}` extensions.

use std::collections::BTreeSet;
use std::time::{Duration, UNIX_EPOCH};

use thiserror::Error;

use super::{CookieRecord, SameSite};
use crate::domain::{Domain, DomainError, DomainResolver};
use crate::policy::{braced, Label};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CookieParseError {
    #[error("name-value pair {0:?} has no '='")]
    MissingEquals(String),
    #[error("cookie name {0:?} is not a token")]
    InvalidName(String),
    #[error("cookie value {0:?} contains a control character")]
    InvalidValue(String),
    #[error("attribute {attribute}: unbalanced braces in {value:?}")]
    UnbalancedBraces { attribute: String, value: String },
    #[error("attribute {attribute}: expected a {{domain,...}} list, got {value:?}")]
    MalformedDomainList { attribute: String, value: String },
    #[error("attribute Max-Age: {0:?} is not an integer")]
    InvalidMaxAge(String),
    #[error("attribute {attribute}: {source}")]
    InvalidDomain {
        attribute: String,
        #[source]
        source: DomainError,
    },
}

impl CookieParseError {
    /// The attribute at fault, when the error concerns one.
    pub fn attribute(&self) -> Option<&str> {
        match self {
            CookieParseError::UnbalancedBraces { attribute, .. }
            | CookieParseError::MalformedDomainList { attribute, .. }
            | CookieParseError::InvalidDomain { attribute, .. } => Some(attribute),
            CookieParseError::InvalidMaxAge(_) => Some("Max-Age"),
            _ => None,
        }
    }
}

/// A parsed header before it is bound to a jar. Reader/Writer stay `None`
/// when the attribute was absent, which matters on the script write path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ParsedCookie {
    pub name: String,
    pub value: String,
    pub domain: Option<Domain>,
    pub owner: Option<Domain>,
    pub secure: bool,
    pub http_only: bool,
    pub same_site: SameSite,
    pub expires_at: Option<i64>,
    pub readers: Option<BTreeSet<Domain>>,
    pub writers: Option<BTreeSet<Domain>>,
}

fn is_token_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || "!#$%&'*+-.^_`|~".contains(c)
}

/// Splits the attribute section on `;`, ignoring separators inside braces.
fn split_attributes(section: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, c) in section.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => depth = depth.saturating_sub(1),
            ';' if depth == 0 => {
                parts.push(&section[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&section[start..]);
    parts
}

/// Parses a braced domain list such as `{a.com, b.com}` into party-level
/// domains. `attribute` names the list in errors.
pub fn parse_domain_list(
    attribute: &str,
    raw: &str,
    resolver: &DomainResolver,
) -> Result<BTreeSet<Domain>, CookieParseError> {
    let value = raw.trim();
    let opens = value.matches('{').count();
    let closes = value.matches('}').count();
    if opens != closes {
        return Err(CookieParseError::UnbalancedBraces {
            attribute: attribute.to_string(),
            value: raw.to_string(),
        });
    }
    let inner = value
        .strip_prefix('{')
        .and_then(|v| v.strip_suffix('}'))
        .filter(|inner| !inner.contains(['{', '}']))
        .ok_or_else(|| CookieParseError::MalformedDomainList {
            attribute: attribute.to_string(),
            value: raw.to_string(),
        })?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|member| !member.is_empty())
        .map(|member| {
            resolver
                .normalize(member)
                .map(|d| d.party())
                .map_err(|source| CookieParseError::InvalidDomain {
                    attribute: attribute.to_string(),
                    source,
                })
        })
        .collect()
}

fn parse_domain_attr(
    attribute: &str,
    raw: &str,
    resolver: &DomainResolver,
) -> Result<Option<Domain>, CookieParseError> {
    let raw = raw.trim().trim_start_matches('.');
    if raw.is_empty() {
        return Ok(None);
    }
    resolver
        .normalize(raw)
        .map(|d| Some(d.party()))
        .map_err(|source| CookieParseError::InvalidDomain {
            attribute: attribute.to_string(),
            source,
        })
}

fn http_date_to_secs(raw: &str) -> Option<i64> {
    let t = httpdate::parse_http_date(raw.trim()).ok()?;
    t.duration_since(UNIX_EPOCH)
        .ok()
        .and_then(|d| i64::try_from(d.as_secs()).ok())
}

pub(crate) fn format_http_date(secs: i64) -> String {
    let secs = u64::try_from(secs).unwrap_or(0);
    httpdate::fmt_http_date(UNIX_EPOCH + Duration::from_secs(secs))
}

pub(crate) fn parse_cookie_string(
    header: &str,
    now: i64,
    resolver: &DomainResolver,
) -> Result<ParsedCookie, CookieParseError> {
    let (pair, attributes) = header.split_once(';').unwrap_or((header, ""));
    let (name, value) = pair
        .split_once('=')
        .ok_or_else(|| CookieParseError::MissingEquals(pair.trim().to_string()))?;
    let name = name.trim();
    if name.is_empty() || !name.chars().all(is_token_char) {
        return Err(CookieParseError::InvalidName(name.to_string()));
    }
    let value = value.trim();
    if value.chars().any(|c| c.is_control()) {
        return Err(CookieParseError::InvalidValue(value.to_string()));
    }

    let mut parsed = ParsedCookie {
        name: name.to_string(),
        value: value.to_string(),
        domain: None,
        owner: None,
        secure: false,
        http_only: false,
        same_site: SameSite::Unset,
        expires_at: None,
        readers: None,
        writers: None,
    };
    let mut max_age: Option<i64> = None;
    let mut expires: Option<i64> = None;

    for attr in split_attributes(attributes) {
        let attr = attr.trim();
        if attr.is_empty() {
            continue;
        }
        let (key, val) = attr.split_once('=').unwrap_or((attr, ""));
        let key = key.trim();
        let val = val.trim();
        match key.to_ascii_lowercase().as_str() {
            "domain" => parsed.domain = parse_domain_attr("Domain", val, resolver)?,
            "owner" => parsed.owner = parse_domain_attr("Owner", val, resolver)?,
            "path" => {}
            "secure" => parsed.secure = true,
            "httponly" => parsed.http_only = true,
            "samesite" => parsed.same_site = SameSite::from_attr(val),
            "expires" => {
                // Unparseable dates are ignored, as browsers do.
                if let Some(t) = http_date_to_secs(val) {
                    expires = Some(t);
                }
            }
            "max-age" => {
                let secs = val
                    .parse::<i64>()
                    .map_err(|_| CookieParseError::InvalidMaxAge(val.to_string()))?;
                max_age = Some(secs);
            }
            "reader" => parsed.readers = Some(parse_domain_list("Reader", val, resolver)?),
            "writer" => parsed.writers = Some(parse_domain_list("Writer", val, resolver)?),
            _ => {}
        }
    }
    // Max-Age wins over Expires.
    parsed.expires_at = max_age.map(|secs| now.saturating_add(secs)).or(expires);
    Ok(parsed)
}

/// Parses one `Set-Cookie` header value received from `origin`.
///
/// The partition and owner both come from the `Domain` attribute when present
/// and from `origin` otherwise. An explicit `Owner` attribute (emitted by the
/// canonical form) overrides the owner.
pub fn parse_set_cookie(
    header: &str,
    origin: &Domain,
    now: i64,
    resolver: &DomainResolver,
) -> Result<CookieRecord, CookieParseError> {
    let parsed = parse_cookie_string(header, now, resolver)?;
    let domain = parsed.domain.unwrap_or_else(|| origin.party());
    let owner = parsed.owner.unwrap_or_else(|| domain.clone());
    Ok(CookieRecord {
        name: parsed.name,
        value: parsed.value,
        domain,
        owner,
        label: Label::new(
            parsed.readers.unwrap_or_default(),
            parsed.writers.unwrap_or_default(),
        ),
        secure: parsed.secure,
        http_only: parsed.http_only,
        same_site: parsed.same_site,
        expires_at: parsed.expires_at,
        created_at: now,
    })
}

/// `name=value; Domain=<d>; Owner=<o>; Reader={..}; Writer={..}` followed by
/// `Secure`, `HttpOnly`, `SameSite` and `Expires` when set.
pub fn canonical(record: &CookieRecord) -> String {
    let mut out = format!(
        "{}={}; Domain={}; Owner={}; Reader={}; Writer={}",
        record.name,
        record.value,
        record.domain,
        record.owner,
        braced(record.label.readers()),
        braced(record.label.writers()),
    );
    if record.secure {
        out.push_str("; Secure");
    }
    if record.http_only {
        out.push_str("; HttpOnly");
    }
    if let Some(attr) = record.same_site.attr() {
        out.push_str("; SameSite=");
        out.push_str(attr);
    }
    if let Some(t) = record.expires_at {
        out.push_str("; Expires=");
        out.push_str(&format_http_date(t));
    }
    out
}
