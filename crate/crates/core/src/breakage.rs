//! Breakage summaries of replay denials, and blocklist coverage of
//! third-party accesses.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::classify::{Percent, Rounding, UndefinedRatio};
use crate::domain::{same_party, Domain};
use crate::log::AccessEvent;
use crate::policy::AccessMode;
use crate::replay::DenialEvent;

pub const DEFAULT_TOP_N: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SiteBreakage {
    pub site_id: String,
    pub denied_reads: u64,
    pub denied_writes: u64,
    pub denied_scripts: u64,
    pub affected_objects: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScriptDenials {
    pub script: String,
    pub denials: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct BreakageReport {
    pub sites: Vec<SiteBreakage>,
    pub denied_reads: u64,
    pub denied_writes: u64,
    pub top_scripts: Vec<ScriptDenials>,
}

impl BreakageReport {
    pub fn total_denials(&self) -> u64 {
        self.denied_reads + self.denied_writes
    }

    pub fn site(&self, site_id: &str) -> Option<&SiteBreakage> {
        self.sites.iter().find(|s| s.site_id == site_id)
    }

    pub fn to_tsv(&self) -> String {
        let mut out =
            String::from("site\tdenied_reads\tdenied_writes\tdenied_scripts\taffected_objects\n");
        for s in &self.sites {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                s.site_id, s.denied_reads, s.denied_writes, s.denied_scripts, s.affected_objects
            ));
        }
        out.push_str(&format!(
            "total\t{}\t{}\t-\t-\n\nscript\tdenials\n",
            self.denied_reads, self.denied_writes
        ));
        for s in &self.top_scripts {
            out.push_str(&format!("{}\t{}\n", s.script, s.denials));
        }
        out
    }
}

#[derive(Default)]
struct SiteTally<'a> {
    reads: u64,
    writes: u64,
    scripts: HashSet<&'a str>,
    objects: HashSet<&'a str>,
}

/// Groups denials by site, and ranks script domains by denial count. Ties
/// go to the lexicographically smaller domain.
pub fn breakage_report(denials: &[DenialEvent], top_n: usize) -> BreakageReport {
    let mut sites: BTreeMap<&str, SiteTally> = BTreeMap::new();
    let mut scripts: HashMap<&str, u64> = HashMap::new();
    for d in denials {
        let site = sites.entry(&d.site_id).or_default();
        match d.mode {
            AccessMode::Read => site.reads += 1,
            AccessMode::Write => site.writes += 1,
        }
        site.scripts.insert(d.accessor.registrable());
        site.objects.insert(&d.object_key);
        *scripts.entry(d.accessor.registrable()).or_default() += 1;
    }

    let mut ranked: Vec<_> = scripts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(top_n);

    let sites: Vec<SiteBreakage> = sites
        .into_iter()
        .map(|(site_id, t)| SiteBreakage {
            site_id: site_id.to_string(),
            denied_reads: t.reads,
            denied_writes: t.writes,
            denied_scripts: t.scripts.len() as u64,
            affected_objects: t.objects.len() as u64,
        })
        .collect();
    BreakageReport {
        denied_reads: sites.iter().map(|s| s.denied_reads).sum(),
        denied_writes: sites.iter().map(|s| s.denied_writes).sum(),
        sites,
        top_scripts: ranked
            .into_iter()
            .map(|(script, denials)| ScriptDenials {
                script: script.to_string(),
                denials,
            })
            .collect(),
    }
}

#[derive(Debug, Error)]
pub enum BlocklistError {
    #[error("cannot read blocklist {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("blocklist line {line}: {entry:?} is not a domain")]
    InvalidEntry { line: usize, entry: String },
}

/// A plain domain list, one entry per line, `#` starting a comment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Blocklist {
    entries: BTreeSet<String>,
}

impl Blocklist {
    pub fn parse(text: &str) -> Result<Self, BlocklistError> {
        let mut entries = BTreeSet::new();
        for (index, line) in text.lines().enumerate() {
            let entry = line.split('#').next().unwrap_or("").trim();
            if entry.is_empty() {
                continue;
            }
            let bare = entry.trim_start_matches("*.").trim_start_matches('.');
            let domain = Domain::parse(bare).map_err(|_| BlocklistError::InvalidEntry {
                line: index + 1,
                entry: entry.to_string(),
            })?;
            entries.insert(domain.raw_host().to_string());
        }
        Ok(Blocklist { entries })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, BlocklistError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| BlocklistError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, host: &str) -> bool {
        self.entries.contains(host)
    }
}

/// Whether the script's host, or any parent domain of it, is listed.
pub fn match_blocklist(script: &Domain, list: &Blocklist) -> bool {
    let mut host = script.raw_host();
    loop {
        if list.contains(host) {
            return true;
        }
        match host.split_once('.') {
            Some((_, parent)) => host = parent,
            None => return list.contains(script.registrable()),
        }
    }
}

/// Percentage of third-party data accesses whose script is on the list.
pub fn blocklist_coverage(
    events: &[AccessEvent],
    list: &Blocklist,
) -> Result<Percent, UndefinedRatio> {
    let mut cache: HashMap<&Domain, bool> = HashMap::new();
    let (mut listed, mut total) = (0u64, 0u64);
    for event in events {
        if event.mode().is_none() || same_party(&event.script, &event.host) {
            continue;
        }
        total += 1;
        if *cache
            .entry(&event.script)
            .or_insert_with(|| match_blocklist(&event.script, list))
        {
            listed += 1;
        }
    }
    Percent::ratio(listed, total, Rounding::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::DecisionReason;

    fn d(s: &str) -> Domain {
        Domain::parse(s).unwrap()
    }

    fn denial(seq: u64, site: &str, script: &str, key: &str, mode: AccessMode) -> DenialEvent {
        DenialEvent {
            event_seq: seq,
            site_id: site.into(),
            accessor: d(script),
            object_key: key.into(),
            mode,
            reason: DecisionReason::DefaultDeny,
        }
    }

    #[test]
    fn empty() {
        assert_eq!(
            breakage_report(&[], DEFAULT_TOP_N),
            BreakageReport::default()
        );
    }

    #[test]
    fn per_site_sums_match_global() {
        let mut denials = Vec::new();
        for (i, site) in ["a", "b", "c"].iter().enumerate() {
            let i = i as u64 * 10;
            denials.push(denial(i + 1, site, "x.com", "k1", AccessMode::Read));
            denials.push(denial(i + 2, site, "y.com", "k1", AccessMode::Write));
            denials.push(denial(i + 3, site, "y.com", "k2", AccessMode::Read));
        }
        let report = breakage_report(&denials, DEFAULT_TOP_N);
        assert_eq!(report.sites.len(), 3);
        for s in &report.sites {
            assert_eq!((s.denied_reads, s.denied_writes), (2, 1));
            assert_eq!((s.denied_scripts, s.affected_objects), (2, 2));
        }
        let per_site: u64 = report
            .sites
            .iter()
            .map(|s| s.denied_reads + s.denied_writes)
            .sum();
        assert_eq!(per_site, report.total_denials());
        assert_eq!(report.total_denials(), denials.len() as u64);
        assert_eq!(report.top_scripts[0].script, "y.com");
        assert_eq!(report.top_scripts[0].denials, 6);
    }

    #[test]
    fn ties_rank_lexicographically() {
        let denials = [
            denial(1, "s", "zeta.com", "k", AccessMode::Read),
            denial(2, "s", "alpha.com", "k", AccessMode::Read),
            denial(3, "s", "mid.com", "k", AccessMode::Read),
            denial(4, "s", "mid.com", "j", AccessMode::Read),
        ];
        let report = breakage_report(&denials, 2);
        let names: Vec<_> = report
            .top_scripts
            .iter()
            .map(|s| s.script.as_str())
            .collect();
        assert_eq!(names, ["mid.com", "alpha.com"]);
    }

    #[test]
    fn blocklist_matching() {
        let list =
            Blocklist::parse("# ads\ndoubleclick.net\n\nads.example.org  # inline\n").unwrap();
        assert_eq!(list.len(), 2);
        assert!(match_blocklist(&d("doubleclick.net"), &list));
        assert!(match_blocklist(&d("securepubads.g.doubleclick.net"), &list));
        assert!(!match_blocklist(&d("notdoubleclick.net"), &list));
        assert!(!match_blocklist(&d("safe-cdn.example"), &list));
        assert!(match_blocklist(&d("x.ads.example.org"), &list));
        assert!(!match_blocklist(&d("example.org"), &list));
    }

    #[test]
    fn bad_blocklist_line() {
        let err = Blocklist::parse("ok.com\nnot a domain\n").unwrap_err();
        assert!(matches!(err, BlocklistError::InvalidEntry { line: 2, .. }));
    }
}
