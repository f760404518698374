//! Raw detection exports to normalized [`ObservationRecord`]s.

mod corpus;
mod psl;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::model::Platform;
use crate::overlap::candidate_domain;

pub use corpus::{load_corpus, parse_corpus, read_observations, write_observations, Ingested};
pub use psl::{normalize_host, registrable_domain, SuffixRuleSet};

/// One crawled website, as exported by the crawler.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawWebRecord {
    pub site_identifier: String,
    /// Popularity rank, 1 = most visited.
    pub rank: u32,
    #[serde(default)]
    pub request_hosts: Vec<String>,
}

/// One analysed app, as exported by static analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAppRecord {
    pub package_name: String,
    /// Download-order rank, 1 = most downloaded.
    pub rank: u32,
    #[serde(default)]
    pub library_packages: Vec<String>,
    #[serde(default)]
    pub url_strings: Vec<String>,
}

/// A first party with its third-party evidence, first-party hosts removed.
///
/// Web records keep case-folded hostnames; app records carry registrable
/// domains taken from URL strings plus the library package prefixes found in
/// the code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub first_party_id: String,
    pub platform: Platform,
    pub rank: u32,
    #[serde(default)]
    pub third_party_hosts: BTreeSet<String>,
    #[serde(default)]
    pub third_party_libraries: BTreeSet<String>,
}

fn check_rank(id: &str, rank: u32) -> Result<()> {
    if rank == 0 {
        return Err(Error::Record {
            id: id.to_string(),
            message: "rank must be at least 1".into(),
        });
    }
    Ok(())
}

/// Drops every request host that shares the site's registrable domain.
///
/// Malformed request hosts are skipped with a warning; a malformed site
/// identifier fails the whole record.
pub fn filter_first_party(
    record: &RawWebRecord,
    rules: &SuffixRuleSet,
) -> Result<(ObservationRecord, Vec<Warning>)> {
    let site = normalize_host(&record.site_identifier).map_err(|e| Error::Record {
        id: record.site_identifier.clone(),
        message: e.to_string(),
    })?;
    check_rank(&site, record.rank)?;
    let own = rules.registrable_domain(&site)?;

    let mut warnings = Vec::new();
    let mut hosts = BTreeSet::new();
    for raw in &record.request_hosts {
        let host = match normalize_host(raw) {
            Ok(h) => h,
            Err(e) => {
                warnings.push(Warning::new(&site, format!("skipped host: {e}")));
                continue;
            }
        };
        let domain = rules.registrable_domain(&host)?;
        if domain != own {
            hosts.insert(host);
        }
    }

    Ok((
        ObservationRecord {
            first_party_id: site,
            platform: Platform::Web,
            rank: record.rank,
            third_party_hosts: hosts,
            third_party_libraries: BTreeSet::new(),
        },
        warnings,
    ))
}

/// Normalizes an app record: deduplicates library prefixes and reduces URL
/// strings to registrable domains, dropping the app's own domain (the
/// reversed first two labels of its package name).
pub fn normalize_app(
    record: &RawAppRecord,
    rules: &SuffixRuleSet,
) -> Result<(ObservationRecord, Vec<Warning>)> {
    let package = record.package_name.trim().to_string();
    let own = candidate_domain(&package).map_err(|e| Error::Record {
        id: package.clone(),
        message: e.to_string(),
    })?;
    check_rank(&package, record.rank)?;

    let mut warnings = Vec::new();
    let libraries: BTreeSet<String> = record
        .library_packages
        .iter()
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect();

    let mut hosts = BTreeSet::new();
    for raw in &record.url_strings {
        match url_domain(raw, rules) {
            Ok(domain) if domain == own => {}
            Ok(domain) => {
                hosts.insert(domain);
            }
            Err(msg) => warnings.push(Warning::new(
                &package,
                format!("skipped url {raw:?}: {msg}"),
            )),
        }
    }

    Ok((
        ObservationRecord {
            first_party_id: package,
            platform: Platform::Mobile,
            rank: record.rank,
            third_party_hosts: hosts,
            third_party_libraries: libraries,
        },
        warnings,
    ))
}

fn url_domain(raw: &str, rules: &SuffixRuleSet) -> std::result::Result<String, String> {
    let parsed = url::Url::parse(raw.trim()).map_err(|e| e.to_string())?;
    if !matches!(parsed.scheme(), "http" | "https") {
        return Err(format!("unsupported scheme {:?}", parsed.scheme()));
    }
    let host = match parsed.host() {
        Some(url::Host::Domain(d)) => d.to_string(),
        Some(url::Host::Ipv4(ip)) => ip.to_string(),
        Some(url::Host::Ipv6(ip)) => return Err(format!("IPv6 literal {ip}")),
        None => return Err("no host".into()),
    };
    rules.registrable_domain(&host).map_err(|e| e.to_string())
}
