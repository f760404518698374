//! Brute-force reference implementation of the tracker-market computations.
//!
//! Nothing here depends on the `trackmarket` crate. Inputs are plain structs,
//! every quantity is an exact rational, and each step is written as direct
//! enumeration rather than with indexes, so the results can serve as an
//! independent check on the optimized library and as the source of the
//! committed golden files.

use std::collections::{BTreeMap, BTreeSet};

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};

pub type Q = BigRational;

pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().expect("finite rational")
}

/// Parses a plain decimal such as `0.005` exactly.
pub fn decimal(text: &str) -> Q {
    let text = text.trim();
    let (int, frac) = text.split_once('.').unwrap_or((text, ""));
    let digits: BigInt = format!("{int}{frac}").parse().expect("decimal literal");
    Q::new(digits, BigInt::from(10).pow(frac.len() as u32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Subsidiary,
    Parent,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::Subsidiary => "subsidiary",
            Level::Parent => "parent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: String,
    pub name: String,
    pub parent: Option<String>,
    pub is_tracker: bool,
    pub domains: Vec<String>,
    pub prefixes: Vec<String>,
}

/// One first party with its third-party evidence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Site {
    pub id: String,
    pub rank: u32,
    pub hosts: Vec<String>,
    pub libraries: Vec<String>,
}

// ---------------------------------------------------------------------------
// Public suffixes

/// Registrable domain by testing every rule against the host.
pub fn registrable_domain(host: &str, rules: &[String]) -> String {
    let host = host.trim().trim_end_matches('.').to_ascii_lowercase();
    if host.split('.').count() == 4
        && host
            .split('.')
            .all(|l| !l.is_empty() && l.parse::<u8>().is_ok())
    {
        return host;
    }
    let labels: Vec<&str> = host.split('.').collect();
    let matches = |rule: &str| {
        let r: Vec<&str> = rule.split('.').collect();
        r.len() <= labels.len()
            && r.iter()
                .rev()
                .zip(labels.iter().rev())
                .all(|(a, b)| *a == "*" || a == b)
    };
    let mut suffix_len = 1;
    let mut exception = None;
    for rule in rules {
        if let Some(ex) = rule.strip_prefix('!') {
            if matches(ex) {
                exception = Some(ex.split('.').count() - 1);
            }
        } else if rule != "*" && matches(rule) {
            suffix_len = suffix_len.max(rule.split('.').count());
        }
    }
    let suffix_len = exception.unwrap_or(suffix_len);
    if suffix_len >= labels.len() {
        return host;
    }
    labels[labels.len() - suffix_len - 1..].join(".")
}

/// Dot-separated, non-empty labels of letters, digits, `-` and `_`.
pub fn is_hostname(host: &str) -> bool {
    host.split('.').all(|l| {
        !l.is_empty()
            && l.len() <= 63
            && l.bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
    })
}

pub fn parse_rules(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| {
            l.split("//")
                .next()
                .unwrap_or("")
                .trim()
                .to_ascii_lowercase()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

// ---------------------------------------------------------------------------
// Ingest

/// Web record: keep request hosts whose registrable domain differs from the
/// site's.
pub fn ingest_web(site: &str, rank: u32, request_hosts: &[String], rules: &[String]) -> Site {
    let id = site.trim().trim_end_matches('.').to_ascii_lowercase();
    let own = registrable_domain(&id, rules);
    let hosts: BTreeSet<String> = request_hosts
        .iter()
        .map(|h| h.trim().trim_end_matches('.').to_ascii_lowercase())
        .filter(|h| is_hostname(h) && registrable_domain(h, rules) != own)
        .collect();
    Site {
        id,
        rank,
        hosts: hosts.into_iter().collect(),
        libraries: Vec::new(),
    }
}

/// App record: URL hosts reduced to registrable domains, excluding the
/// domain the package name points at. Only plain `http(s)://host[:port]/...`
/// URLs are understood.
pub fn ingest_app(
    package: &str,
    rank: u32,
    libraries: &[String],
    urls: &[String],
    rules: &[String],
) -> Site {
    let id = package.trim().to_string();
    let labels: Vec<&str> = id.split('.').collect();
    let own = format!("{}.{}", labels[1], labels[0]).to_ascii_lowercase();
    let hosts: BTreeSet<String> = urls
        .iter()
        .filter_map(|u| {
            let rest = u
                .trim()
                .strip_prefix("https://")
                .or_else(|| u.trim().strip_prefix("http://"))?;
            let end = rest.find(['/', '?', '#', ':']).unwrap_or(rest.len());
            Some(registrable_domain(&rest[..end], rules))
        })
        .filter(|d| *d != own)
        .collect();
    let libraries: BTreeSet<String> = libraries
        .iter()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    Site {
        id,
        rank,
        hosts: hosts.into_iter().collect(),
        libraries: libraries.into_iter().collect(),
    }
}

// ---------------------------------------------------------------------------
// Attribution

/// The entity claiming the longest domain equal to the host or a parent
/// domain of it.
pub fn attribute_host<'a>(host: &str, entities: &'a [Entity]) -> Option<&'a Entity> {
    entities
        .iter()
        .flat_map(|e| e.domains.iter().map(move |d| (d, e)))
        .filter(|(d, _)| host == d.as_str() || host.ends_with(&format!(".{d}")))
        .max_by_key(|(d, _)| d.len())
        .map(|(_, e)| e)
}

/// The entity claiming the longest prefix of the package on label boundaries.
pub fn attribute_library<'a>(package: &str, entities: &'a [Entity]) -> Option<&'a Entity> {
    entities
        .iter()
        .flat_map(|e| e.prefixes.iter().map(move |p| (p, e)))
        .filter(|(p, _)| package == p.as_str() || package.starts_with(&format!("{p}.")))
        .max_by_key(|(p, _)| p.len())
        .map(|(_, e)| e)
}

/// Top of the ownership chain, treating `severed` entities as roots.
pub fn root(id: &str, entities: &[Entity], severed: &[&str]) -> String {
    let mut current = id.to_string();
    loop {
        if severed.contains(&current.as_str()) {
            return current;
        }
        let e = entities
            .iter()
            .find(|e| e.id == current)
            .expect("known entity");
        match &e.parent {
            Some(p) => current = p.clone(),
            None => return current,
        }
    }
}

/// Set of (entity, first party) edges at the subsidiary level.
pub fn subsidiary_edges(sites: &[Site], entities: &[Entity]) -> BTreeSet<(String, String)> {
    let mut edges = BTreeSet::new();
    for s in sites {
        let hosts = s.hosts.iter().map(|h| attribute_host(h, entities));
        let libs = s.libraries.iter().map(|l| attribute_library(l, entities));
        for e in hosts.chain(libs).flatten() {
            if e.is_tracker {
                edges.insert((e.id.clone(), s.id.clone()));
            }
        }
    }
    edges
}

pub fn lift(
    edges: &BTreeSet<(String, String)>,
    entities: &[Entity],
    severed: &[&str],
) -> BTreeSet<(String, String)> {
    edges
        .iter()
        .map(|(e, s)| (root(e, entities, severed), s.clone()))
        .collect()
}

/// Keeps entities whose edge count is at least `min_fraction` of the corpus.
pub fn threshold(
    edges: &BTreeSet<(String, String)>,
    corpus_size: usize,
    min_fraction: &Q,
) -> BTreeSet<(String, String)> {
    let bound = min_fraction * Q::from_integer(BigInt::from(corpus_size));
    edges
        .iter()
        .filter(|(e, _)| {
            let count = edges.iter().filter(|(x, _)| x == e).count();
            Q::from_integer(BigInt::from(count)) >= bound
        })
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Consolidated,
    PreConsolidation,
}

/// Market edges for a level: consolidation and thresholding in the chosen
/// order.
pub fn market_edges(
    sites: &[Site],
    entities: &[Entity],
    level: Level,
    stage: Stage,
    min_fraction: &Q,
    severed: &[&str],
) -> BTreeSet<(String, String)> {
    let sub = subsidiary_edges(sites, entities);
    let n = sites.len();
    match (level, stage) {
        (Level::Subsidiary, _) => threshold(&sub, n, min_fraction),
        (Level::Parent, Stage::Consolidated) => {
            threshold(&lift(&sub, entities, severed), n, min_fraction)
        }
        (Level::Parent, Stage::PreConsolidation) => {
            lift(&threshold(&sub, n, min_fraction), entities, severed)
        }
    }
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub entity: String,
    pub prevalence: usize,
    pub prominence: Q,
    pub ish: Q,
    pub prowish: Q,
    pub prevalence_rank: usize,
    pub prominence_rank: usize,
    pub rank_change: i64,
}

/// Rows sorted by prominence, largest first, ties by entity id.
pub fn metrics(sites: &[Site], edges: &BTreeSet<(String, String)>) -> Vec<Row> {
    let rank_of = |id: &str| {
        sites
            .iter()
            .find(|s| s.id == id)
            .expect("edge to known site")
            .rank
    };
    let ids: BTreeSet<&String> = edges.iter().map(|(e, _)| e).collect();
    let mut rows: Vec<Row> = ids
        .into_iter()
        .map(|id| {
            let mine: Vec<&String> = edges
                .iter()
                .filter(|(e, _)| e == id)
                .map(|(_, s)| s)
                .collect();
            let prominence = mine
                .iter()
                .fold(Q::zero(), |acc, s| acc + q(1, rank_of(s) as i64));
            Row {
                entity: id.clone(),
                prevalence: mine.len(),
                prominence,
                ish: Q::zero(),
                prowish: Q::zero(),
                prevalence_rank: 0,
                prominence_rank: 0,
                rank_change: 0,
            }
        })
        .collect();
    let total_prev: usize = rows.iter().map(|r| r.prevalence).sum();
    let total_prom = rows.iter().fold(Q::zero(), |acc, r| acc + &r.prominence);
    for r in &mut rows {
        r.ish = q(r.prevalence as i64, total_prev as i64);
        r.prowish = &r.prominence / &total_prom;
    }
    let rows_snapshot = rows.clone();
    for r in &mut rows {
        // Rank = 1 + number of rows strictly ahead.
        r.prevalence_rank = 1 + rows_snapshot
            .iter()
            .filter(|o| {
                o.prevalence > r.prevalence || (o.prevalence == r.prevalence && o.entity < r.entity)
            })
            .count();
        r.prominence_rank = 1 + rows_snapshot
            .iter()
            .filter(|o| {
                o.prominence > r.prominence || (o.prominence == r.prominence && o.entity < r.entity)
            })
            .count();
        r.rank_change = r.prevalence_rank as i64 - r.prominence_rank as i64;
    }
    rows.sort_by_key(|r| r.prominence_rank);
    rows
}

pub fn hhi<'a>(shares: impl IntoIterator<Item = &'a Q>) -> Q {
    shares.into_iter().fold(Q::zero(), |acc, s| acc + s * s)
}

pub fn classification(h: &Q) -> &'static str {
    if *h < q(1, 100) {
        "highly_competitive"
    } else if *h < q(15, 100) {
        "unconcentrated"
    } else if *h <= q(25, 100) {
        "moderate"
    } else {
        "highly_concentrated"
    }
}

pub fn eu_flag(h: &Q) -> bool {
    *h > q(1, 10)
}

pub fn us_flag(h: &Q) -> bool {
    *h > q(25, 100)
}

/// Combined-market shares: per-entity sums of prevalence and prominence,
/// renormalized. Returns (ish, prowish) by entity.
pub fn combined_shares(web: &[Row], mobile: &[Row]) -> (BTreeMap<String, Q>, BTreeMap<String, Q>) {
    let mut prev: BTreeMap<String, Q> = BTreeMap::new();
    let mut prom: BTreeMap<String, Q> = BTreeMap::new();
    for r in web.iter().chain(mobile) {
        *prev.entry(r.entity.clone()).or_insert_with(Q::zero) +=
            Q::from_integer(BigInt::from(r.prevalence));
        *prom.entry(r.entity.clone()).or_insert_with(Q::zero) += &r.prominence;
    }
    let normalize = |m: BTreeMap<String, Q>| {
        let total = m.values().fold(Q::zero(), |a, b| a + b);
        m.into_iter().map(|(k, v)| (k, v / &total)).collect()
    };
    (normalize(prev), normalize(prom))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weight {
    Ish,
    Prowish,
}

impl Weight {
    pub fn name(self) -> &'static str {
        match self {
            Weight::Ish => "ish",
            Weight::Prowish => "prowish",
        }
    }
}

pub fn table_hhi(rows: &[Row], weight: Weight) -> Q {
    match weight {
        Weight::Ish => hhi(rows.iter().map(|r| &r.ish)),
        Weight::Prowish => hhi(rows.iter().map(|r| &r.prowish)),
    }
}

/// Parameters shared by every market computed for one report.
#[derive(Debug, Clone)]
pub struct Market<'a> {
    pub entities: &'a [Entity],
    pub stage: Stage,
    pub min_fraction: Q,
}

impl Market<'_> {
    pub fn rows(&self, sites: &[Site], level: Level, severed: &[&str]) -> Vec<Row> {
        let edges = market_edges(
            sites,
            self.entities,
            level,
            self.stage,
            &self.min_fraction,
            severed,
        );
        metrics(sites, &edges)
    }

    pub fn parent_hhi(&self, sites: &[Site], weight: Weight, severed: &[&str]) -> Q {
        table_hhi(&self.rows(sites, Level::Parent, severed), weight)
    }

    pub fn combined_parent_hhi(
        &self,
        web: &[Site],
        mobile: &[Site],
        weight: Weight,
        severed: &[&str],
    ) -> Q {
        let (ish, prowish) = combined_shares(
            &self.rows(web, Level::Parent, severed),
            &self.rows(mobile, Level::Parent, severed),
        );
        match weight {
            Weight::Ish => hhi(ish.values()),
            Weight::Prowish => hhi(prowish.values()),
        }
    }
}

/// (actual, counterfactual, delta) for a de-merger of `subsidiaries`.
pub fn demerger(actual: Q, counterfactual: Q) -> (Q, Q, Q) {
    let delta = &actual - &counterfactual;
    (actual, counterfactual, delta)
}

pub fn eu_concern(actual: &Q, delta: &Q) -> bool {
    *delta > q(25, 1000) && eu_flag(actual)
}

// ---------------------------------------------------------------------------
// Overlap

/// Entities present on one first party.
pub fn entity_set(edges: &BTreeSet<(String, String)>, site: &str) -> BTreeSet<String> {
    edges
        .iter()
        .filter(|(_, s)| s == site)
        .map(|(e, _)| e.clone())
        .collect()
}

/// (intersection, union, rate); the rate is absent when the union is empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> (usize, usize, Option<Q>) {
    let inter = a.iter().filter(|x| b.contains(*x)).count();
    let union: BTreeSet<&String> = a.iter().chain(b).collect();
    let rate = (!union.is_empty()).then(|| q(inter as i64, union.len() as i64));
    (inter, union.len(), rate)
}

pub fn mean<'a>(values: impl IntoIterator<Item = &'a Q>) -> Option<Q> {
    let v: Vec<&Q> = values.into_iter().collect();
    (!v.is_empty())
        .then(|| v.iter().fold(Q::zero(), |a, b| a + *b) / Q::from_integer(BigInt::from(v.len())))
}

/// Mean |A−B|, |B−A|, |A∩B| over first parties present in both corpora.
pub fn compare_methods(a: &[Site], b: &[Site], entities: &[Entity], level: Level) -> (Q, Q, Q) {
    let edges = |sites: &[Site]| match level {
        Level::Subsidiary => subsidiary_edges(sites, entities),
        Level::Parent => lift(&subsidiary_edges(sites, entities), entities, &[]),
    };
    let (ea, eb) = (edges(a), edges(b));
    let common: Vec<&String> = a
        .iter()
        .map(|s| &s.id)
        .filter(|id| b.iter().any(|t| &t.id == *id))
        .collect();
    let mut sums = [0i64; 3];
    for id in &common {
        let (sa, sb) = (entity_set(&ea, id), entity_set(&eb, id));
        sums[0] += sa.difference(&sb).count() as i64;
        sums[1] += sb.difference(&sa).count() as i64;
        sums[2] += sa.intersection(&sb).count() as i64;
    }
    let n = common.len() as i64;
    (q(sums[0], n), q(sums[1], n), q(sums[2], n))
}

// ---------------------------------------------------------------------------
// Formatting

/// Exact decimal rendering with nine significant digits, ties to even.
pub fn sig(x: &Q) -> String {
    const DIGITS: i32 = 9;
    if x.is_zero() {
        return "0.00000000".to_string();
    }
    let negative = x.is_negative();
    let a = x.abs();
    let ten = Q::from_integer(BigInt::from(10));
    let mut exp = 0i32;
    let mut scaled = a.clone();
    while scaled >= ten {
        scaled /= &ten;
        exp += 1;
    }
    while scaled < Q::one() {
        scaled *= &ten;
        exp -= 1;
    }
    let round = |v: &Q| -> BigInt {
        let floor = v.floor();
        let frac = v - &floor;
        let half = q(1, 2);
        let f = floor.to_integer();
        if frac > half || (frac == half && (&f % BigInt::from(2)) == BigInt::one()) {
            f + 1
        } else {
            f
        }
    };
    // Values of ten or more significant integer digits are printed whole.
    let mut m = round(&(&a * pow10((DIGITS - 1 - exp).max(0))));
    if exp < DIGITS - 1 && m == BigInt::from(10).pow(DIGITS as u32) {
        m /= 10;
        exp += 1;
    }
    let decimals = (DIGITS - 1 - exp).max(0) as usize;
    let mut digits = m.to_string();
    let body = if decimals == 0 {
        digits
    } else {
        if digits.len() <= decimals {
            digits = format!("{}{digits}", "0".repeat(decimals + 1 - digits.len()));
        }
        let (i, f) = digits.split_at(digits.len() - decimals);
        format!("{i}.{f}")
    };
    if negative {
        format!("-{body}")
    } else {
        body
    }
}

fn pow10(e: i32) -> Q {
    let p = Q::from_integer(BigInt::from(10).pow(e.unsigned_abs()));
    if e >= 0 {
        p
    } else {
        p.recip()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules() -> Vec<String> {
        parse_rules("com\nnet\nuk\nco.uk\n*.ck\n!www.ck\n")
    }

    #[test]
    fn suffixes() {
        assert_eq!(
            registrable_domain("a.b.example.com", &rules()),
            "example.com"
        );
        assert_eq!(registrable_domain("www.bbc.co.uk", &rules()), "bbc.co.uk");
        assert_eq!(registrable_domain("a.b.foo.ck", &rules()), "b.foo.ck");
        assert_eq!(registrable_domain("www.ck", &rules()), "www.ck");
        assert_eq!(registrable_domain("co.uk", &rules()), "co.uk");
        assert_eq!(registrable_domain("a.b.unknown", &rules()), "b.unknown");
    }

    #[test]
    fn formatting() {
        assert_eq!(sig(&q(6, 11)), "0.545454545");
        assert_eq!(sig(&q(1, 1)), "1.00000000");
        assert_eq!(sig(&q(3, 8)), "0.375000000");
        assert_eq!(sig(&q(-1, 3)), "-0.333333333");
        assert_eq!(sig(&decimal("19.30744849")), "19.3074485");
        assert_eq!(sig(&decimal("9.9999999996")), "10.0000000");
        assert_eq!(sig(&decimal("1234567891234")), "1234567891234");
        assert_eq!(sig(&decimal("0.00012345678951")), "0.000123456790");
        assert_eq!(sig(&decimal("0.1234567885")), "0.123456788");
    }

    #[test]
    fn hand_computed_metrics() {
        let sites: Vec<Site> = (1..=3)
            .map(|r| Site {
                id: format!("s{r}"),
                rank: r,
                hosts: vec![],
                libraries: vec![],
            })
            .collect();
        let edges: BTreeSet<(String, String)> = [("a", "s1"), ("b", "s2"), ("b", "s3")]
            .iter()
            .map(|(e, s)| (e.to_string(), s.to_string()))
            .collect();
        let rows = metrics(&sites, &edges);
        assert_eq!(rows[0].entity, "a");
        assert_eq!(rows[0].prowish, q(6, 11));
        assert_eq!(rows[0].rank_change, 1);
        assert_eq!(rows[1].prominence, q(5, 6));
    }

    #[test]
    fn longest_claim_wins() {
        let e = |id: &str, d: &str| Entity {
            id: id.into(),
            name: id.into(),
            parent: None,
            is_tracker: true,
            domains: vec![d.into()],
            prefixes: vec![format!("com.{id}")],
        };
        let es = vec![e("a", "a.net"), e("b", "x.a.net")];
        assert_eq!(attribute_host("y.x.a.net", &es).unwrap().id, "b");
        assert_eq!(attribute_host("y.a.net", &es).unwrap().id, "a");
        assert!(attribute_host("xa.net", &es).is_none());
        assert!(attribute_library("com.ab", &es).is_none());
        assert_eq!(attribute_library("com.a.sdk", &es).unwrap().id, "a");
    }
}
