//! Web/mobile service pairs, tracker-set overlap, and detection-method recall.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::Serialize;

use crate::attribution::{build_presence, PresenceMatrix};
use crate::error::{Error, Result, Warning};
use crate::format::sig;
use crate::ingest::{ObservationRecord, SuffixRuleSet};
use crate::kb::KnowledgeBase;
use crate::model::{Level, Platform};

/// The website a package name points at: its first two labels reversed
/// (`com.spotify.music` -> `spotify.com`).
pub fn candidate_domain(package_name: &str) -> Result<String> {
    let mut labels = package_name.trim().split('.');
    match (labels.next(), labels.next()) {
        (Some(tld), Some(name)) if !tld.is_empty() && !name.is_empty() => {
            Ok(format!("{name}.{tld}").to_ascii_lowercase())
        }
        _ => Err(Error::Parameter(format!(
            "package name {package_name:?} needs at least two non-empty labels"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Heuristic,
    Curated,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Heuristic => "heuristic",
            Provenance::Curated => "curated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct ServicePair {
    pub web_first_party_id: String,
    pub mobile_first_party_id: String,
    pub provenance: Provenance,
}

impl ServicePair {
    pub fn new(web: impl Into<String>, mobile: impl Into<String>, provenance: Provenance) -> Self {
        ServicePair {
            web_first_party_id: web.into(),
            mobile_first_party_id: mobile.into(),
            provenance,
        }
    }
}

/// Pairs every app whose candidate domain equals a website's registrable
/// domain. Ambiguous matches are all kept for curation. Output is sorted.
pub fn propose_pairs(
    web: &[ObservationRecord],
    mobile: &[ObservationRecord],
    rules: &SuffixRuleSet,
) -> Vec<ServicePair> {
    let mut by_domain: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for site in web {
        if let Ok(d) = rules.registrable_domain(&site.first_party_id) {
            by_domain.entry(d).or_default().push(&site.first_party_id);
        }
    }
    let mut pairs: Vec<ServicePair> = mobile
        .iter()
        .filter_map(|app| {
            let d = candidate_domain(&app.first_party_id).ok()?;
            by_domain.get(&d).map(|sites| (app, sites))
        })
        .flat_map(|(app, sites)| {
            sites
                .iter()
                .map(|site| ServicePair::new(*site, &app.first_party_id, Provenance::Heuristic))
        })
        .collect();
    pairs.sort();
    pairs
}

/// Reads a curated pairs CSV with columns
/// `web_first_party_id,mobile_first_party_id`.
pub fn read_pairs_csv<R: Read>(input: R) -> Result<Vec<ServicePair>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parameter(format!("pairs file is missing column {name:?}")))
    };
    let (w, m) = (col("web_first_party_id")?, col("mobile_first_party_id")?);
    let mut pairs = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let field = |idx: usize| {
            row.get(idx)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| Error::Line {
                    line: i + 2,
                    message: "empty pair id".into(),
                })
        };
        pairs.push(ServicePair::new(field(w)?, field(m)?, Provenance::Curated));
    }
    Ok(pairs)
}

pub fn write_pairs_csv<W: Write>(out: W, pairs: &[ServicePair]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["web_first_party_id", "mobile_first_party_id", "provenance"])?;
    for p in pairs {
        w.write_record([
            p.web_first_party_id.as_str(),
            p.mobile_first_party_id.as_str(),
            p.provenance.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairOverlap {
    pub pair: ServicePair,
    pub intersection_size: usize,
    pub union_size: usize,
    /// Jaccard index; `None` when neither side has trackers.
    pub rate: Option<f64>,
}

fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> (usize, usize, Option<f64>) {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    let rate = (union > 0).then(|| inter as f64 / union as f64);
    (inter, union, rate)
}

/// Jaccard overlap between the trackers on a pair's website and its app.
pub fn overlap_rate(
    pair: &ServicePair,
    web: &PresenceMatrix,
    mobile: &PresenceMatrix,
) -> Result<PairOverlap> {
    if web.level != mobile.level {
        return Err(Error::LevelMismatch(format!(
            "web matrix is {} level, mobile matrix is {}",
            web.level, mobile.level
        )));
    }
    let missing = |side: &str, id: &str| Error::Pair {
        web: pair.web_first_party_id.clone(),
        mobile: pair.mobile_first_party_id.clone(),
        message: format!("{side} id {id:?} not in corpus"),
    };
    if web.rank_of(&pair.web_first_party_id).is_none() {
        return Err(missing("web", &pair.web_first_party_id));
    }
    if mobile.rank_of(&pair.mobile_first_party_id).is_none() {
        return Err(missing("mobile", &pair.mobile_first_party_id));
    }
    let w = web.entities_on(&pair.web_first_party_id);
    let m = mobile.entities_on(&pair.mobile_first_party_id);
    let (intersection_size, union_size, rate) = jaccard(&w, &m);
    Ok(PairOverlap {
        pair: pair.clone(),
        intersection_size,
        union_size,
        rate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub level: Level,
    pub per_pair: Vec<PairOverlap>,
    /// Mean over pairs with a defined rate; `None` if there are none.
    pub mean_rate: Option<f64>,
    /// Pairs left out of the mean because neither side had trackers.
    pub excluded: usize,
}

pub fn overlap_report(
    pairs: &[ServicePair],
    web: &PresenceMatrix,
    mobile: &PresenceMatrix,
) -> Result<OverlapReport> {
    let per_pair = pairs
        .iter()
        .map(|p| overlap_rate(p, web, mobile))
        .collect::<Result<Vec<_>>>()?;
    let rates: Vec<f64> = per_pair.iter().filter_map(|p| p.rate).collect();
    let mean_rate = (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64);
    Ok(OverlapReport {
        level: web.level,
        excluded: per_pair.len() - rates.len(),
        per_pair,
        mean_rate,
    })
}

pub const OVERLAP_COLUMNS: [&str; 6] = [
    "web_first_party_id",
    "mobile_first_party_id",
    "provenance",
    "intersection",
    "union",
    "rate",
];

impl OverlapReport {
    /// One row per pair, then a summary row `mean,,<level>,,,<mean_rate>`.
    /// Undefined rates are left blank.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(OVERLAP_COLUMNS)?;
        for p in &self.per_pair {
            w.write_record([
                p.pair.web_first_party_id.clone(),
                p.pair.mobile_first_party_id.clone(),
                p.pair.provenance.as_str().to_string(),
                p.intersection_size.to_string(),
                p.union_size.to_string(),
                p.rate.map(sig).unwrap_or_default(),
            ])?;
        }
        w.write_record([
            "mean".to_string(),
            String::new(),
            self.level.to_string(),
            String::new(),
            format!("excluded={}", self.excluded),
            self.mean_rate.map(sig).unwrap_or_default(),
        ])?;
        w.flush().map_err(|e| Error::io("<output>", e))?;
        Ok(())
    }
}

/// Per-first-party comparison of two detection methods.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MethodDifference {
    pub first_party_id: String,
    pub a_minus_b: usize,
    pub b_minus_a: usize,
    pub intersection: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallComparison {
    pub level: Level,
    pub mean_a_minus_b: f64,
    pub mean_b_minus_a: f64,
    pub mean_intersection: f64,
    pub per_first_party: Vec<MethodDifference>,
}

/// Compares the attributed tracker sets two methods found on the same first
/// parties. Only ids present in both corpora are compared; a mismatch is
/// reported as a warning.
pub fn compare_methods(
    corpus_a: &[ObservationRecord],
    corpus_b: &[ObservationRecord],
    kb: &KnowledgeBase,
    level: Level,
) -> Result<(RecallComparison, Vec<Warning>)> {
    let ids = |c: &[ObservationRecord]| -> BTreeSet<String> {
        c.iter().map(|r| r.first_party_id.clone()).collect()
    };
    let (ids_a, ids_b) = (ids(corpus_a), ids(corpus_b));
    let common: BTreeSet<&String> = ids_a.intersection(&ids_b).collect();
    if common.is_empty() {
        return Err(Error::EmptyMarket(
            "the two corpora share no first parties".into(),
        ));
    }
    let mut warnings = Vec::new();
    if common.len() != ids_a.len() || common.len() != ids_b.len() {
        warnings.push(Warning::new(
            "compare-methods",
            format!(
                "corpora differ; comparing {} shared first parties ({} only in A, {} only in B)",
                common.len(),
                ids_a.len() - common.len(),
                ids_b.len() - common.len()
            ),
        ));
    }

    let matrix_a = build_presence(corpus_a, kb, level)?;
    let matrix_b = build_presence(corpus_b, kb, level)?;
    let sets = |m: &PresenceMatrix| -> BTreeMap<String, BTreeSet<String>> {
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (e, fp, _) in m.edges() {
            out.entry(fp.to_string()).or_default().insert(e.to_string());
        }
        out
    };
    let (sets_a, sets_b) = (sets(&matrix_a), sets(&matrix_b));
    let empty = BTreeSet::new();

    let per_first_party: Vec<MethodDifference> = common
        .iter()
        .map(|id| {
            let a = sets_a.get(*id).unwrap_or(&empty);
            let b = sets_b.get(*id).unwrap_or(&empty);
            MethodDifference {
                first_party_id: (*id).clone(),
                a_minus_b: a.difference(b).count(),
                b_minus_a: b.difference(a).count(),
                intersection: a.intersection(b).count(),
            }
        })
        .collect();

    let n = per_first_party.len() as f64;
    let mean =
        |f: fn(&MethodDifference) -> usize| per_first_party.iter().map(f).sum::<usize>() as f64 / n;
    Ok((
        RecallComparison {
            level,
            mean_a_minus_b: mean(|d| d.a_minus_b),
            mean_b_minus_a: mean(|d| d.b_minus_a),
            mean_intersection: mean(|d| d.intersection),
            per_first_party,
        },
        warnings,
    ))
}

pub const RECALL_COLUMNS: [&str; 5] = [
    "first_party_id",
    "level",
    "a_minus_b",
    "b_minus_a",
    "intersection",
];

impl RecallComparison {
    /// One row per first party, then a `mean` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(RECALL_COLUMNS)?;
        let level = self.level.to_string();
        for d in &self.per_first_party {
            w.write_record([
                d.first_party_id.as_str(),
                &level,
                &d.a_minus_b.to_string(),
                &d.b_minus_a.to_string(),
                &d.intersection.to_string(),
            ])?;
        }
        w.write_record([
            "mean",
            &level,
            &sig(self.mean_a_minus_b),
            &sig(self.mean_b_minus_a),
            &sig(self.mean_intersection),
        ])?;
        w.flush().map_err(|e| Error::io("<output>", e))?;
        Ok(())
    }
}

/// Checks a pair list against both corpora before any matrices are built.
pub fn check_pairs(
    pairs: &[ServicePair],
    web: &[ObservationRecord],
    mobile: &[ObservationRecord],
) -> Result<()> {
    let contains = |c: &[ObservationRecord], id: &str, p: Platform| {
        c.iter().any(|r| r.first_party_id == id && r.platform == p)
    };
    for p in pairs {
        if !contains(web, &p.web_first_party_id, Platform::Web) {
            return Err(Error::Pair {
                web: p.web_first_party_id.clone(),
                mobile: p.mobile_first_party_id.clone(),
                message: "web id not in web corpus".into(),
            });
        }
        if !contains(mobile, &p.mobile_first_party_id, Platform::Mobile) {
            return Err(Error::Pair {
                web: p.web_first_party_id.clone(),
                mobile: p.mobile_first_party_id.clone(),
                message: "mobile id not in mobile corpus".into(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::TrackerEntity;

    #[test]
    fn candidate_domain_reverses_first_two_labels() {
        assert_eq!(candidate_domain("com.example").unwrap(), "example.com");
        assert_eq!(
            candidate_domain("com.spotify.music").unwrap(),
            "spotify.com"
        );
        assert_eq!(candidate_domain("org.wikipedia").unwrap(), "wikipedia.org");
        assert!(candidate_domain("example").is_err());
        assert!(candidate_domain("com.").is_err());
    }

    fn obs(id: &str, platform: Platform, rank: u32, hosts: &[&str]) -> ObservationRecord {
        ObservationRecord {
            first_party_id: id.into(),
            platform,
            rank,
            third_party_hosts: hosts.iter().map(|s| s.to_string()).collect(),
            third_party_libraries: BTreeSet::new(),
        }
    }

    fn rules() -> SuffixRuleSet {
        SuffixRuleSet::parse("com\norg\nnet\n").unwrap()
    }

    #[test]
    fn heuristic_pairing() {
        let web = vec![obs("spotify.com", Platform::Web, 1, &[])];
        let mobile = vec![obs("com.spotify.music", Platform::Mobile, 1, &[])];
        let pairs = propose_pairs(&web, &mobile, &rules());
        assert_eq!(
            pairs,
            vec![ServicePair::new(
                "spotify.com",
                "com.spotify.music",
                Provenance::Heuristic
            )]
        );
        let other = vec![obs("com.unrelated.app", Platform::Mobile, 1, &[])];
        assert!(propose_pairs(&web, &other, &rules()).is_empty());
    }

    #[test]
    fn ambiguous_pairs_are_all_emitted() {
        let web = vec![obs("www.spotify.com", Platform::Web, 1, &[])];
        let mobile = vec![
            obs("com.spotify.music", Platform::Mobile, 1, &[]),
            obs("com.spotify.lite", Platform::Mobile, 2, &[]),
        ];
        assert_eq!(propose_pairs(&web, &mobile, &rules()).len(), 2);
    }

    fn kb() -> KnowledgeBase {
        let e = |id: &str| TrackerEntity::new(id).with_domains([format!("{id}.net")]);
        KnowledgeBase::from_entities(["g", "f", "c", "a", "t", "m"].map(e)).unwrap()
    }

    fn matrices(web_hosts: &[&str], app_hosts: &[&str]) -> (PresenceMatrix, PresenceMatrix) {
        let w = build_presence(
            &[obs("x.com", Platform::Web, 1, web_hosts)],
            &kb(),
            Level::Parent,
        )
        .unwrap();
        let m = build_presence(
            &[obs("com.x", Platform::Mobile, 1, app_hosts)],
            &kb(),
            Level::Parent,
        )
        .unwrap();
        (w, m)
    }

    fn rate(web_hosts: &[&str], app_hosts: &[&str]) -> Option<f64> {
        let (w, m) = matrices(web_hosts, app_hosts);
        overlap_rate(
            &ServicePair::new("x.com", "com.x", Provenance::Curated),
            &w,
            &m,
        )
        .unwrap()
        .rate
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(rate(&["g.net", "f.net"], &["f.net", "g.net"]), Some(1.0));
        assert_eq!(rate(&["g.net"], &["f.net"]), Some(0.0));
        assert_eq!(
            rate(&["g.net", "f.net", "c.net"], &["g.net", "f.net", "a.net"]),
            Some(0.5)
        );
        assert_eq!(rate(&[], &[]), None);
    }

    #[test]
    fn overlap_is_symmetric() {
        let a = rate(&["g.net", "t.net", "c.net"], &["g.net", "m.net"]);
        let b = rate(&["g.net", "m.net"], &["g.net", "t.net", "c.net"]);
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_pair_id_is_an_error() {
        let (w, m) = matrices(&["g.net"], &["g.net"]);
        let err = overlap_rate(
            &ServicePair::new("y.com", "com.x", Provenance::Curated),
            &w,
            &m,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Pair { .. }));
    }

    #[test]
    fn empty_union_pairs_are_excluded_from_mean() {
        let kb = kb();
        let web = vec![
            obs("a.com", Platform::Web, 1, &["g.net"]),
            obs("b.com", Platform::Web, 2, &[]),
        ];
        let mobile = vec![
            obs("com.a", Platform::Mobile, 1, &["g.net"]),
            obs("com.b", Platform::Mobile, 2, &[]),
        ];
        let w = build_presence(&web, &kb, Level::Parent).unwrap();
        let m = build_presence(&mobile, &kb, Level::Parent).unwrap();
        let pairs = vec![
            ServicePair::new("a.com", "com.a", Provenance::Curated),
            ServicePair::new("b.com", "com.b", Provenance::Curated),
        ];
        let report = overlap_report(&pairs, &w, &m).unwrap();
        assert_eq!(report.mean_rate, Some(1.0));
        assert_eq!(report.excluded, 1);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("b.com,com.b,curated,0,0,\n"), "{text}");
        assert!(
            text.ends_with("mean,,parent,,excluded=1,1.00000000\n"),
            "{text}"
        );
    }

    fn app(id: &str, rank: u32, hosts: &[&str]) -> ObservationRecord {
        obs(id, Platform::Mobile, rank, hosts)
    }

    #[test]
    fn hand_traced_method_comparison() {
        let a = vec![
            app("com.one", 1, &["g.net", "f.net"]),
            app("com.two", 2, &["t.net"]),
        ];
        let b = vec![
            app("com.one", 1, &["g.net"]),
            app("com.two", 2, &["t.net", "m.net"]),
        ];
        let (cmp, warnings) = compare_methods(&a, &b, &kb(), Level::Subsidiary).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(
            (
                cmp.mean_a_minus_b,
                cmp.mean_b_minus_a,
                cmp.mean_intersection
            ),
            (0.5, 0.5, 1.0)
        );
    }

    #[test]
    fn identical_methods_have_no_asymmetry() {
        let a = vec![
            app("com.one", 1, &["g.net", "f.net"]),
            app("com.two", 2, &["t.net"]),
        ];
        let (cmp, _) = compare_methods(&a, &a, &kb(), Level::Parent).unwrap();
        assert_eq!(
            (
                cmp.mean_a_minus_b,
                cmp.mean_b_minus_a,
                cmp.mean_intersection
            ),
            (0.0, 0.0, 1.5)
        );
    }

    #[test]
    fn superset_method_never_misses() {
        let a = vec![
            app("com.one", 1, &["g.net", "f.net"]),
            app("com.two", 2, &["t.net", "m.net"]),
        ];
        let b = vec![app("com.one", 1, &["g.net"]), app("com.two", 2, &[])];
        let (cmp, _) = compare_methods(&a, &b, &kb(), Level::Parent).unwrap();
        assert_eq!(cmp.mean_b_minus_a, 0.0);
    }

    #[test]
    fn comparison_uses_id_intersection() {
        let a = vec![app("com.one", 1, &["g.net"]), app("com.two", 2, &["t.net"])];
        let b = vec![
            app("com.one", 1, &["g.net"]),
            app("com.three", 2, &["t.net"]),
        ];
        let (cmp, warnings) = compare_methods(&a, &b, &kb(), Level::Parent).unwrap();
        assert_eq!(cmp.per_first_party.len(), 1);
        assert_eq!(warnings.len(), 1);
        let c = vec![app("com.four", 1, &[])];
        assert!(compare_methods(&a, &c, &kb(), Level::Parent).is_err());
    }

    #[test]
    fn curated_pairs_csv() {
        let text = "web_first_party_id,mobile_first_party_id\nspotify.com, com.spotify.music\n";
        let pairs = read_pairs_csv(text.as_bytes()).unwrap();
        assert_eq!(
            pairs,
            vec![ServicePair::new(
                "spotify.com",
                "com.spotify.music",
                Provenance::Curated
            )]
        );
        assert!(read_pairs_csv("a,b\nx,y\n".as_bytes()).is_err());
    }
}
