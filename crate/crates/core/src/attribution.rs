//! Joins observations with the knowledge base into a presence matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::ObservationRecord;
use crate::kb::KnowledgeBase;
use crate::model::{Level, Platform, RankWeight};

/// Entities covering fewer than this fraction of first parties are dropped.
pub const DEFAULT_MIN_COVERAGE: f64 = 0.005;

// Absorbs representation error in min_fraction * corpus_size (0.005 * 5000).
const COVERAGE_EPSILON: f64 = 1e-9;

/// Which tracker entity appears on which first party.
///
/// Presence is stored per entity as `first_party_id -> rank`, so a first
/// party contributes at most one edge to any entity.
#[derive(Debug, Clone, PartialEq)]
pub struct PresenceMatrix {
    pub platform: Platform,
    pub level: Level,
    first_parties: BTreeMap<String, u32>,
    presence: BTreeMap<String, BTreeMap<String, u32>>,
    unattributed: BTreeMap<String, u64>,
    non_tracker: BTreeMap<String, u64>,
}

impl PresenceMatrix {
    /// An edge-free matrix over the given corpus of `(first_party_id, rank)`.
    pub fn new<I, S>(platform: Platform, level: Level, first_parties: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u32)>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        let mut ranks = BTreeSet::new();
        for (id, rank) in first_parties {
            let id = id.into();
            if rank == 0 {
                return Err(Error::Record {
                    id,
                    message: "rank must be at least 1".into(),
                });
            }
            if !ranks.insert(rank) {
                return Err(Error::Corpus(vec![format!("duplicate rank {rank}")]));
            }
            if map.insert(id.clone(), rank).is_some() {
                return Err(Error::Corpus(vec![format!(
                    "duplicate first_party_id {id:?}"
                )]));
            }
        }
        if map.is_empty() {
            return Err(Error::EmptyMarket("corpus has no first parties".into()));
        }
        Ok(PresenceMatrix {
            platform,
            level,
            first_parties: map,
            presence: BTreeMap::new(),
            unattributed: BTreeMap::new(),
            non_tracker: BTreeMap::new(),
        })
    }

    /// Records that `entity` is present on `first_party`. Repeated edges are
    /// absorbed.
    pub fn insert(&mut self, entity: &str, first_party: &str) -> Result<()> {
        let rank = *self
            .first_parties
            .get(first_party)
            .ok_or_else(|| Error::Record {
                id: first_party.to_string(),
                message: "not in corpus".into(),
            })?;
        self.presence
            .entry(entity.to_string())
            .or_default()
            .insert(first_party.to_string(), rank);
        Ok(())
    }

    pub fn corpus_size(&self) -> usize {
        self.first_parties.len()
    }

    pub fn first_parties(&self) -> &BTreeMap<String, u32> {
        &self.first_parties
    }

    pub fn rank_of(&self, first_party: &str) -> Option<u32> {
        self.first_parties.get(first_party).copied()
    }

    /// Number of entities with at least one edge.
    pub fn len(&self) -> usize {
        self.presence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.presence.is_empty()
    }

    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.presence.keys().map(String::as_str)
    }

    pub fn contains(&self, entity: &str) -> bool {
        self.presence.contains_key(entity)
    }

    /// The entity's presence set as `first_party_id -> rank`.
    pub fn presence(&self, entity: &str) -> Option<&BTreeMap<String, u32>> {
        self.presence.get(entity)
    }

    pub fn prevalence(&self, entity: &str) -> usize {
        self.presence.get(entity).map_or(0, BTreeMap::len)
    }

    /// Entities present on one first party.
    pub fn entities_on(&self, first_party: &str) -> BTreeSet<&str> {
        self.presence
            .iter()
            .filter(|(_, fps)| fps.contains_key(first_party))
            .map(|(e, _)| e.as_str())
            .collect()
    }

    /// Unmatched hostnames and library packages, with the number of first
    /// parties each was seen on.
    pub fn unattributed(&self) -> &BTreeMap<String, u64> {
        &self.unattributed
    }

    /// Matched entities flagged as non-trackers, with first-party counts.
    pub fn non_tracker(&self) -> &BTreeMap<String, u64> {
        &self.non_tracker
    }

    /// Iterates `(entity_id, first_party_id, rank)` in entity order, then
    /// ascending rank.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.presence.iter().flat_map(|(e, fps)| {
            let mut rows: Vec<(&str, &str, u32)> = fps
                .iter()
                .map(|(fp, r)| (e.as_str(), fp.as_str(), *r))
                .collect();
            rows.sort_by_key(|&(_, _, r)| r);
            rows
        })
    }

    /// Writes the edge list as CSV with columns `entity_id,first_party_id,rank`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["entity_id", "first_party_id", "rank"])?;
        for (e, fp, r) in self.edges() {
            w.write_record([e, fp, &r.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<output>", e))?;
        Ok(())
    }

    /// Reads an edge list written by [`PresenceMatrix::write_csv`] against the
    /// corpus it was built from. Ranks must agree with the corpus.
    pub fn read_csv<R: Read>(input: R, corpus: &[ObservationRecord], level: Level) -> Result<Self> {
        let platform = corpus_platform(corpus)?;
        let mut m = PresenceMatrix::new(
            platform,
            level,
            corpus.iter().map(|r| (r.first_party_id.clone(), r.rank)),
        )?;
        let mut reader = csv::Reader::from_reader(input);
        for (i, row) in reader.records().enumerate() {
            let row = row?;
            let line = i + 2;
            let bad = |message: String| Error::Line { line, message };
            if row.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", row.len())));
            }
            let rank: u32 = row[2]
                .parse()
                .map_err(|_| bad(format!("bad rank {:?}", &row[2])))?;
            match m.rank_of(&row[1]) {
                Some(r) if r == rank => m.insert(&row[0], &row[1])?,
                Some(r) => return Err(bad(format!("rank {rank} disagrees with corpus rank {r}"))),
                None => return Err(bad(format!("unknown first party {:?}", &row[1]))),
            }
        }
        Ok(m)
    }

    fn without_edges(&self, level: Level) -> Self {
        PresenceMatrix {
            platform: self.platform,
            level,
            first_parties: self.first_parties.clone(),
            presence: BTreeMap::new(),
            unattributed: self.unattributed.clone(),
            non_tracker: self.non_tracker.clone(),
        }
    }
}

fn corpus_platform(corpus: &[ObservationRecord]) -> Result<Platform> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::EmptyMarket("corpus has no first parties".into()))?
        .platform;
    if let Some(r) = corpus.iter().find(|r| r.platform != first) {
        return Err(Error::Record {
            id: r.first_party_id.clone(),
            message: format!("platform {} in a {first} corpus", r.platform),
        });
    }
    Ok(first)
}

#[derive(Default)]
struct RecordMatches<'a> {
    entities: BTreeSet<&'a str>,
    unattributed: BTreeSet<&'a str>,
    non_tracker: BTreeSet<&'a str>,
}

fn match_record<'a>(
    record: &'a ObservationRecord,
    kb: &'a KnowledgeBase,
    level: Level,
) -> RecordMatches<'a> {
    let mut out = RecordMatches::default();
    let hosts = record
        .third_party_hosts
        .iter()
        .map(|h| (h, kb.resolve_host(h)));
    let libs = record
        .third_party_libraries
        .iter()
        .map(|p| (p, kb.match_library(p)));
    for (evidence, matched) in hosts.chain(libs) {
        let Some(id) = matched else {
            out.unattributed.insert(evidence.as_str());
            continue;
        };
        let entity = kb.entity(id).expect("index points at a known entity");
        if !entity.is_tracker {
            out.non_tracker.insert(id);
            continue;
        }
        let key = match level {
            Level::Subsidiary => id,
            Level::Parent => kb.ultimate_parent(id).expect("known entity"),
        };
        out.entities.insert(key);
    }
    out
}

/// Builds the presence matrix for a corpus.
///
/// Host and library evidence are OR-combined: a first party contributes one
/// edge per entity however many hosts or libraries point at it. At parent
/// level every match is first replaced by its ultimate parent, so two
/// subsidiaries of one company on the same first party yield a single edge.
/// Non-tracker entities never receive edges; they, and unmatched evidence,
/// are tallied for diagnostics.
pub fn build_presence(
    corpus: &[ObservationRecord],
    kb: &KnowledgeBase,
    level: Level,
) -> Result<PresenceMatrix> {
    let platform = corpus_platform(corpus)?;
    let mut matrix = PresenceMatrix::new(
        platform,
        level,
        corpus.iter().map(|r| (r.first_party_id.clone(), r.rank)),
    )?;

    let per_record: Vec<RecordMatches<'_>> = corpus
        .par_iter()
        .map(|r| match_record(r, kb, level))
        .collect();

    for (record, matches) in corpus.iter().zip(per_record) {
        for entity in matches.entities {
            matrix
                .presence
                .entry(entity.to_string())
                .or_default()
                .insert(record.first_party_id.clone(), record.rank);
        }
        for key in matches.unattributed {
            *matrix.unattributed.entry(key.to_string()).or_default() += 1;
        }
        for key in matches.non_tracker {
            *matrix.non_tracker.entry(key.to_string()).or_default() += 1;
        }
    }
    Ok(matrix)
}

/// Collapses a subsidiary-level matrix onto ultimate parents under `kb`.
///
/// Each parent's presence set is the union of its tree's presence sets.
pub fn consolidate(matrix: &PresenceMatrix, kb: &KnowledgeBase) -> Result<PresenceMatrix> {
    if matrix.level != Level::Subsidiary {
        return Err(Error::LevelMismatch(
            "consolidation needs a subsidiary-level matrix".into(),
        ));
    }
    let mut out = matrix.without_edges(Level::Parent);
    for (entity, fps) in &matrix.presence {
        let parent = kb.ultimate_parent(entity)?;
        out.presence
            .entry(parent.to_string())
            .or_default()
            .extend(fps.iter().map(|(k, v)| (k.clone(), *v)));
    }
    Ok(out)
}

pub fn check_fraction(name: &str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::Parameter(format!(
            "{name} must be in [0, 1], got {value}"
        )));
    }
    Ok(())
}

fn meets_coverage(prevalence: usize, corpus_size: usize, min_fraction: f64) -> bool {
    prevalence as f64 + COVERAGE_EPSILON >= min_fraction * corpus_size as f64
}

/// Removes every entity present on fewer than `min_fraction` of the corpus.
/// An entity at exactly the threshold is kept.
pub fn apply_coverage_threshold(
    matrix: &PresenceMatrix,
    min_fraction: f64,
) -> Result<PresenceMatrix> {
    check_fraction("min_fraction", min_fraction)?;
    let n = matrix.corpus_size();
    let mut out = matrix.clone();
    out.presence
        .retain(|_, fps| meets_coverage(fps.len(), n, min_fraction));
    Ok(out)
}

/// When the coverage threshold is applied relative to parent consolidation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdStage {
    /// Threshold the entities of the analysis level (after consolidation).
    #[default]
    Consolidated,
    /// Threshold subsidiaries first, then consolidate the survivors.
    PreConsolidation,
}

/// How a subsidiary-level matrix is turned into the market that metrics and
/// concentration indices are computed over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketConfig {
    pub level: Level,
    pub min_coverage: f64,
    pub threshold_stage: ThresholdStage,
    pub rank_weight: RankWeight,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            level: Level::Subsidiary,
            min_coverage: DEFAULT_MIN_COVERAGE,
            threshold_stage: ThresholdStage::Consolidated,
            rank_weight: RankWeight::Reciprocal,
        }
    }
}

impl MarketConfig {
    pub fn at(level: Level) -> Self {
        MarketConfig {
            level,
            ..Default::default()
        }
    }

    pub fn with_min_coverage(mut self, min_coverage: f64) -> Self {
        self.min_coverage = min_coverage;
        self
    }

    /// Consolidates (at parent level) and thresholds a subsidiary-level
    /// matrix.
    pub fn market_matrix(
        &self,
        subsidiary: &PresenceMatrix,
        kb: &KnowledgeBase,
    ) -> Result<PresenceMatrix> {
        if subsidiary.level != Level::Subsidiary {
            return Err(Error::LevelMismatch(
                "market construction needs a subsidiary-level matrix".into(),
            ));
        }
        check_fraction("min_coverage", self.min_coverage)?;
        match (self.level, self.threshold_stage) {
            (Level::Subsidiary, _) => apply_coverage_threshold(subsidiary, self.min_coverage),
            (Level::Parent, ThresholdStage::Consolidated) => {
                apply_coverage_threshold(&consolidate(subsidiary, kb)?, self.min_coverage)
            }
            (Level::Parent, ThresholdStage::PreConsolidation) => consolidate(
                &apply_coverage_threshold(subsidiary, self.min_coverage)?,
                kb,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::TrackerEntity;

    fn obs(id: &str, rank: u32, hosts: &[&str], libs: &[&str]) -> ObservationRecord {
        ObservationRecord {
            first_party_id: id.into(),
            platform: Platform::Web,
            rank,
            third_party_hosts: hosts.iter().map(|s| s.to_string()).collect(),
            third_party_libraries: libs.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn google_kb() -> KnowledgeBase {
        KnowledgeBase::from_entities(vec![
            TrackerEntity::new("google"),
            TrackerEntity::new("doubleclick")
                .with_domains(["doubleclick.net"])
                .with_parent("google"),
            TrackerEntity::new("google_analytics")
                .with_domains(["google-analytics.com"])
                .with_parent("google"),
            TrackerEntity::new("trackernet")
                .with_domains(["tracker.net"])
                .with_prefixes(["net.tracker"]),
            TrackerEntity::new("cdn")
                .with_domains(["cdn.io"])
                .non_tracker(),
        ])
        .unwrap()
    }

    fn fp_set(m: &PresenceMatrix, e: &str) -> Vec<(String, u32)> {
        m.presence(e)
            .map(|p| p.iter().map(|(k, v)| (k.clone(), *v)).collect())
            .unwrap_or_default()
    }

    #[test]
    fn parent_level_deduplicates_subsidiaries() {
        let corpus = vec![obs(
            "s1",
            1,
            &["doubleclick.net", "google-analytics.com"],
            &[],
        )];
        let kb = google_kb();
        let parent = build_presence(&corpus, &kb, Level::Parent).unwrap();
        assert_eq!(parent.prevalence("google"), 1);
        assert_eq!(parent.len(), 1);

        let sub = build_presence(&corpus, &kb, Level::Subsidiary).unwrap();
        assert_eq!(sub.prevalence("doubleclick"), 1);
        assert_eq!(sub.prevalence("google_analytics"), 1);
        assert!(!sub.contains("google"));
    }

    #[test]
    fn hand_traced_join_with_unattributed_bucket() {
        let corpus = vec![
            obs("s1", 1, &["tracker.net"], &[]),
            obs("s2", 2, &["mystery.io"], &[]),
            obs("s3", 3, &["tracker.net"], &[]),
        ];
        let m = build_presence(&corpus, &google_kb(), Level::Subsidiary).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(
            fp_set(&m, "trackernet"),
            vec![("s1".into(), 1), ("s3".into(), 3)]
        );
        assert_eq!(m.unattributed().get("mystery.io"), Some(&1));
        assert_eq!(m.unattributed().len(), 1);
        assert_eq!(m.corpus_size(), 3);
    }

    #[test]
    fn host_and_library_evidence_give_one_edge() {
        let corpus = vec![obs(
            "s1",
            1,
            &["a.tracker.net", "tracker.net"],
            &["net.tracker.sdk"],
        )];
        let m = build_presence(&corpus, &google_kb(), Level::Subsidiary).unwrap();
        assert_eq!(m.prevalence("trackernet"), 1);
    }

    #[test]
    fn non_trackers_are_diagnostics_only() {
        let corpus = vec![
            obs("s1", 1, &["cdn.io"], &[]),
            obs("s2", 2, &["x.cdn.io"], &[]),
        ];
        let m = build_presence(&corpus, &google_kb(), Level::Subsidiary).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.non_tracker().get("cdn"), Some(&2));
        assert!(m.unattributed().is_empty());
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let err = build_presence(&[], &google_kb(), Level::Subsidiary).unwrap_err();
        assert!(err.is_empty_result());
    }

    #[test]
    fn consolidation_equals_parent_level_build() {
        let corpus = vec![
            obs("s1", 1, &["doubleclick.net"], &[]),
            obs("s2", 2, &["google-analytics.com", "doubleclick.net"], &[]),
            obs("s3", 3, &["tracker.net"], &[]),
        ];
        let kb = google_kb();
        let sub = build_presence(&corpus, &kb, Level::Subsidiary).unwrap();
        let direct = build_presence(&corpus, &kb, Level::Parent).unwrap();
        assert_eq!(consolidate(&sub, &kb).unwrap(), direct);
        assert_eq!(direct.prevalence("google"), 2);
        assert!(consolidate(&direct, &kb).is_err());
    }

    fn wide_matrix(corpus_size: u32, prevalences: &[(&str, u32)]) -> PresenceMatrix {
        let mut m = PresenceMatrix::new(
            Platform::Web,
            Level::Subsidiary,
            (1..=corpus_size).map(|r| (format!("s{r}"), r)),
        )
        .unwrap();
        for (e, n) in prevalences {
            for r in 1..=*n {
                m.insert(e, &format!("s{r}")).unwrap();
            }
        }
        m
    }

    #[test]
    fn coverage_boundary_is_kept() {
        let m = wide_matrix(5000, &[("low", 24), ("edge", 25), ("high", 300)]);
        let t = apply_coverage_threshold(&m, DEFAULT_MIN_COVERAGE).unwrap();
        assert!(!t.contains("low"));
        assert!(t.contains("edge"));
        assert!(t.contains("high"));
    }

    #[test]
    fn coverage_extremes() {
        let m = wide_matrix(10, &[("a", 10), ("b", 3)]);
        assert_eq!(apply_coverage_threshold(&m, 0.0).unwrap(), m);
        let full = apply_coverage_threshold(&m, 1.0).unwrap();
        assert!(full.contains("a") && !full.contains("b"));
        assert!(apply_coverage_threshold(&m, 1.5).is_err());
        assert!(apply_coverage_threshold(&m, -0.1).is_err());
        assert!(apply_coverage_threshold(&m, f64::NAN).is_err());
    }

    #[test]
    fn threshold_stage_changes_which_parents_survive() {
        // Two subsidiaries of p, each on 1 of 4 sites; together on 2.
        let kb = KnowledgeBase::from_entities(vec![
            TrackerEntity::new("p"),
            TrackerEntity::new("a").with_parent("p"),
            TrackerEntity::new("b").with_parent("p"),
        ])
        .unwrap();
        let mut m = PresenceMatrix::new(
            Platform::Web,
            Level::Subsidiary,
            (1..=4).map(|r| (format!("s{r}"), r)),
        )
        .unwrap();
        m.insert("a", "s1").unwrap();
        m.insert("b", "s2").unwrap();
        let after = MarketConfig::at(Level::Parent).with_min_coverage(0.5);
        assert!(after.market_matrix(&m, &kb).unwrap().contains("p"));
        let before = MarketConfig {
            threshold_stage: ThresholdStage::PreConsolidation,
            ..after
        };
        assert!(before.market_matrix(&m, &kb).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let corpus = vec![
            obs("s1", 1, &["doubleclick.net"], &[]),
            obs("s2", 2, &["tracker.net", "doubleclick.net"], &[]),
        ];
        let m = build_presence(&corpus, &google_kb(), Level::Subsidiary).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "entity_id,first_party_id,rank\ndoubleclick,s1,1\ndoubleclick,s2,2\ntrackernet,s2,2\n"
        );
        let back = PresenceMatrix::read_csv(buf.as_slice(), &corpus, Level::Subsidiary).unwrap();
        assert_eq!(
            back.edges().collect::<Vec<_>>(),
            m.edges().collect::<Vec<_>>()
        );
    }
}
