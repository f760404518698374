//! Market-concentration analytics for third-party tracker ecosystems.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`ingest`] turns raw crawl / app-analysis exports into
//!    [`ObservationRecord`]s with first-party destinations removed.
//! 2. [`kb`] loads the tracker-company knowledge base and resolves hosts and
//!    library packages to companies, including parent/subsidiary structure.
//! 3. [`attribution`] joins the two into a [`PresenceMatrix`]: which tracker
//!    entity is present on which first party, and at what popularity rank.
//! 4. [`metrics`] derives prevalence, prominence (sum of reciprocal ranks) and
//!    the two share measures, integration share (ISH) and prominence-weighted
//!    integration share (PROWISH).
//! 5. [`market`] computes Herfindahl-Hirschman indices, combined web+mobile
//!    markets and de-merger counterfactuals; [`overlap`] compares the tracker
//!    sets of equivalent web/mobile services and of two detection methods.

pub mod attribution;
pub mod error;
pub mod format;
pub mod ingest;
pub mod kb;
pub mod market;
pub mod metrics;
pub mod model;
pub mod overlap;

pub use attribution::{
    apply_coverage_threshold, build_presence, consolidate, MarketConfig, PresenceMatrix,
    ThresholdStage, DEFAULT_MIN_COVERAGE,
};
pub use error::{Error, Result, Warning};
pub use ingest::{
    filter_first_party, load_corpus, normalize_app, read_observations, registrable_domain,
    write_observations, ObservationRecord, RawAppRecord, RawWebRecord, SuffixRuleSet,
};
pub use kb::{KnowledgeBase, TrackerEntity};
pub use market::{
    combine_markets, hhi, market_shares, simulate_demerger, Classification, CombinedMarket,
    ConcentrationReport, MarketShares, MergerScenario,
};
pub use metrics::{compute_metrics, prominence, rank_movement_report, EntityMetrics, MetricsTable};
pub use model::{Level, Platform, RankWeight, Weight};
pub use overlap::{
    candidate_domain, compare_methods, overlap_rate, overlap_report, propose_pairs, OverlapReport,
    RecallComparison, ServicePair,
};
