//! Concentration analysis: HHI, regulatory classification, combined
//! web+mobile markets and de-merger counterfactuals.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attribution::{MarketConfig, PresenceMatrix};
use crate::error::{Error, Result, Warning};
use crate::format::sig;
use crate::kb::KnowledgeBase;
use crate::metrics::{compute_metrics_with, MetricsTable};
use crate::model::{Level, Platform, Weight};

/// Tolerance on Σ s_i = 1.
pub const SHARE_SUM_TOLERANCE: f64 = 1e-9;
/// EU: markets above this HHI are scrutinised for consolidation.
pub const EU_HHI_THRESHOLD: f64 = 0.1;
/// EU: a consolidation raising HHI by more than this is a concern.
pub const EU_DELTA_THRESHOLD: f64 = 0.025;
/// US: an HHI above this is sufficient for intervention.
pub const US_HHI_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct MarketShares {
    pub weight: Weight,
    pub level: Level,
    shares: BTreeMap<String, f64>,
}

impl MarketShares {
    pub fn new(weight: Weight, level: Level, shares: BTreeMap<String, f64>) -> Result<Self> {
        if shares.is_empty() {
            return Err(Error::EmptyMarket("no firms in market".into()));
        }
        if let Some((id, s)) = shares.iter().find(|(_, s)| !(**s > 0.0 && **s <= 1.0)) {
            return Err(Error::Parameter(format!(
                "share of {id:?} is {s}, outside (0, 1]"
            )));
        }
        check_sum(shares.values().sum())?;
        Ok(MarketShares {
            weight,
            level,
            shares,
        })
    }

    /// Normalizes non-negative masses (prevalence or prominence) into shares.
    /// Zero-mass entries are dropped.
    pub fn from_masses(
        weight: Weight,
        level: Level,
        masses: &BTreeMap<String, f64>,
    ) -> Result<Self> {
        let total: f64 = masses.values().sum();
        if total <= 0.0 {
            return Err(Error::EmptyMarket("market has zero total mass".into()));
        }
        let shares = masses
            .iter()
            .filter(|(_, m)| **m > 0.0)
            .map(|(id, m)| (id.clone(), m / total))
            .collect();
        Self::new(weight, level, shares)
    }

    /// Number of firms.
    pub fn n(&self) -> usize {
        self.shares.len()
    }

    pub fn get(&self, entity: &str) -> Option<f64> {
        self.shares.get(entity).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.shares.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

fn check_sum(sum: f64) -> Result<()> {
    if (sum - 1.0).abs() > SHARE_SUM_TOLERANCE {
        return Err(Error::SharesSum { sum });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    HighlyCompetitive,
    Unconcentrated,
    Moderate,
    HighlyConcentrated,
}

impl Classification {
    /// Below 0.01 highly competitive, below 0.15 unconcentrated, 0.15 to 0.25
    /// inclusive moderate, above 0.25 highly concentrated.
    pub fn of(hhi: f64) -> Self {
        if hhi < 0.01 {
            Classification::HighlyCompetitive
        } else if hhi < 0.15 {
            Classification::Unconcentrated
        } else if hhi <= 0.25 {
            Classification::Moderate
        } else {
            Classification::HighlyConcentrated
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Classification::HighlyCompetitive => "highly_competitive",
            Classification::Unconcentrated => "unconcentrated",
            Classification::Moderate => "moderate",
            Classification::HighlyConcentrated => "highly_concentrated",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub hhi: f64,
    pub classification: Classification,
    pub eu_flag: bool,
    pub us_flag: bool,
}

impl ConcentrationReport {
    pub fn from_hhi(hhi: f64) -> Self {
        ConcentrationReport {
            hhi,
            classification: Classification::of(hhi),
            eu_flag: hhi > EU_HHI_THRESHOLD,
            us_flag: hhi > US_HHI_THRESHOLD,
        }
    }
}

/// Herfindahl-Hirschman index, Σ s_i², with its classification.
pub fn hhi(shares: &MarketShares) -> Result<ConcentrationReport> {
    check_sum(shares.shares.values().sum())?;
    let value = shares.shares.values().map(|s| s * s).sum();
    Ok(ConcentrationReport::from_hhi(value))
}

pub fn market_shares(table: &MetricsTable, weight: Weight) -> Result<MarketShares> {
    if table.is_empty() {
        return Err(Error::EmptyMarket(format!(
            "{} {} table has no rows",
            table.platform, table.level
        )));
    }
    let shares = table
        .rows
        .iter()
        .map(|r| {
            let s = match weight {
                Weight::Ish => r.ish,
                Weight::Prowish => r.prowish,
            };
            (r.entity_id.clone(), s)
        })
        .collect();
    MarketShares::new(weight, table.level, shares)
}

/// Web and mobile markets merged into one by summing each firm's prevalence
/// and prominence across platforms. Ranks stay platform-local.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedMarket {
    pub level: Level,
    pub prevalence: BTreeMap<String, f64>,
    pub prominence: BTreeMap<String, f64>,
    pub ish: MarketShares,
    pub prowish: MarketShares,
}

impl CombinedMarket {
    pub fn shares(&self, weight: Weight) -> &MarketShares {
        match weight {
            Weight::Ish => &self.ish,
            Weight::Prowish => &self.prowish,
        }
    }
}

pub fn combine_markets(web: &MetricsTable, mobile: &MetricsTable) -> Result<CombinedMarket> {
    if web.level != mobile.level {
        return Err(Error::LevelMismatch(format!(
            "cannot combine {} and {} tables",
            web.level, mobile.level
        )));
    }
    let mut prevalence: BTreeMap<String, f64> = BTreeMap::new();
    let mut prominence: BTreeMap<String, f64> = BTreeMap::new();
    for r in web.rows.iter().chain(&mobile.rows) {
        *prevalence.entry(r.entity_id.clone()).or_default() += r.prevalence as f64;
        *prominence.entry(r.entity_id.clone()).or_default() += r.prominence;
    }
    if prevalence.is_empty() {
        return Err(Error::EmptyMarket("both markets are empty".into()));
    }
    let ish = MarketShares::from_masses(Weight::Ish, web.level, &prevalence)?;
    let prowish = MarketShares::from_masses(Weight::Prowish, web.level, &prominence)?;
    Ok(CombinedMarket {
        level: web.level,
        prevalence,
        prominence,
        ish,
        prowish,
    })
}

/// Which market a result refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Web,
    Mobile,
    Combined,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Web => "web",
            Scope::Mobile => "mobile",
            Scope::Combined => "combined",
        }
    }
}

impl From<Platform> for Scope {
    fn from(p: Platform) -> Self {
        match p {
            Platform::Web => Scope::Web,
            Platform::Mobile => Scope::Mobile,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "web" => Ok(Scope::Web),
            "mobile" => Ok(Scope::Mobile),
            "combined" => Ok(Scope::Combined),
            other => Err(Error::Parameter(format!("unknown platform {other:?}"))),
        }
    }
}

/// One row of the concentration grid: both share measures for one market at
/// one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationRow {
    pub scope: Scope,
    pub level: Level,
    pub ish: ConcentrationReport,
    pub prowish: ConcentrationReport,
}

impl ConcentrationRow {
    pub fn for_table(table: &MetricsTable) -> Result<Self> {
        Ok(ConcentrationRow {
            scope: table.platform.into(),
            level: table.level,
            ish: hhi(&market_shares(table, Weight::Ish)?)?,
            prowish: hhi(&market_shares(table, Weight::Prowish)?)?,
        })
    }

    pub fn for_combined(market: &CombinedMarket) -> Result<Self> {
        Ok(ConcentrationRow {
            scope: Scope::Combined,
            level: market.level,
            ish: hhi(&market.ish)?,
            prowish: hhi(&market.prowish)?,
        })
    }
}

pub const GRID_COLUMNS: [&str; 10] = [
    "market",
    "level",
    "ish_hhi",
    "ish_classification",
    "ish_eu_flag",
    "ish_us_flag",
    "prowish_hhi",
    "prowish_classification",
    "prowish_eu_flag",
    "prowish_us_flag",
];

pub fn write_grid_csv<W: Write>(out: W, rows: &[ConcentrationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GRID_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.scope.as_str().to_string(),
            r.level.to_string(),
            sig(r.ish.hhi),
            r.ish.classification.to_string(),
            r.ish.eu_flag.to_string(),
            r.ish.us_flag.to_string(),
            sig(r.prowish.hhi),
            r.prowish.classification.to_string(),
            r.prowish.eu_flag.to_string(),
            r.prowish.us_flag.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergerScenario {
    pub parent_id: String,
    pub subsidiary_ids: Vec<String>,
    pub platform: Scope,
    pub weight: Weight,
    pub hhi_actual: f64,
    pub hhi_counterfactual: f64,
    /// `hhi_actual - hhi_counterfactual`.
    pub delta: f64,
    /// Delta above 0.025 in a market already above 0.1.
    pub eu_concern: bool,
}

/// A scenario request, one per line of a scenarios file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub parent_id: String,
    #[serde(default)]
    pub subsidiary_ids: Vec<String>,
    pub platform: Scope,
}

pub fn read_scenarios(path: impl AsRef<Path>) -> Result<Vec<ScenarioSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Line {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn check_ownership<S: AsRef<str>>(
    kb: &KnowledgeBase,
    parent_id: &str,
    subsidiary_ids: &[S],
) -> Result<()> {
    if !kb.contains(parent_id) {
        return Err(Error::Scenario(format!("unknown parent {parent_id:?}")));
    }
    for sub in subsidiary_ids {
        let sub = sub.as_ref();
        if !kb.contains(sub) {
            return Err(Error::Scenario(format!("unknown subsidiary {sub:?}")));
        }
        if !kb.is_owned_by(sub, parent_id) {
            return Err(Error::Scenario(format!(
                "{sub:?} is not owned by {parent_id:?}"
            )));
        }
    }
    Ok(())
}

/// Subsidiaries with no edge anywhere in their subtree contribute nothing.
fn absent_warnings<S: AsRef<str>>(
    matrices: &[&PresenceMatrix],
    kb: &KnowledgeBase,
    subsidiary_ids: &[S],
) -> Vec<Warning> {
    subsidiary_ids
        .iter()
        .map(AsRef::as_ref)
        .filter(|sub| {
            !matrices
                .iter()
                .any(|m| m.entities().any(|e| e == *sub || kb.is_owned_by(e, sub)))
        })
        .map(|sub| {
            Warning::new(
                format!("scenario {sub:?}"),
                "subsidiary absent from the presence data",
            )
        })
        .collect()
}

fn market_hhi(
    sub: &PresenceMatrix,
    kb: &KnowledgeBase,
    config: &MarketConfig,
    weight: Weight,
) -> Result<f64> {
    let table = compute_metrics_with(&config.market_matrix(sub, kb)?, config.rank_weight)?;
    Ok(hhi(&market_shares(&table, weight)?)?.hhi)
}

fn combined_hhi(
    web: &PresenceMatrix,
    mobile: &PresenceMatrix,
    kb: &KnowledgeBase,
    config: &MarketConfig,
    weight: Weight,
) -> Result<f64> {
    let table = |m: &PresenceMatrix| -> Result<MetricsTable> {
        let market = config.market_matrix(m, kb)?;
        if market.is_empty() {
            Ok(MetricsTable::empty(market.platform, market.level))
        } else {
            compute_metrics_with(&market, config.rank_weight)
        }
    };
    let combined = combine_markets(&table(web)?, &table(mobile)?)?;
    Ok(hhi(combined.shares(weight))?.hhi)
}

fn scenario(
    parent_id: &str,
    subsidiary_ids: &[String],
    platform: Scope,
    weight: Weight,
    hhi_actual: f64,
    hhi_counterfactual: f64,
) -> MergerScenario {
    let delta = hhi_actual - hhi_counterfactual;
    MergerScenario {
        parent_id: parent_id.to_string(),
        subsidiary_ids: subsidiary_ids.to_vec(),
        platform,
        weight,
        hhi_actual,
        hhi_counterfactual,
        delta,
        eu_concern: delta > EU_DELTA_THRESHOLD && hhi_actual > EU_HHI_THRESHOLD,
    }
}

/// Parent-level HHI as owned today minus the HHI of a market in which each
/// listed subsidiary is independent.
///
/// The counterfactual rebuilds the whole market (consolidation, per-first-party
/// deduplication, threshold, shares) under a KB with the ownership links cut,
/// so co-occurrence between parent and subsidiary is accounted for exactly.
/// `config.level` is ignored; both sides are parent-level markets.
pub fn simulate_demerger(
    subsidiary_matrix: &PresenceMatrix,
    kb: &KnowledgeBase,
    parent_id: &str,
    subsidiary_ids: &[String],
    weight: Weight,
    config: &MarketConfig,
) -> Result<(MergerScenario, Vec<Warning>)> {
    check_ownership(kb, parent_id, subsidiary_ids)?;
    let config = MarketConfig {
        level: Level::Parent,
        ..*config
    };
    let warnings = absent_warnings(&[subsidiary_matrix], kb, subsidiary_ids);
    let actual = market_hhi(subsidiary_matrix, kb, &config, weight)?;
    let counterfactual = market_hhi(
        subsidiary_matrix,
        &kb.severed(subsidiary_ids),
        &config,
        weight,
    )?;
    Ok((
        scenario(
            parent_id,
            subsidiary_ids,
            subsidiary_matrix.platform.into(),
            weight,
            actual,
            counterfactual,
        ),
        warnings,
    ))
}

/// [`simulate_demerger`] over the combined web+mobile market.
pub fn simulate_demerger_combined(
    web: &PresenceMatrix,
    mobile: &PresenceMatrix,
    kb: &KnowledgeBase,
    parent_id: &str,
    subsidiary_ids: &[String],
    weight: Weight,
    config: &MarketConfig,
) -> Result<(MergerScenario, Vec<Warning>)> {
    check_ownership(kb, parent_id, subsidiary_ids)?;
    let config = MarketConfig {
        level: Level::Parent,
        ..*config
    };
    let warnings = absent_warnings(&[web, mobile], kb, subsidiary_ids);
    let actual = combined_hhi(web, mobile, kb, &config, weight)?;
    let counterfactual = combined_hhi(web, mobile, &kb.severed(subsidiary_ids), &config, weight)?;
    Ok((
        scenario(
            parent_id,
            subsidiary_ids,
            Scope::Combined,
            weight,
            actual,
            counterfactual,
        ),
        warnings,
    ))
}

pub const SCENARIO_COLUMNS: [&str; 8] = [
    "parent_id",
    "subsidiary_ids",
    "platform",
    "weight",
    "hhi_actual",
    "hhi_counterfactual",
    "delta",
    "eu_concern",
];

/// One CSV row per scenario; subsidiary ids are `;`-joined.
pub fn write_scenarios_csv<W: Write>(out: W, scenarios: &[MergerScenario]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCENARIO_COLUMNS)?;
    for s in scenarios {
        w.write_record([
            s.parent_id.clone(),
            s.subsidiary_ids.join(";"),
            s.platform.to_string(),
            s.weight.to_string(),
            sig(s.hhi_actual),
            sig(s.hhi_counterfactual),
            sig(s.delta),
            s.eu_concern.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}
