//! Prevalence, prominence and the two market-share measures.
//!
//! Prominence is the sum of reciprocal ranks over a tracker's first parties,
//! a popularity-weighted reach. ISH divides prevalence by total prevalence;
//! PROWISH divides prominence by total prominence. Both denominators run over
//! the entities present in the matrix, so thresholding before this step
//! changes every share.

use std::cmp::Ordering;
use std::io::Write;

use serde::Serialize;

use crate::attribution::PresenceMatrix;
use crate::error::{Error, Result};
use crate::format::{round_sig, sig};
use crate::kb::KnowledgeBase;
use crate::model::{Level, Platform, RankWeight};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityMetrics {
    pub entity_id: String,
    pub display_name: String,
    pub prevalence: usize,
    pub prominence: f64,
    pub ish: f64,
    pub prowish: f64,
    pub prevalence_rank: usize,
    pub prominence_rank: usize,
    /// `prevalence_rank - prominence_rank`; positive means the entity ranks
    /// higher by prominence than by prevalence.
    pub rank_change: i64,
}

/// Per-entity metrics for one market, sorted by prominence (descending).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub platform: Platform,
    pub level: Level,
    pub rows: Vec<EntityMetrics>,
}

pub const CSV_COLUMNS: [&str; 9] = [
    "entity_id",
    "display_name",
    "prevalence",
    "prominence",
    "ish",
    "prowish",
    "prevalence_rank",
    "prominence_rank",
    "rank_change",
];

pub fn prominence(matrix: &PresenceMatrix, entity: &str) -> Result<f64> {
    prominence_with(matrix, entity, RankWeight::Reciprocal)
}

pub fn prominence_with(matrix: &PresenceMatrix, entity: &str, weight: RankWeight) -> Result<f64> {
    let fps = matrix
        .presence(entity)
        .ok_or_else(|| Error::UnknownEntity(entity.to_string()))?;
    let mut ranks: Vec<u32> = fps.values().copied().collect();
    // Smallest terms first.
    ranks.sort_unstable_by(|a, b| b.cmp(a));
    Ok(ranks.into_iter().map(|r| weight.weight(r)).sum())
}

pub fn compute_metrics(matrix: &PresenceMatrix) -> Result<MetricsTable> {
    compute_metrics_with(matrix, RankWeight::Reciprocal)
}

pub fn compute_metrics_with(matrix: &PresenceMatrix, weight: RankWeight) -> Result<MetricsTable> {
    if matrix.is_empty() {
        return Err(Error::EmptyMarket(format!(
            "no {} {} entities left to measure",
            matrix.platform, matrix.level
        )));
    }
    let mut rows = Vec::with_capacity(matrix.len());
    for entity in matrix.entities() {
        rows.push(EntityMetrics {
            entity_id: entity.to_string(),
            display_name: entity.to_string(),
            prevalence: matrix.prevalence(entity),
            prominence: prominence_with(matrix, entity, weight)?,
            ish: 0.0,
            prowish: 0.0,
            prevalence_rank: 0,
            prominence_rank: 0,
            rank_change: 0,
        });
    }

    let total_prevalence: usize = rows.iter().map(|r| r.prevalence).sum();
    let total_prominence: f64 = rows.iter().map(|r| r.prominence).sum();
    for r in &mut rows {
        r.ish = r.prevalence as f64 / total_prevalence as f64;
        r.prowish = r.prominence / total_prominence;
    }

    // Rows come out of the matrix in ascending entity_id order, which a stable
    // sort keeps as the tie-break.
    rows.sort_by_key(|r| std::cmp::Reverse(r.prevalence));
    for (i, r) in rows.iter_mut().enumerate() {
        r.prevalence_rank = i + 1;
    }
    rows.sort_by(by_prominence);
    for (i, r) in rows.iter_mut().enumerate() {
        r.prominence_rank = i + 1;
        r.rank_change = r.prevalence_rank as i64 - r.prominence_rank as i64;
    }

    Ok(MetricsTable {
        platform: matrix.platform,
        level: matrix.level,
        rows,
    })
}

fn by_prominence(a: &EntityMetrics, b: &EntityMetrics) -> Ordering {
    b.prominence
        .total_cmp(&a.prominence)
        .then_with(|| a.entity_id.cmp(&b.entity_id))
}

impl MetricsTable {
    pub fn empty(platform: Platform, level: Level) -> Self {
        MetricsTable {
            platform,
            level,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, entity: &str) -> Option<&EntityMetrics> {
        self.rows.iter().find(|r| r.entity_id == entity)
    }

    /// Replaces entity ids with KB display names in the `display_name` column.
    pub fn with_display_names(mut self, kb: &KnowledgeBase) -> Self {
        for r in &mut self.rows {
            r.display_name = kb.display_name(&r.entity_id).to_string();
        }
        self
    }

    /// Combined share of the `k` largest entities by the given column.
    pub fn concentration_ratio(&self, k: usize, prowish: bool) -> f64 {
        let mut shares: Vec<f64> = self
            .rows
            .iter()
            .map(|r| if prowish { r.prowish } else { r.ish })
            .collect();
        shares.sort_by(|a, b| b.total_cmp(a));
        shares.into_iter().take(k).sum()
    }

    /// Writes the table (optionally only the first `top` rows) as CSV.
    pub fn write_csv<W: Write>(&self, out: W, top: Option<usize>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        for r in self.rows.iter().take(top.unwrap_or(usize::MAX)) {
            w.write_record([
                r.entity_id.clone(),
                r.display_name.clone(),
                r.prevalence.to_string(),
                sig(r.prominence),
                sig(r.ish),
                sig(r.prowish),
                r.prevalence_rank.to_string(),
                r.prominence_rank.to_string(),
                r.rank_change.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<output>", e))?;
        Ok(())
    }

    /// Writes one JSON object per row, floats rounded to 9 significant digits.
    pub fn write_jsonl<W: Write>(&self, mut out: W, top: Option<usize>) -> Result<()> {
        for r in self.rows.iter().take(top.unwrap_or(usize::MAX)) {
            let rounded = EntityMetrics {
                prominence: round_sig(r.prominence),
                ish: round_sig(r.ish),
                prowish: round_sig(r.prowish),
                ..r.clone()
            };
            serde_json::to_writer(&mut out, &rounded)?;
            out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankMovement {
    pub entity_id: String,
    pub prevalence_rank: usize,
    pub prominence_rank: usize,
    pub rank_change: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankMovementReport {
    /// The `top_n` most prevalent entities, in prevalence order.
    pub rows: Vec<RankMovement>,
    /// Fraction of all entities whose prominence rank is worse than their
    /// prevalence rank.
    pub fraction_less_prominent: f64,
}

pub fn rank_movement_report(table: &MetricsTable, top_n: usize) -> Result<RankMovementReport> {
    if top_n < 1 {
        return Err(Error::Parameter("top_n must be at least 1".into()));
    }
    if table.is_empty() {
        return Err(Error::EmptyMarket("metrics table has no rows".into()));
    }
    let mut by_prevalence: Vec<&EntityMetrics> = table.rows.iter().collect();
    by_prevalence.sort_by_key(|r| r.prevalence_rank);
    let rows = by_prevalence
        .into_iter()
        .take(top_n)
        .map(|r| RankMovement {
            entity_id: r.entity_id.clone(),
            prevalence_rank: r.prevalence_rank,
            prominence_rank: r.prominence_rank,
            rank_change: r.rank_change,
        })
        .collect();
    let falling = table.rows.iter().filter(|r| r.rank_change < 0).count();
    Ok(RankMovementReport {
        rows,
        fraction_less_prominent: falling as f64 / table.len() as f64,
    })
}
