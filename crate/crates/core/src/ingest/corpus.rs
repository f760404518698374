use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::{
    filter_first_party, normalize_app, ObservationRecord, RawAppRecord, RawWebRecord, SuffixRuleSet,
};
use crate::error::{Error, Result, Warning};
use crate::model::Platform;

/// Records produced from one corpus file, plus the non-fatal warnings raised
/// along the way.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ingested {
    pub records: Vec<ObservationRecord>,
    pub warnings: Vec<Warning>,
}

pub fn load_corpus(
    path: impl AsRef<Path>,
    platform: Platform,
    rules: &SuffixRuleSet,
) -> Result<Ingested> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, platform, rules)
}

/// Parses a JSON Lines corpus of raw records. Lines are processed in parallel;
/// output order is file order.
pub fn parse_corpus(text: &str, platform: Platform, rules: &SuffixRuleSet) -> Result<Ingested> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();

    let parsed: Vec<Result<(ObservationRecord, Vec<Warning>)>> = lines
        .par_iter()
        .map(|&(line, content)| {
            parse_line(content, platform, rules).map_err(|e| line_error(line, e))
        })
        .collect();

    let mut out = Ingested::default();
    let mut line_numbers = Vec::with_capacity(parsed.len());
    for ((line, _), result) in lines.iter().zip(parsed) {
        let (record, warnings) = result?;
        out.warnings.extend(
            warnings
                .into_iter()
                .map(|w| Warning::new(format!("line {line}: {}", w.context), w.message)),
        );
        out.records.push(record);
        line_numbers.push(*line);
    }
    validate_unique(&out.records, &line_numbers)?;
    Ok(out)
}

fn parse_line(
    content: &str,
    platform: Platform,
    rules: &SuffixRuleSet,
) -> Result<(ObservationRecord, Vec<Warning>)> {
    match platform {
        Platform::Web => {
            let raw: RawWebRecord = serde_json::from_str(content)?;
            filter_first_party(&raw, rules)
        }
        Platform::Mobile => {
            let raw: RawAppRecord = serde_json::from_str(content)?;
            normalize_app(&raw, rules)
        }
    }
}

fn line_error(line: usize, e: Error) -> Error {
    Error::Line {
        line,
        message: e.to_string(),
    }
}

/// Checks that first-party ids and ranks are each unique across a corpus.
fn validate_unique(records: &[ObservationRecord], lines: &[usize]) -> Result<()> {
    let mut by_id: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut by_rank: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_id.entry(&r.first_party_id).or_default().push(i);
        by_rank.entry(r.rank).or_default().push(i);
    }

    let mut problems = Vec::new();
    for (id, idx) in by_id.iter().filter(|(_, v)| v.len() > 1) {
        let at: Vec<String> = idx.iter().map(|&i| lines[i].to_string()).collect();
        problems.push(format!(
            "duplicate first_party_id {id:?} at lines {}",
            at.join(", ")
        ));
    }
    for (rank, idx) in by_rank.iter().filter(|(_, v)| v.len() > 1) {
        let who: Vec<String> = idx
            .iter()
            .map(|&i| format!("{:?} (line {})", records[i].first_party_id, lines[i]))
            .collect();
        problems.push(format!("duplicate rank {rank}: {}", who.join(", ")));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Corpus(problems))
    }
}

/// Writes normalized observations as JSON Lines, one record per line.
pub fn write_observations<W: Write>(mut out: W, records: &[ObservationRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

/// Reads a normalized observation file written by [`write_observations`].
pub fn read_observations(path: impl AsRef<Path>) -> Result<Vec<ObservationRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (i, content) in text.lines().enumerate() {
        if content.trim().is_empty() {
            continue;
        }
        let record: ObservationRecord = serde_json::from_str(content).map_err(|e| Error::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        if record.rank == 0 {
            return Err(Error::Line {
                line: i + 1,
                message: "rank must be at least 1".into(),
            });
        }
        if let Some(first) = records.first().map(|r: &ObservationRecord| r.platform) {
            if record.platform != first {
                return Err(Error::Line {
                    line: i + 1,
                    message: format!("platform {} in a {} corpus", record.platform, first),
                });
            }
        }
        records.push(record);
        lines.push(i + 1);
    }
    validate_unique(&records, &lines)?;
    Ok(records)
}
