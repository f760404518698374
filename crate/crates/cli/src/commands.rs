use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde_json::{json, Value};
use trackmarket::format::round_sig;
use trackmarket::market::{
    read_scenarios, simulate_demerger_combined, write_grid_csv, write_scenarios_csv,
    ConcentrationReport, ConcentrationRow, Scope,
};
use trackmarket::metrics::compute_metrics_with;
use trackmarket::overlap::{check_pairs, read_pairs_csv, write_pairs_csv};
use trackmarket::{
    build_presence, combine_markets, compare_methods as compare, consolidate, load_corpus,
    overlap_report, propose_pairs, read_observations, simulate_demerger, write_observations, Error,
    KnowledgeBase, Level, MergerScenario, MetricsTable, ObservationRecord, Platform,
    PresenceMatrix, RankWeight, Weight,
};

use crate::config::{CommonArgs, Format, Settings};

fn parse_platform(s: &str) -> std::result::Result<Platform, String> {
    s.parse()
        .map_err(|_| format!("expected web or mobile, got {s:?}"))
}

/// Buffers the whole output so a failure never leaves a partial file.
fn emit(settings: &Settings, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    match &settings.out {
        Some(path) => {
            std::fs::write(path, &buf).with_context(|| format!("writing {}", path.display()))
        }
        None => std::io::stdout()
            .lock()
            .write_all(&buf)
            .context("writing to stdout"),
    }
}

fn write_jsonl(out: &mut Vec<u8>, values: impl IntoIterator<Item = Value>) -> Result<()> {
    for v in values {
        serde_json::to_writer(&mut *out, &v)?;
        out.push(b'\n');
    }
    Ok(())
}

fn observations(path: &Path) -> Result<Vec<ObservationRecord>> {
    read_observations(path).with_context(|| format!("reading observations {}", path.display()))
}

fn required<'a>(
    flag: Option<&'a PathBuf>,
    fallback: Option<&'a PathBuf>,
    name: &str,
) -> Result<&'a PathBuf> {
    flag.or(fallback).with_context(|| {
        format!("no {name} observations given (use --{name} or `{name}` in the config file)")
    })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Which kind of export INPUT is.
    #[arg(long, value_parser = parse_platform)]
    pub platform: Platform,
    /// Raw corpus, one JSON record per line.
    pub input: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

pub fn ingest(args: &IngestArgs, settings: &Settings) -> Result<()> {
    let rules = settings.suffix_rules()?;
    let ingested = load_corpus(&args.input, args.platform, &rules)
        .with_context(|| format!("ingesting {}", args.input.display()))?;
    for w in &ingested.warnings {
        eprintln!("warning: {w}");
    }
    emit(settings, |out| {
        Ok(write_observations(out, &ingested.records)?)
    })?;
    eprintln!(
        "{} records, {} warnings",
        ingested.records.len(),
        ingested.warnings.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Normalized observation file.
    pub observations: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn report_coverage(sub: &PresenceMatrix, before: usize, market: &PresenceMatrix) {
    let unattributed = sub.unattributed();
    eprintln!(
        "{} {}: {} first parties, {} entities before threshold, {} after",
        market.platform,
        market.level,
        sub.corpus_size(),
        before,
        market.len()
    );
    if !unattributed.is_empty() {
        let mut top: Vec<(&String, &u64)> = unattributed.iter().collect();
        top.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let shown: Vec<String> = top
            .iter()
            .take(5)
            .map(|(k, n)| format!("{k} ({n})"))
            .collect();
        eprintln!(
            "unattributed evidence: {} distinct hosts/libraries; most common: {}",
            unattributed.len(),
            shown.join(", ")
        );
    }
    let non_tracker: u64 = sub.non_tracker().values().sum();
    if non_tracker > 0 {
        eprintln!("non-tracker matches skipped: {non_tracker}");
    }
}

fn market_table(
    records: &[ObservationRecord],
    kb: &KnowledgeBase,
    settings: &Settings,
    level: Level,
    verbose: bool,
) -> Result<MetricsTable> {
    let sub = build_presence(records, kb, Level::Subsidiary)?;
    let market = settings.market(level).market_matrix(&sub, kb)?;
    if verbose {
        let before = match level {
            Level::Subsidiary => sub.len(),
            Level::Parent => consolidate(&sub, kb)?.len(),
        };
        report_coverage(&sub, before, &market);
    }
    Ok(compute_metrics_with(&market, RankWeight::Reciprocal)?.with_display_names(kb))
}

pub fn metrics(args: &MetricsArgs, settings: &Settings) -> Result<()> {
    let kb = settings.load_kb()?;
    let records = observations(&args.observations)?;
    let table = market_table(
        &records,
        &kb,
        settings,
        settings.level.unwrap_or(Level::Subsidiary),
        true,
    )?;
    emit(settings, |out| {
        match settings.format {
            Format::Csv => table.write_csv(out, settings.top)?,
            Format::Jsonl => table.write_jsonl(out, settings.top)?,
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct HhiArgs {
    /// Normalized observation file (omit when using --combine).
    #[arg(required_unless_present = "combine", conflicts_with = "combine")]
    pub observations: Option<PathBuf>,
    /// Web and mobile observation files; adds combined-market rows.
    #[arg(long, num_args = 2, value_names = ["WEB", "MOBILE"])]
    pub combine: Option<Vec<PathBuf>>,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn report_json(r: &ConcentrationReport) -> Value {
    json!({
        "hhi": round_sig(r.hhi),
        "classification": r.classification.as_str(),
        "eu_flag": r.eu_flag,
        "us_flag": r.us_flag,
    })
}

pub fn hhi(args: &HhiArgs, settings: &Settings) -> Result<()> {
    let kb = settings.load_kb()?;
    let levels = match settings.level {
        Some(l) => vec![l],
        None => vec![Level::Subsidiary, Level::Parent],
    };
    let mut rows = Vec::new();
    match (&args.observations, &args.combine) {
        (Some(path), _) => {
            let records = observations(path)?;
            for &level in &levels {
                rows.push(ConcentrationRow::for_table(&market_table(
                    &records, &kb, settings, level, false,
                )?)?);
            }
        }
        (None, Some(paths)) => {
            let web = observations(&paths[0])?;
            let mobile = observations(&paths[1])?;
            let mut combined = Vec::new();
            for records in [&web, &mobile] {
                for &level in &levels {
                    let table = market_table(records, &kb, settings, level, false)?;
                    rows.push(ConcentrationRow::for_table(&table)?);
                    combined.push(table);
                }
            }
            let (web_tables, mobile_tables) = combined.split_at(levels.len());
            for (w, m) in web_tables.iter().zip(mobile_tables) {
                rows.push(ConcentrationRow::for_combined(&combine_markets(w, m)?)?);
            }
        }
        (None, None) => bail!("give an observation file or --combine WEB MOBILE"),
    }
    emit(settings, |out| match settings.format {
        Format::Csv => Ok(write_grid_csv(out, &rows)?),
        Format::Jsonl => write_jsonl(
            out,
            rows.iter().map(|r| {
                json!({
                    "market": r.scope.as_str(),
                    "level": r.level.as_str(),
                    "ish": report_json(&r.ish),
                    "prowish": report_json(&r.prowish),
                })
            }),
        ),
    })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct MergerArgs {
    /// Scenario file: one {parent_id, subsidiary_ids, platform} per line.
    #[arg(long)]
    pub scenarios: PathBuf,
    /// Web observation file (or `web` in the config file).
    #[arg(long)]
    pub web: Option<PathBuf>,
    /// Mobile observation file (or `mobile` in the config file).
    #[arg(long)]
    pub mobile: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn scenario_json(s: &MergerScenario) -> Value {
    json!({
        "parent_id": s.parent_id,
        "subsidiary_ids": s.subsidiary_ids,
        "platform": s.platform.as_str(),
        "weight": s.weight.as_str(),
        "hhi_actual": round_sig(s.hhi_actual),
        "hhi_counterfactual": round_sig(s.hhi_counterfactual),
        "delta": round_sig(s.delta),
        "eu_concern": s.eu_concern,
    })
}

pub fn simulate_merger(args: &MergerArgs, settings: &Settings) -> Result<()> {
    let kb = settings.load_kb()?;
    let specs = read_scenarios(&args.scenarios)
        .with_context(|| format!("reading scenarios {}", args.scenarios.display()))?;
    let needs = |scope: Scope| {
        specs
            .iter()
            .any(|s| s.platform == scope || s.platform == Scope::Combined)
    };
    let matrix = |flag: Option<&PathBuf>,
                  fallback: Option<&PathBuf>,
                  name: &str|
     -> Result<PresenceMatrix> {
        let records = observations(required(flag, fallback, name)?)?;
        Ok(build_presence(&records, &kb, Level::Subsidiary)?)
    };
    let web = if needs(Scope::Web) {
        Some(matrix(args.web.as_ref(), settings.web.as_ref(), "web")?)
    } else {
        None
    };
    let mobile = if needs(Scope::Mobile) {
        Some(matrix(
            args.mobile.as_ref(),
            settings.mobile.as_ref(),
            "mobile",
        )?)
    } else {
        None
    };
    let weights = match settings.weight {
        Some(w) => vec![w],
        None => vec![Weight::Ish, Weight::Prowish],
    };
    let config = settings.market(Level::Parent);

    let jobs: Vec<(usize, Weight)> = (0..specs.len())
        .flat_map(|i| weights.iter().map(move |&w| (i, w)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(i, weight)| {
            let s = &specs[i];
            let run = || match s.platform {
                Scope::Web => simulate_demerger(
                    web.as_ref().unwrap(),
                    &kb,
                    &s.parent_id,
                    &s.subsidiary_ids,
                    weight,
                    &config,
                ),
                Scope::Mobile => simulate_demerger(
                    mobile.as_ref().unwrap(),
                    &kb,
                    &s.parent_id,
                    &s.subsidiary_ids,
                    weight,
                    &config,
                ),
                Scope::Combined => simulate_demerger_combined(
                    web.as_ref().unwrap(),
                    mobile.as_ref().unwrap(),
                    &kb,
                    &s.parent_id,
                    &s.subsidiary_ids,
                    weight,
                    &config,
                ),
            };
            run().with_context(|| format!("scenario on line {}", i + 1))
        })
        .collect();
    let mut scenarios = Vec::with_capacity(results.len());
    for (idx, r) in results.into_iter().enumerate() {
        let (scenario, warnings) = r?;
        // Each warning once per scenario, not once per weight.
        if idx % weights.len() == 0 {
            for w in warnings {
                eprintln!("warning: {w}");
            }
        }
        scenarios.push(scenario);
    }
    emit(settings, |out| match settings.format {
        Format::Csv => Ok(write_scenarios_csv(out, &scenarios)?),
        Format::Jsonl => write_jsonl(out, scenarios.iter().map(scenario_json)),
    })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct OverlapArgs {
    /// Web observation file (or `web` in the config file).
    #[arg(long)]
    pub web: Option<PathBuf>,
    /// Mobile observation file (or `mobile` in the config file).
    #[arg(long)]
    pub mobile: Option<PathBuf>,
    /// Curated pairs CSV (web_first_party_id, mobile_first_party_id). Without
    /// it, pairs are proposed by matching package names to web domains.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Print the heuristic pair candidates for curation and stop.
    #[arg(long, conflicts_with = "pairs")]
    pub propose: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

pub fn overlap(args: &OverlapArgs, settings: &Settings) -> Result<()> {
    let web = observations(required(args.web.as_ref(), settings.web.as_ref(), "web")?)?;
    let mobile = observations(required(
        args.mobile.as_ref(),
        settings.mobile.as_ref(),
        "mobile",
    )?)?;
    let pairs = match &args.pairs {
        Some(path) => {
            let file = File::open(path)
                .with_context(|| format!("opening pairs file {}", path.display()))?;
            read_pairs_csv(file)
                .with_context(|| format!("reading pairs file {}", path.display()))?
        }
        None => propose_pairs(&web, &mobile, &settings.suffix_rules()?),
    };
    if args.propose {
        eprintln!("{} candidate pairs", pairs.len());
        return emit(settings, |out| Ok(write_pairs_csv(out, &pairs)?));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyMarket("no web/mobile pairs to compare".into()).into());
    }
    check_pairs(&pairs, &web, &mobile)?;

    let kb = settings.load_kb()?;
    let level = settings.level.unwrap_or(Level::Parent);
    let report = overlap_report(
        &pairs,
        &build_presence(&web, &kb, level)?,
        &build_presence(&mobile, &kb, level)?,
    )?;
    if report.excluded > 0 {
        eprintln!(
            "{} pairs without trackers on either side left out of the mean",
            report.excluded
        );
    }
    emit(settings, |out| match settings.format {
        Format::Csv => Ok(report.write_csv(out)?),
        Format::Jsonl => {
            let rows = report.per_pair.iter().map(|p| {
                json!({
                    "web_first_party_id": p.pair.web_first_party_id,
                    "mobile_first_party_id": p.pair.mobile_first_party_id,
                    "provenance": p.pair.provenance.as_str(),
                    "intersection": p.intersection_size,
                    "union": p.union_size,
                    "rate": p.rate.map(round_sig),
                })
            });
            let summary = json!({
                "mean_rate": report.mean_rate.map(round_sig),
                "level": report.level.as_str(),
                "pairs": report.per_pair.len(),
                "excluded": report.excluded,
            });
            write_jsonl(out, rows.chain([summary]))
        }
    })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Observations from the first detection method.
    pub a: PathBuf,
    /// Observations from the second detection method.
    pub b: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

pub fn compare_methods(args: &CompareArgs, settings: &Settings) -> Result<()> {
    let kb = settings.load_kb()?;
    let level = settings.level.unwrap_or(Level::Subsidiary);
    let (cmp, warnings) = compare(&observations(&args.a)?, &observations(&args.b)?, &kb, level)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    emit(settings, |out| match settings.format {
        Format::Csv => Ok(cmp.write_csv(out)?),
        Format::Jsonl => {
            let mut rows: Vec<Value> = cmp
                .per_first_party
                .iter()
                .map(|d| {
                    serde_json::to_value(d).map(|mut v| {
                        v["level"] = json!(level.as_str());
                        v
                    })
                })
                .collect::<serde_json::Result<_>>()?;
            let means: BTreeMap<&str, f64> = [
                ("mean_a_minus_b", cmp.mean_a_minus_b),
                ("mean_b_minus_a", cmp.mean_b_minus_a),
                ("mean_intersection", cmp.mean_intersection),
            ]
            .into_iter()
            .map(|(k, v)| (k, round_sig(v)))
            .collect();
            rows.push(json!({ "level": level.as_str(), "means": means }));
            write_jsonl(out, rows)
        }
    })
}
