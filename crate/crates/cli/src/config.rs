//! Run settings: an optional TOML file, overridden field by field by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Deserialize;
use trackmarket::{
    KnowledgeBase, Level, MarketConfig, SuffixRuleSet, ThresholdStage, Weight, DEFAULT_MIN_COVERAGE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

/// Fields a config file may set. Relative paths resolve against the file's
/// directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kb: Option<PathBuf>,
    pub suffix_rules: Option<PathBuf>,
    pub web: Option<PathBuf>,
    pub mobile: Option<PathBuf>,
    pub level: Option<Level>,
    pub weight: Option<Weight>,
    pub min_coverage: Option<f64>,
    pub threshold_before_consolidation: Option<bool>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
    pub top: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut config.kb,
            &mut config.suffix_rules,
            &mut config.web,
            &mut config.mobile,
            &mut config.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }
}

/// Flags shared by the analysis subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Knowledge base JSON file.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Public suffix rules (defaults to the bundled list).
    #[arg(long)]
    pub suffix_rules: Option<PathBuf>,
    /// Market level: subsidiary or parent (default depends on the command).
    #[arg(long, value_parser = parse_level)]
    pub level: Option<Level>,
    /// Share weighting: ish or prowish (default: both where applicable).
    #[arg(long, value_parser = parse_weight)]
    pub weight: Option<Weight>,
    /// Minimum fraction of first parties an entity must appear on.
    #[arg(long)]
    pub min_coverage: Option<f64>,
    /// Apply the coverage threshold to subsidiaries before consolidating.
    #[arg(long)]
    pub threshold_before_consolidation: bool,
    /// Output format (default: csv).
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Write data output here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Emit only the first N rows.
    #[arg(long)]
    pub top: Option<usize>,
}

fn parse_level(s: &str) -> std::result::Result<Level, String> {
    s.parse()
        .map_err(|_| format!("expected subsidiary or parent, got {s:?}"))
}

fn parse_weight(s: &str) -> std::result::Result<Weight, String> {
    s.parse()
        .map_err(|_| format!("expected ish or prowish, got {s:?}"))
}

/// Flags merged over the config file.
#[derive(Debug, Clone)]
pub struct Settings {
    pub kb: Option<PathBuf>,
    pub suffix_rules: Option<PathBuf>,
    pub web: Option<PathBuf>,
    pub mobile: Option<PathBuf>,
    pub level: Option<Level>,
    pub weight: Option<Weight>,
    pub min_coverage: f64,
    pub stage: ThresholdStage,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub top: Option<usize>,
}

impl Settings {
    pub fn resolve(file: RunConfig, args: &CommonArgs) -> Result<Self> {
        let min_coverage = args
            .min_coverage
            .or(file.min_coverage)
            .unwrap_or(DEFAULT_MIN_COVERAGE);
        if !(0.0..=1.0).contains(&min_coverage) {
            bail!("--min-coverage must be in [0, 1], got {min_coverage}");
        }
        if args.top == Some(0) {
            bail!("--top must be at least 1");
        }
        let pre = args.threshold_before_consolidation
            || file.threshold_before_consolidation.unwrap_or(false);
        Ok(Settings {
            kb: args.kb.clone().or(file.kb),
            suffix_rules: args.suffix_rules.clone().or(file.suffix_rules),
            web: file.web,
            mobile: file.mobile,
            level: args.level.or(file.level),
            weight: args.weight.or(file.weight),
            min_coverage,
            stage: if pre {
                ThresholdStage::PreConsolidation
            } else {
                ThresholdStage::Consolidated
            },
            format: args.format.or(file.format).unwrap_or(Format::Csv),
            out: args.out.clone().or(file.out),
            top: args.top.or(file.top),
        })
    }

    pub fn market(&self, level: Level) -> MarketConfig {
        MarketConfig {
            level,
            min_coverage: self.min_coverage,
            threshold_stage: self.stage,
            ..MarketConfig::default()
        }
    }

    pub fn load_kb(&self) -> Result<KnowledgeBase> {
        let path = self
            .kb
            .as_ref()
            .context("no knowledge base given (use --kb or `kb` in the config file)")?;
        let kb = KnowledgeBase::load(path)
            .with_context(|| format!("loading knowledge base {}", path.display()))?;
        for w in kb.warnings() {
            eprintln!("warning: {w}");
        }
        Ok(kb)
    }

    pub fn suffix_rules(&self) -> Result<SuffixRuleSet> {
        match &self.suffix_rules {
            Some(p) => SuffixRuleSet::load(p)
                .with_context(|| format!("loading suffix rules {}", p.display())),
            None => Ok(SuffixRuleSet::bundled()),
        }
    }
}
