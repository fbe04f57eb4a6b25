//! Run configuration: a TOML file with per-section defaults, overridable
//! field by field from CLI flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cotsel_core::corpus::FieldMapping;
use cotsel_core::scoring::{JudgeConfig, SolveRateConfig};
use cotsel_core::trace::{LengthUnit, MatchMode, RethinkLexicon, Segmenter, WhitespaceSegmenter, WordPunctSegmenter};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub log_level: Option<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub pool: PoolSection,
    #[serde(default)]
    pub lexicon: LexiconSection,
    #[serde(default)]
    pub length: LengthSection,
    #[serde(default)]
    pub judge: JudgeSection,
    #[serde(default)]
    pub solve_rate: SolveRateSection,
    #[serde(default)]
    pub selection: SelectionSection,
    #[serde(default)]
    pub cache: CacheSection,
    #[serde(default)]
    pub stats: StatsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PoolSection {
    pub path: Option<PathBuf>,
    pub question_key: Option<String>,
    pub response_key: Option<String>,
    pub gold_key: Option<String>,
    pub category_key: Option<String>,
    pub id_key: Option<String>,
    pub think_open: Option<String>,
    pub think_close: Option<String>,
}

impl PoolSection {
    pub fn field_mapping(&self) -> FieldMapping {
        let mut mapping = FieldMapping::default();
        if let Some(v) = &self.question_key {
            mapping.question_key = v.clone();
        }
        if let Some(v) = &self.response_key {
            mapping.response_key = v.clone();
        }
        if let Some(v) = &self.gold_key {
            mapping.gold_key = v.clone();
        }
        if let Some(v) = &self.category_key {
            mapping.category_key = v.clone();
        }
        if let Some(v) = &self.id_key {
            mapping.id_key = v.clone();
        }
        if let Some(v) = &self.think_open {
            mapping.think_open = v.clone();
        }
        if let Some(v) = &self.think_close {
            mapping.think_close = v.clone();
        }
        mapping
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct LexiconSection {
    /// Path to a TOML file with `keywords` and `match_mode`; the built-in
    /// default lexicon applies when absent.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconFile {
    pub keywords: Vec<String>,
    #[serde(default = "default_match_mode")]
    pub match_mode: MatchMode,
}

fn default_match_mode() -> MatchMode {
    MatchMode::WordBoundary
}

impl LexiconSection {
    pub fn load(&self) -> Result<RethinkLexicon> {
        let lexicon = match &self.path {
            None => RethinkLexicon::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read lexicon file {}", path.display()))?;
                let parsed: LexiconFile = toml::from_str(&text)
                    .with_context(|| format!("invalid lexicon file {}", path.display()))?;
                RethinkLexicon {
                    keywords: parsed.keywords,
                    match_mode: parsed.match_mode,
                }
            }
        };
        lexicon.validate().map_err(|e| anyhow::anyhow!(e))?;
        Ok(lexicon)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct LengthSection {
    pub unit: Option<LengthUnit>,
    /// "whitespace" or "wordpunct"
    pub tokenizer: Option<String>,
}

impl LengthSection {
    pub fn unit(&self) -> LengthUnit {
        self.unit.unwrap_or(LengthUnit::Tokens)
    }

    pub fn segmenter(&self) -> Result<Box<dyn Segmenter>> {
        match self.tokenizer.as_deref().unwrap_or("wordpunct") {
            "whitespace" => Ok(Box::new(WhitespaceSegmenter)),
            "wordpunct" => Ok(Box::new(WordPunctSegmenter)),
            other => bail!("unknown tokenizer `{other}` (expected whitespace|wordpunct)"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct JudgeSection {
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    pub prompt_template: Option<String>,
    pub positive_token: Option<String>,
    pub negative_token: Option<String>,
    pub max_inflight: Option<usize>,
    pub timeout_ms: Option<u64>,
    pub retries: Option<usize>,
    pub backoff_base_ms: Option<u64>,
    pub top_logprobs: Option<usize>,
    pub floor_margin: Option<f64>,
}

impl JudgeSection {
    pub fn judge_config(&self) -> Result<JudgeConfig> {
        let mut cfg = JudgeConfig {
            endpoint_url: self
                .endpoint_url
                .clone()
                .context("judge.endpoint_url is required for judge scoring")?,
            model_name: self.model_name.clone().unwrap_or_else(|| "judge".into()),
            ..JudgeConfig::default()
        };
        if let Some(v) = &self.prompt_template {
            cfg.prompt_template = v.clone();
        }
        if let Some(v) = &self.positive_token {
            cfg.positive_token = v.clone();
        }
        if let Some(v) = &self.negative_token {
            cfg.negative_token = v.clone();
        }
        if let Some(v) = self.max_inflight {
            cfg.max_inflight = v;
        }
        if let Some(v) = self.timeout_ms {
            cfg.timeout = Duration::from_millis(v);
        }
        if let Some(v) = self.retries {
            cfg.retries = v;
        }
        if let Some(v) = self.backoff_base_ms {
            cfg.backoff_base = Duration::from_millis(v);
        }
        if let Some(v) = self.top_logprobs {
            cfg.top_logprobs = v;
        }
        if let Some(v) = self.floor_margin {
            cfg.floor_margin = v;
        }
        cfg.validate().map_err(|e| anyhow::anyhow!(e))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SolveRateSection {
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    pub prompt_template: Option<String>,
    pub n_samples: Option<usize>,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_output_tokens: Option<usize>,
    pub hard_threshold: Option<f64>,
    pub max_inflight: Option<usize>,
    pub timeout_ms: Option<u64>,
    pub retries: Option<usize>,
    pub backoff_base_ms: Option<u64>,
}

impl SolveRateSection {
    pub fn solve_rate_config(&self) -> Result<SolveRateConfig> {
        let mut cfg = SolveRateConfig {
            endpoint_url: self
                .endpoint_url
                .clone()
                .context("solve_rate.endpoint_url is required for solve-rate scoring")?,
            model_name: self.model_name.clone().unwrap_or_else(|| "base".into()),
            ..SolveRateConfig::default()
        };
        if let Some(v) = &self.prompt_template {
            cfg.prompt_template = v.clone();
        }
        if let Some(v) = self.n_samples {
            cfg.n_samples = v;
        }
        if let Some(v) = self.temperature {
            cfg.temperature = v;
        }
        if let Some(v) = self.top_p {
            cfg.top_p = v;
        }
        if let Some(v) = self.max_output_tokens {
            cfg.max_output_tokens = v;
        }
        if let Some(v) = self.hard_threshold {
            cfg.hard_threshold = v;
        }
        if let Some(v) = self.max_inflight {
            cfg.max_inflight = v;
        }
        if let Some(v) = self.timeout_ms {
            cfg.timeout = Duration::from_millis(v);
        }
        if let Some(v) = self.retries {
            cfg.retries = v;
        }
        if let Some(v) = self.backoff_base_ms {
            cfg.backoff_base = Duration::from_millis(v);
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SelectionSection {
    pub strategy: Option<String>,
    pub fraction: Option<f64>,
    pub count: Option<usize>,
    pub w: Option<f64>,
    pub seed: Option<u64>,
    pub sft_format: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CacheSection {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct StatsSection {
    pub n_bins: Option<usize>,
    pub metrics_path: Option<PathBuf>,
    pub generations_path: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config file {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("invalid config file {}", p.display()))
            }
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("cotsel-out"))
    }
}
