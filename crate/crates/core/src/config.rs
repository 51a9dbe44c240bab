//! Pipeline configuration: a TOML file whose every key has a default.
//! Unknown keys and out-of-range values are rejected with their key path.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ablation::{
    BuildSettings, DEFAULT_SIZE, DIVERSITY_GENERAL_TOPICS, FLUENCY_GENERAL_TOPICS,
    FULL_CULTURAL_TOPICS, FULL_GENERAL_TOPICS, PARAPHRASES_PER_SAMPLE, PIVOT_LANGUAGE,
    SAMPLED_ORIGINALS,
};
use crate::context::{ContextPolicy, CONTEXT_STYLES, DEFAULT_CONTEXT_TEMPLATE, WIKI_SEARCH_LIMIT};
use crate::diversity::{
    DedupConfig, DedupSemantics, HnswParams, IndexKind, DEFAULT_EXACT_FALLBACK_LIMIT,
    DEFAULT_THRESHOLD,
};
use crate::eval::report::{EvalOptions, Metric};
use crate::eval::{SquadOptions, Tokenizer};
use crate::gateway::http::{
    AnthropicMessages, HttpEmbedder, HttpParaphraser, HttpTranslator, OpenAiChat, ReqwestTransport,
};
use crate::gateway::mock::{
    MockEmbedder, MockGenerator, MockParaphraser, MockTranslator, MockWiki,
};
use crate::gateway::wiki::MediaWikiClient;
use crate::gateway::{Gateway, ProviderBudget, ProviderError};
use crate::instruct::prompts::QA_PAIRS_PER_CONTEXT;
use crate::instruct::{TaskSettings, TaskTemperatures};
use crate::record::Task;
use crate::topics::{TopicSettings, TOPIC_TEMPERATURE};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("config key '{key}': {message}")]
    Invalid { key: String, message: String },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config key '{key}' = {value} is out of range ({expected})")]
    Range {
        key: String,
        value: String,
        expected: String,
    },
}

fn range(key: &str, value: impl ToString, expected: &str) -> ConfigError {
    ConfigError::Range {
        key: key.into(),
        value: value.to_string(),
        expected: expected.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicsConfig {
    pub general: usize,
    pub cultural: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub retry_limit: u32,
}

impl Default for TopicsConfig {
    fn default() -> Self {
        Self {
            general: FULL_GENERAL_TOPICS,
            cultural: FULL_CULTURAL_TOPICS,
            temperature: TOPIC_TEMPERATURE,
            max_tokens: 1024,
            retry_limit: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextConfig {
    pub p_wiki: f64,
    pub temperature: f64,
    pub template: String,
    pub max_tokens: u32,
    pub wiki_limit: u32,
    /// One weight per context style; uniform when absent.
    pub style_weights: Option<Vec<f64>>,
}

impl Default for ContextConfig {
    fn default() -> Self {
        let p = ContextPolicy::default();
        Self {
            p_wiki: p.p_wiki,
            temperature: p.temperature,
            template: DEFAULT_CONTEXT_TEMPLATE.into(),
            max_tokens: p.max_tokens,
            wiki_limit: WIKI_SEARCH_LIMIT,
            style_weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemperaturesConfig {
    pub closed_qa: f64,
    pub summarization: f64,
    pub conversation: f64,
    pub multiple_choice: f64,
}

impl Default for TemperaturesConfig {
    fn default() -> Self {
        let t = TaskTemperatures::default();
        Self {
            closed_qa: t.closed_qa,
            summarization: t.summarization,
            conversation: t.conversation,
            multiple_choice: t.multiple_choice,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TasksConfig {
    pub enabled: Vec<Task>,
    pub qa_pairs: usize,
    pub attempts: u32,
    pub max_tokens: u32,
    pub temperatures: TemperaturesConfig,
}

impl Default for TasksConfig {
    fn default() -> Self {
        Self {
            enabled: Task::ALL.to_vec(),
            qa_pairs: QA_PAIRS_PER_CONTEXT,
            attempts: 2,
            max_tokens: 1024,
            temperatures: TemperaturesConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupSection {
    pub threshold: f64,
    pub index: IndexKind,
    pub exact_fallback_limit: usize,
    pub semantics: DedupSemantics,
    pub hnsw_m: usize,
    pub hnsw_ef_construction: usize,
    pub hnsw_ef_search: usize,
}

impl Default for DedupSection {
    fn default() -> Self {
        let h = HnswParams::default();
        Self {
            threshold: DEFAULT_THRESHOLD,
            index: IndexKind::Auto,
            exact_fallback_limit: DEFAULT_EXACT_FALLBACK_LIMIT,
            semantics: DedupSemantics::KeepFirst,
            hnsw_m: h.m,
            hnsw_ef_construction: h.ef_construction,
            hnsw_ef_search: h.ef_search,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub pivot: String,
    pub paraphrases: usize,
    pub sampled: usize,
    pub fluency_topics: usize,
    pub diversity_topics: usize,
    pub max_extensions: u32,
    /// Language of external corpora fed to the no-properties variant.
    pub external_language: String,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            pivot: PIVOT_LANGUAGE.into(),
            paraphrases: PARAPHRASES_PER_SAMPLE,
            sampled: SAMPLED_ORIGINALS,
            fluency_topics: FLUENCY_GENERAL_TOPICS,
            diversity_topics: DIVERSITY_GENERAL_TOPICS,
            max_extensions: 8,
            external_language: "en".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Mock,
    Openai,
    Anthropic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// Mock only: share of structurally broken completions.
    pub mock_malformed_rate: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::Mock,
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            mock_malformed_rate: 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: ServiceKind,
    pub base_url: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub batch: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: ServiceKind::Mock,
            base_url: "https://api.openai.com/v1".into(),
            model: "text-embedding-3-large".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            batch: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub kind: ServiceKind,
    pub base_url: String,
    pub api_key_env: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            kind: ServiceKind::Mock,
            base_url: "http://localhost:8080".into(),
            api_key_env: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslatorConfig {
    pub kind: ServiceKind,
    pub base_url: String,
    pub api_key_env: Option<String>,
    pub languages: Vec<String>,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        let s = ServiceConfig::default();
        Self {
            kind: s.kind,
            base_url: s.base_url,
            api_key_env: None,
            languages: vec!["th".into(), "en".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParaphraserConfig {
    pub kind: ServiceKind,
    pub base_url: String,
    pub api_key_env: Option<String>,
    /// Passed to the paraphrase service untouched.
    pub controls: serde_json::Map<String, serde_json::Value>,
}

impl Default for ParaphraserConfig {
    fn default() -> Self {
        let s = ServiceConfig::default();
        Self {
            kind: s.kind,
            base_url: s.base_url,
            api_key_env: None,
            controls: serde_json::Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WikiConfig {
    pub kind: ServiceKind,
    pub api_url: String,
}

impl Default for WikiConfig {
    fn default() -> Self {
        Self {
            kind: ServiceKind::Mock,
            api_url: "https://th.wikipedia.org/w/api.php".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub generator: GeneratorConfig,
    pub embedder: EmbedderConfig,
    pub translator: TranslatorConfig,
    pub paraphraser: ParaphraserConfig,
    pub wiki: WikiConfig,
    pub max_concurrent: usize,
    pub requests_per_minute: u32,
    pub retry_limit: u32,
    pub timeout_secs: u64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        let b = ProviderBudget::default();
        Self {
            generator: GeneratorConfig::default(),
            embedder: EmbedderConfig::default(),
            translator: TranslatorConfig::default(),
            paraphraser: ParaphraserConfig::default(),
            wiki: WikiConfig::default(),
            max_concurrent: b.max_concurrent,
            requests_per_minute: b.requests_per_minute,
            retry_limit: b.retry_limit,
            timeout_secs: 60,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tokenizer: String,
    pub remove_articles: bool,
    pub comparison_metric: Metric,
    pub bleu_max_n: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let o = EvalOptions::default();
        Self {
            tokenizer: o.tokenizer,
            remove_articles: o.squad.remove_articles,
            comparison_metric: o.comparison_metric,
            bleu_max_n: o.bleu_max_n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub language: String,
    pub size: usize,
    pub topics: TopicsConfig,
    pub context: ContextConfig,
    pub tasks: TasksConfig,
    pub dedup: DedupSection,
    pub ablation: AblationConfig,
    pub providers: ProvidersConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            language: "th".into(),
            size: DEFAULT_SIZE,
            topics: TopicsConfig::default(),
            context: ContextConfig::default(),
            tasks: TasksConfig::default(),
            dedup: DedupSection::default(),
            ablation: AblationConfig::default(),
            providers: ProvidersConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn check_temperature(key: &str, t: f64) -> Result<(), ConfigError> {
    if !(0.0..=2.0).contains(&t) {
        return Err(range(key, t, "0 to 2"));
    }
    Ok(())
}

fn check_probability(key: &str, p: f64) -> Result<(), ConfigError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(range(key, p, "0 to 1"));
    }
    Ok(())
}

fn check_positive(key: &str, n: usize) -> Result<(), ConfigError> {
    if n == 0 {
        return Err(range(key, n, "at least 1"));
    }
    Ok(())
}

impl PipelineConfig {
    /// Parses TOML text. Missing keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let cfg: PipelineConfig =
            serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Invalid {
                key: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.language.trim().is_empty() {
            return Err(range("language", "\"\"", "a language tag"));
        }
        check_positive("size", self.size)?;
        if self.topics.general + self.topics.cultural == 0 {
            return Err(range("topics.general", 0, "general + cultural at least 1"));
        }
        check_temperature("topics.temperature", self.topics.temperature)?;
        check_positive("topics.max_tokens", self.topics.max_tokens as usize)?;
        check_probability("context.p_wiki", self.context.p_wiki)?;
        check_temperature("context.temperature", self.context.temperature)?;
        check_positive("context.max_tokens", self.context.max_tokens as usize)?;
        check_positive("context.wiki_limit", self.context.wiki_limit as usize)?;
        if !self.context.template.contains("{topic}") {
            return Err(ConfigError::Invalid {
                key: "context.template".into(),
                message: "template must contain {topic}".into(),
            });
        }
        if let Some(w) = &self.context.style_weights {
            if w.len() != CONTEXT_STYLES.len() {
                return Err(range(
                    "context.style_weights",
                    format!("{} weights", w.len()),
                    &format!("exactly {}", CONTEXT_STYLES.len()),
                ));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(range(
                    "context.style_weights",
                    "given weights",
                    "non-negative with a positive sum",
                ));
            }
        }
        if self.tasks.enabled.is_empty() {
            return Err(range("tasks.enabled", "[]", "at least one task"));
        }
        check_positive("tasks.qa_pairs", self.tasks.qa_pairs)?;
        check_positive("tasks.attempts", self.tasks.attempts as usize)?;
        check_positive("tasks.max_tokens", self.tasks.max_tokens as usize)?;
        let t = &self.tasks.temperatures;
        check_temperature("tasks.temperatures.closed_qa", t.closed_qa)?;
        check_temperature("tasks.temperatures.summarization", t.summarization)?;
        check_temperature("tasks.temperatures.conversation", t.conversation)?;
        check_temperature("tasks.temperatures.multiple_choice", t.multiple_choice)?;
        if !(self.dedup.threshold > 0.0 && self.dedup.threshold <= 1.0) {
            return Err(range(
                "dedup.threshold",
                self.dedup.threshold,
                "greater than 0, at most 1",
            ));
        }
        check_positive("dedup.hnsw_m", self.dedup.hnsw_m)?;
        check_positive(
            "dedup.hnsw_ef_construction",
            self.dedup.hnsw_ef_construction,
        )?;
        check_positive("dedup.hnsw_ef_search", self.dedup.hnsw_ef_search)?;
        check_positive("ablation.paraphrases", self.ablation.paraphrases)?;
        check_positive("ablation.sampled", self.ablation.sampled)?;
        check_positive("ablation.fluency_topics", self.ablation.fluency_topics)?;
        check_positive("ablation.diversity_topics", self.ablation.diversity_topics)?;
        if self.ablation.pivot == self.language {
            return Err(range(
                "ablation.pivot",
                &self.ablation.pivot,
                "a language other than `language`",
            ));
        }
        check_probability(
            "providers.generator.mock_malformed_rate",
            self.providers.generator.mock_malformed_rate,
        )?;
        check_positive("providers.embedder.batch", self.providers.embedder.batch)?;
        check_positive("providers.max_concurrent", self.providers.max_concurrent)?;
        check_positive(
            "providers.requests_per_minute",
            self.providers.requests_per_minute as usize,
        )?;
        check_positive(
            "providers.timeout_secs",
            self.providers.timeout_secs as usize,
        )?;
        self.eval
            .tokenizer
            .parse::<Tokenizer>()
            .map_err(|message| ConfigError::Invalid {
                key: "eval.tokenizer".into(),
                message,
            })?;
        check_positive("eval.bleu_max_n", self.eval.bleu_max_n)?;
        Ok(())
    }

    pub fn build_settings(&self) -> BuildSettings {
        let t = &self.tasks.temperatures;
        BuildSettings {
            topics: TopicSettings {
                temperature: self.topics.temperature,
                max_tokens: self.topics.max_tokens,
                retry_limit: self.topics.retry_limit,
            },
            context: ContextPolicy {
                p_wiki: self.context.p_wiki,
                style_weights: self.context.style_weights.clone(),
                temperature: self.context.temperature,
                template: self.context.template.clone(),
                max_tokens: self.context.max_tokens,
                wiki_limit: self.context.wiki_limit,
            },
            tasks: TaskSettings {
                temperatures: TaskTemperatures {
                    closed_qa: t.closed_qa,
                    summarization: t.summarization,
                    conversation: t.conversation,
                    multiple_choice: t.multiple_choice,
                },
                max_tokens: self.tasks.max_tokens,
                language: self.language.clone(),
                qa_pairs: self.tasks.qa_pairs,
                attempts: self.tasks.attempts,
                tasks: self.tasks.enabled.clone(),
            },
            dedup: self.dedup_config(),
            pivot: self.ablation.pivot.clone(),
            paraphrases: self.ablation.paraphrases,
            max_extensions: self.ablation.max_extensions,
        }
    }

    pub fn dedup_config(&self) -> DedupConfig {
        DedupConfig {
            threshold: self.dedup.threshold,
            index_kind: self.dedup.index,
            exact_fallback_limit: self.dedup.exact_fallback_limit,
            semantics: self.dedup.semantics,
            hnsw: HnswParams {
                m: self.dedup.hnsw_m,
                ef_construction: self.dedup.hnsw_ef_construction,
                ef_search: self.dedup.hnsw_ef_search,
                seed: HnswParams::default().seed,
            },
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            tokenizer: self.eval.tokenizer.clone(),
            squad: SquadOptions {
                remove_articles: self.eval.remove_articles,
            },
            bleu_max_n: self.eval.bleu_max_n,
            comparison_metric: self.eval.comparison_metric,
            bert_score: true,
        }
    }

    /// Assembles the gateway. Credentials are read from the environment at
    /// the first call, not here.
    pub fn gateway(&self) -> Result<Gateway, ProviderError> {
        let p = &self.providers;
        let transport = || -> Result<Arc<ReqwestTransport>, ProviderError> {
            Ok(Arc::new(ReqwestTransport::new(Duration::from_secs(
                p.timeout_secs,
            ))?))
        };
        let mut b = Gateway::builder().budget(ProviderBudget {
            max_concurrent: p.max_concurrent,
            requests_per_minute: p.requests_per_minute,
            retry_limit: p.retry_limit,
            cache_dir: p.cache_dir.clone(),
        });
        let g = &p.generator;
        b = match g.kind {
            GeneratorKind::Mock => b.generator(Arc::new(MockGenerator {
                malformed_rate: g.mock_malformed_rate,
            })),
            GeneratorKind::Openai => b.generator(Arc::new(OpenAiChat::new(
                &g.base_url,
                &g.model,
                &g.api_key_env,
                transport()?,
            ))),
            GeneratorKind::Anthropic => b.generator(Arc::new(AnthropicMessages::new(
                &g.base_url,
                &g.model,
                &g.api_key_env,
                transport()?,
            ))),
        };
        let e = &p.embedder;
        b = match e.kind {
            ServiceKind::Mock => b.embedder(Arc::new(MockEmbedder::default())),
            ServiceKind::Http => b.embedder(Arc::new(HttpEmbedder::new(
                &e.base_url,
                &e.model,
                e.api_key_env.clone(),
                e.batch,
                transport()?,
            ))),
        };
        let t = &p.translator;
        b = match t.kind {
            ServiceKind::Mock => b.translator(Arc::new(MockTranslator::default())),
            ServiceKind::Http => b.translator(Arc::new(HttpTranslator::new(
                &t.base_url,
                t.api_key_env.clone(),
                t.languages.clone(),
                transport()?,
            ))),
        };
        let q = &p.paraphraser;
        b = match q.kind {
            ServiceKind::Mock => b.paraphraser(Arc::new(MockParaphraser)),
            ServiceKind::Http => b.paraphraser(Arc::new(HttpParaphraser::new(
                &q.base_url,
                q.api_key_env.clone(),
                serde_json::Value::Object(q.controls.clone()),
                transport()?,
            ))),
        };
        b = match p.wiki.kind {
            ServiceKind::Mock => b.wiki(Arc::new(MockWiki::synthetic())),
            ServiceKind::Http => b.wiki(Arc::new(MediaWikiClient::new(
                &p.wiki.api_url,
                transport()?,
            ))),
        };
        b.build()
    }
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    PipelineConfig::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = PipelineConfig::from_toml("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.size, 5000);
        assert_eq!(c.dedup.threshold, 0.95);
        assert_eq!((c.topics.general, c.topics.cultural), (300, 400));
    }

    #[test]
    fn out_of_range_values_name_their_key() {
        let e = PipelineConfig::from_toml("[dedup]\nthreshold = 1.5\n").unwrap_err();
        assert!(
            matches!(&e, ConfigError::Range { key, .. } if key == "dedup.threshold"),
            "{e}"
        );
        let e = PipelineConfig::from_toml("context.p_wiki = -0.1\n").unwrap_err();
        assert!(
            matches!(&e, ConfigError::Range { key, .. } if key == "context.p_wiki"),
            "{e}"
        );
        let e = PipelineConfig::from_toml("tasks.temperatures.conversation = 3.0\n").unwrap_err();
        assert!(e.to_string().contains("tasks.temperatures.conversation"));
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let e = PipelineConfig::from_toml("[dedup]\nthreshhold = 0.9\n").unwrap_err();
        match e {
            ConfigError::Invalid { key, message } => {
                assert_eq!(key, "dedup.threshhold");
                assert!(message.contains("threshhold"), "{message}");
            }
            other => panic!("{other}"),
        }
        assert!(PipelineConfig::from_toml("bogus = 1\n").is_err());
        let e = PipelineConfig::from_toml("[providers.generator]\nkind = \"palm\"\n").unwrap_err();
        assert!(e.to_string().contains("providers.generator.kind"), "{e}");
    }

    #[test]
    fn dotted_keys_and_round_trip() {
        let c = PipelineConfig::from_toml("seed = 7\ntasks.temperatures.closed_qa = 0.2\nproviders.paraphraser.controls = { lexical = 0.3 }\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.build_settings().tasks.temperatures.closed_qa, 0.2);
        let back = PipelineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn mock_gateway_builds() {
        let gw = PipelineConfig::default().gateway().unwrap();
        assert!(gw.generator_id().starts_with("mock"));
    }
}
