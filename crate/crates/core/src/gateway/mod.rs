//! Uniform access to every external service the pipeline touches.
//!
//! A [`Gateway`] wraps one provider per capability (text generation,
//! embeddings, translation, paraphrasing, Wikipedia) and layers the same
//! policy over each of them: a response cache keyed by request content, a
//! bound on in-flight calls, a sliding-window rate limit for remote
//! providers, and retries with exponential backoff for transient failures.

mod cache;
pub mod http;
mod limit;
pub mod mock;
pub mod wiki;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, ResponseCache};
pub use limit::{Clock, RateLimiter, Semaphore, SimClock, SystemClock};
pub use wiki::{split_sections, strip_markup, WikiSection};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("capability not supported: {0}")]
    Capability(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transport(_))
    }
}

/// A single text-generation call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Honored by mocks; forwarded to remote providers that accept one.
    pub seed: Option<u64>,
}

impl GenRequest {
    pub fn new(
        prompt: impl Into<String>,
        temperature: f64,
        max_tokens: u32,
    ) -> Result<Self, ProviderError> {
        let prompt = prompt.into();
        if prompt.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("prompt is empty".into()));
        }
        if !(0.0..=1.0).contains(&temperature) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {temperature} outside [0, 1]"
            )));
        }
        if max_tokens == 0 {
            return Err(ProviderError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(Self {
            prompt,
            temperature,
            max_tokens,
            seed: None,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// Dense embedding produced by an [`Embedder`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ProviderError> {
        if values.is_empty() {
            return Err(ProviderError::Protocol(
                "embedding has zero dimension".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::Protocol(
                "embedding contains NaN or Inf".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WikiArticleRef {
    pub title: String,
    pub page_id: u64,
    /// 1-based position in the search ranking.
    pub relevance_rank: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderBudget {
    pub max_concurrent: usize,
    pub requests_per_minute: u32,
    pub retry_limit: u32,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ProviderBudget {
    fn default() -> Self {
        Self {
            max_concurrent: 4,
            requests_per_minute: 50,
            retry_limit: 3,
            cache_dir: None,
        }
    }
}

impl ProviderBudget {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.max_concurrent == 0 {
            return Err(ProviderError::Config(
                "max_concurrent must be at least 1".into(),
            ));
        }
        if self.requests_per_minute == 0 {
            return Err(ProviderError::Config(
                "requests_per_minute must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

pub trait TextGenerator: Send + Sync {
    fn id(&self) -> &str;
    /// Remote providers are subject to the rate limit; in-process mocks are not.
    fn is_remote(&self) -> bool {
        true
    }
    fn complete(&self, req: &GenRequest) -> Result<String, ProviderError>;
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn is_remote(&self) -> bool {
        true
    }
    /// Largest number of texts accepted in one call.
    fn max_batch(&self) -> usize;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
    /// One vector per input token, for token-level similarity metrics.
    fn embed_tokens(&self, _tokens: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        Err(ProviderError::Capability(format!(
            "embedder {} does not expose token-level vectors",
            self.id()
        )))
    }
}

pub trait Translator: Send + Sync {
    fn id(&self) -> &str;
    fn is_remote(&self) -> bool {
        true
    }
    fn supports(&self, source: &str, target: &str) -> bool;
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, ProviderError>;
}

pub trait Paraphraser: Send + Sync {
    fn id(&self) -> &str;
    fn is_remote(&self) -> bool {
        true
    }
    fn paraphrase(&self, text: &str, count: usize, seed: u64)
        -> Result<Vec<String>, ProviderError>;
}

pub trait WikiSource: Send + Sync {
    fn id(&self) -> &str;
    fn is_remote(&self) -> bool {
        true
    }
    fn search(&self, query: &str, limit: u32) -> Result<Vec<WikiArticleRef>, ProviderError>;
    fn sections(&self, article: &WikiArticleRef) -> Result<Vec<WikiSection>, ProviderError>;
}

/// Counters for calls that reached a provider versus calls served from cache.
#[derive(Debug, Default)]
pub struct GatewayStats {
    provider_calls: AtomicU64,
    cache_hits: AtomicU64,
    retries: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub provider_calls: u64,
    pub cache_hits: u64,
    pub retries: u64,
}

impl GatewayStats {
    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            provider_calls: self.provider_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            retries: self.retries.load(Ordering::SeqCst),
        }
    }
}

pub struct GatewayBuilder {
    generator: Arc<dyn TextGenerator>,
    embedder: Arc<dyn Embedder>,
    translator: Arc<dyn Translator>,
    paraphraser: Arc<dyn Paraphraser>,
    wiki: Arc<dyn WikiSource>,
    budget: ProviderBudget,
    clock: Arc<dyn Clock>,
    backoff_base: Duration,
}

impl GatewayBuilder {
    pub fn generator(mut self, g: Arc<dyn TextGenerator>) -> Self {
        self.generator = g;
        self
    }
    pub fn embedder(mut self, e: Arc<dyn Embedder>) -> Self {
        self.embedder = e;
        self
    }
    pub fn translator(mut self, t: Arc<dyn Translator>) -> Self {
        self.translator = t;
        self
    }
    pub fn paraphraser(mut self, p: Arc<dyn Paraphraser>) -> Self {
        self.paraphraser = p;
        self
    }
    pub fn wiki(mut self, w: Arc<dyn WikiSource>) -> Self {
        self.wiki = w;
        self
    }
    pub fn budget(mut self, b: ProviderBudget) -> Self {
        self.budget = b;
        self
    }
    pub fn clock(mut self, c: Arc<dyn Clock>) -> Self {
        self.clock = c;
        self
    }
    pub fn backoff_base(mut self, d: Duration) -> Self {
        self.backoff_base = d;
        self
    }

    pub fn build(self) -> Result<Gateway, ProviderError> {
        self.budget.validate()?;
        let cache = ResponseCache::new(self.budget.cache_dir.clone())?;
        Ok(Gateway {
            limiter: RateLimiter::new(
                self.budget.requests_per_minute as usize,
                Duration::from_secs(60),
                self.clock.clone(),
            ),
            slots: Semaphore::new(self.budget.max_concurrent),
            generator: self.generator,
            embedder: self.embedder,
            translator: self.translator,
            paraphraser: self.paraphraser,
            wiki: self.wiki,
            budget: self.budget,
            cache,
            clock: self.clock,
            backoff_base: self.backoff_base,
            stats: GatewayStats::default(),
        })
    }
}

pub struct Gateway {
    generator: Arc<dyn TextGenerator>,
    embedder: Arc<dyn Embedder>,
    translator: Arc<dyn Translator>,
    paraphraser: Arc<dyn Paraphraser>,
    wiki: Arc<dyn WikiSource>,
    budget: ProviderBudget,
    cache: ResponseCache,
    limiter: RateLimiter,
    slots: Semaphore,
    clock: Arc<dyn Clock>,
    backoff_base: Duration,
    stats: GatewayStats,
}

impl Gateway {
    /// Starts from the deterministic mock providers; swap any of them out
    /// with the builder methods.
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder {
            generator: Arc::new(mock::MockGenerator::new()),
            embedder: Arc::new(mock::MockEmbedder::default()),
            translator: Arc::new(mock::MockTranslator::default()),
            paraphraser: Arc::new(mock::MockParaphraser),
            wiki: Arc::new(mock::MockWiki::synthetic()),
            budget: ProviderBudget::default(),
            clock: Arc::new(SystemClock::new()),
            backoff_base: Duration::from_millis(500),
        }
    }

    /// All-mock gateway with default budget and no disk cache.
    pub fn mock() -> Self {
        Self::builder().build().expect("default budget is valid")
    }

    pub fn budget(&self) -> &ProviderBudget {
        &self.budget
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.stats.snapshot()
    }

    pub fn generator_id(&self) -> &str {
        self.generator.id()
    }

    pub fn complete(&self, req: &GenRequest) -> Result<String, ProviderError> {
        if req.prompt.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("prompt is empty".into()));
        }
        let params = serde_json::json!({
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "seed": req.seed,
        });
        let key = cache_key(self.generator.id(), "complete", &params, &req.prompt);
        if let Some(hit) = self.cached(&key) {
            return Ok(hit);
        }
        let text = self.call(self.generator.is_remote(), || self.generator.complete(req))?;
        self.cache.put(&key, &text)?;
        Ok(text)
    }

    /// Embeds `texts` in provider-sized chunks, preserving input order.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidRequest("no texts to embed".into()));
        }
        let chunk = self.embedder.max_batch().max(1);
        let parts: Vec<Vec<EmbeddingVector>> = texts
            .par_chunks(chunk)
            .map(|batch| self.embed_chunk(batch))
            .collect::<Result<_, _>>()?;
        let out: Vec<EmbeddingVector> = parts.into_iter().flatten().collect();
        let dim = out[0].dimension();
        if let Some(bad) = out.iter().find(|v| v.dimension() != dim) {
            return Err(ProviderError::Protocol(format!(
                "embedding dimension drifted from {dim} to {}",
                bad.dimension()
            )));
        }
        Ok(out)
    }

    fn embed_chunk(&self, batch: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let key = cache_key(
            self.embedder.id(),
            "embed",
            &serde_json::Value::Null,
            &serde_json::to_string(batch).expect("strings serialize"),
        );
        if let Some(v) = self.cached_json::<Vec<EmbeddingVector>>(&key)? {
            return Ok(v);
        }
        let vectors = self.call(self.embedder.is_remote(), || {
            self.embedder.embed_batch(batch)
        })?;
        if vectors.len() != batch.len() {
            return Err(ProviderError::Protocol(format!(
                "embedder returned {} vectors for {} texts",
                vectors.len(),
                batch.len()
            )));
        }
        self.put_json(&key, &vectors)?;
        Ok(vectors)
    }

    pub fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let key = cache_key(
            self.embedder.id(),
            "embed_tokens",
            &serde_json::Value::Null,
            &serde_json::to_string(tokens).expect("strings serialize"),
        );
        if let Some(v) = self.cached_json::<Vec<EmbeddingVector>>(&key)? {
            return Ok(v);
        }
        let vectors = self.call(self.embedder.is_remote(), || {
            self.embedder.embed_tokens(tokens)
        })?;
        if vectors.len() != tokens.len() {
            return Err(ProviderError::Protocol(format!(
                "embedder returned {} token vectors for {} tokens",
                vectors.len(),
                tokens.len()
            )));
        }
        self.put_json(&key, &vectors)?;
        Ok(vectors)
    }

    pub fn translate(
        &self,
        text: &str,
        source: &str,
        target: &str,
    ) -> Result<String, ProviderError> {
        if text.is_empty() {
            return Err(ProviderError::InvalidRequest(
                "cannot translate empty text".into(),
            ));
        }
        if !self.translator.supports(source, target) {
            return Err(ProviderError::Config(format!(
                "translator {} does not support {source} -> {target}",
                self.translator.id()
            )));
        }
        let params = serde_json::json!({ "source": source, "target": target });
        let key = cache_key(self.translator.id(), "translate", &params, text);
        if let Some(hit) = self.cached(&key) {
            return Ok(hit);
        }
        let out = self.call(self.translator.is_remote(), || {
            self.translator.translate(text, source, target)
        })?;
        self.cache.put(&key, &out)?;
        Ok(out)
    }

    pub fn paraphrase(
        &self,
        text: &str,
        count: usize,
        seed: u64,
    ) -> Result<Vec<String>, ProviderError> {
        if count == 0 {
            return Err(ProviderError::InvalidRequest(
                "paraphrase count must be >= 1".into(),
            ));
        }
        let params = serde_json::json!({ "count": count, "seed": seed });
        let key = cache_key(self.paraphraser.id(), "paraphrase", &params, text);
        if let Some(v) = self.cached_json::<Vec<String>>(&key)? {
            return Ok(v);
        }
        let out = self.call(self.paraphraser.is_remote(), || {
            self.paraphraser.paraphrase(text, count, seed)
        })?;
        if out.len() < count {
            return Err(ProviderError::Protocol(format!(
                "paraphraser returned {} variants, {count} requested",
                out.len()
            )));
        }
        let out: Vec<String> = out.into_iter().take(count).collect();
        self.put_json(&key, &out)?;
        Ok(out)
    }

    pub fn wiki_search(
        &self,
        query: &str,
        limit: u32,
    ) -> Result<Vec<WikiArticleRef>, ProviderError> {
        if query.trim().is_empty() {
            return Err(ProviderError::InvalidRequest(
                "search query is empty".into(),
            ));
        }
        let params = serde_json::json!({ "limit": limit });
        let key = cache_key(self.wiki.id(), "wiki_search", &params, query);
        let mut refs = match self.cached_json::<Vec<WikiArticleRef>>(&key)? {
            Some(v) => v,
            None => {
                let v = self.call(self.wiki.is_remote(), || self.wiki.search(query, limit))?;
                self.put_json(&key, &v)?;
                v
            }
        };
        refs.sort_by_key(|r| r.relevance_rank);
        refs.truncate(limit as usize);
        Ok(refs)
    }

    pub fn wiki_fetch_sections(
        &self,
        article: &WikiArticleRef,
    ) -> Result<Vec<WikiSection>, ProviderError> {
        let params = serde_json::json!({ "page_id": article.page_id });
        let key = cache_key(self.wiki.id(), "wiki_sections", &params, &article.title);
        if let Some(v) = self.cached_json::<Vec<WikiSection>>(&key)? {
            return Ok(v);
        }
        let v = self.call(self.wiki.is_remote(), || self.wiki.sections(article))?;
        self.put_json(&key, &v)?;
        Ok(v)
    }

    fn cached(&self, key: &str) -> Option<String> {
        let hit = self.cache.get(key);
        if hit.is_some() {
            self.stats.cache_hits.fetch_add(1, Ordering::SeqCst);
        }
        hit
    }

    fn cached_json<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, ProviderError> {
        match self.cached(key) {
            Some(body) => serde_json::from_str(&body)
                .map(Some)
                .map_err(|e| ProviderError::Protocol(format!("corrupt cache entry {key}: {e}"))),
            None => Ok(None),
        }
    }

    fn put_json<T: Serialize>(&self, key: &str, value: &T) -> Result<(), ProviderError> {
        let body = serde_json::to_string(value)
            .map_err(|e| ProviderError::Protocol(format!("cannot serialize response: {e}")))?;
        self.cache.put(key, &body)
    }

    /// Runs `f` under the concurrency bound, rate limit (remote only) and retry policy.
    fn call<T>(
        &self,
        remote: bool,
        f: impl Fn() -> Result<T, ProviderError>,
    ) -> Result<T, ProviderError> {
        let _slot = self.slots.acquire();
        let mut attempt = 0u32;
        loop {
            if remote {
                self.limiter.acquire();
            }
            self.stats.provider_calls.fetch_add(1, Ordering::SeqCst);
            match f() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.budget.retry_limit => {
                    self.stats.retries.fetch_add(1, Ordering::SeqCst);
                    tracing::warn!(attempt, error = %e, "retrying provider call");
                    self.clock.sleep(self.backoff(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.backoff_base.saturating_mul(1u32 << attempt.min(10));
        let jitter = rand::thread_rng().gen_range(0.0..=0.5);
        base.mul_f64(1.0 + jitter).min(Duration::from_secs(30))
    }
}

#[cfg(test)]
mod tests;
