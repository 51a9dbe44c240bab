//! HTTP-backed providers: OpenAI- and Anthropic-style completion endpoints,
//! an OpenAI-style embedding endpoint, and JSON translation/paraphrase
//! services.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use super::{
    Embedder, EmbeddingVector, GenRequest, Paraphraser, ProviderError, TextGenerator, Translator,
};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

pub trait HttpTransport: Send + Sync {
    fn get(&self, url: &str, query: &[(&str, String)]) -> Result<HttpResponse, ProviderError>;
    fn post_json(
        &self,
        url: &str,
        headers: &[(&str, String)],
        body: &Value,
    ) -> Result<HttpResponse, ProviderError>;
}

/// Maps HTTP status codes onto the provider error taxonomy.
pub fn check_status(resp: HttpResponse) -> Result<String, ProviderError> {
    match resp.status {
        200..=299 => Ok(resp.body),
        401 | 403 => Err(ProviderError::Config(format!(
            "credential rejected (HTTP {})",
            resp.status
        ))),
        404 => Err(ProviderError::NotFound(truncate(&resp.body))),
        408 | 409 | 425 | 429 | 500..=599 => Err(ProviderError::Transport(format!(
            "HTTP {}: {}",
            resp.status,
            truncate(&resp.body)
        ))),
        s => Err(ProviderError::Protocol(format!(
            "HTTP {s}: {}",
            truncate(&resp.body)
        ))),
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(200).collect()
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .user_agent(concat!("seedforge/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| ProviderError::Config(format!("http client: {e}")))?;
        Ok(Self { client })
    }
}

fn transport_err(e: reqwest::Error) -> ProviderError {
    ProviderError::Transport(e.to_string())
}

impl HttpTransport for ReqwestTransport {
    fn get(&self, url: &str, query: &[(&str, String)]) -> Result<HttpResponse, ProviderError> {
        let url = reqwest::Url::parse_with_params(url, query.iter().map(|(k, v)| (*k, v.as_str())))
            .map_err(|e| ProviderError::Config(format!("bad url {url}: {e}")))?;
        let resp = self.client.get(url).send().map_err(transport_err)?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(transport_err)?;
        Ok(HttpResponse { status, body })
    }

    fn post_json(
        &self,
        url: &str,
        headers: &[(&str, String)],
        body: &Value,
    ) -> Result<HttpResponse, ProviderError> {
        let mut req = self.client.post(url).json(body);
        for (k, v) in headers {
            req = req.header(*k, v);
        }
        let resp = req.send().map_err(transport_err)?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(transport_err)?;
        Ok(HttpResponse { status, body })
    }
}

/// Replays canned responses in order and records every request. Useful for
/// exercising providers against captured fixtures.
#[derive(Default)]
pub struct RecordedTransport {
    responses: Mutex<VecDeque<Result<HttpResponse, ProviderError>>>,
    requests: Mutex<Vec<(String, Value)>>,
}

impl RecordedTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, status: u16, body: impl Into<String>) -> &Self {
        self.responses
            .lock()
            .expect("lock")
            .push_back(Ok(HttpResponse {
                status,
                body: body.into(),
            }));
        self
    }

    pub fn push_error(&self, err: ProviderError) -> &Self {
        self.responses.lock().expect("lock").push_back(Err(err));
        self
    }

    /// (url, payload) of every request seen; GET query pairs are stored as an object.
    pub fn requests(&self) -> Vec<(String, Value)> {
        self.requests.lock().expect("lock").clone()
    }

    fn next(&self) -> Result<HttpResponse, ProviderError> {
        self.responses
            .lock()
            .expect("lock")
            .pop_front()
            .unwrap_or_else(|| Err(ProviderError::Transport("no recorded response left".into())))
    }
}

impl HttpTransport for RecordedTransport {
    fn get(&self, url: &str, query: &[(&str, String)]) -> Result<HttpResponse, ProviderError> {
        let q: serde_json::Map<String, Value> = query
            .iter()
            .map(|(k, v)| (k.to_string(), Value::String(v.clone())))
            .collect();
        self.requests
            .lock()
            .expect("lock")
            .push((url.to_string(), Value::Object(q)));
        self.next()
    }

    fn post_json(
        &self,
        url: &str,
        headers: &[(&str, String)],
        body: &Value,
    ) -> Result<HttpResponse, ProviderError> {
        let hdrs: serde_json::Map<String, Value> = headers
            .iter()
            .map(|(k, v)| (k.to_string(), Value::String(v.clone())))
            .collect();
        self.requests
            .lock()
            .expect("lock")
            .push((url.to_string(), json!({ "headers": hdrs, "body": body })));
        self.next()
    }
}

/// Reads a credential from the named environment variable.
fn credential(env_var: &str) -> Result<String, ProviderError> {
    match std::env::var(env_var) {
        Ok(v) if !v.trim().is_empty() => Ok(v),
        _ => Err(ProviderError::Config(format!(
            "credential environment variable {env_var} is not set"
        ))),
    }
}

fn json_body(body: &str) -> Result<Value, ProviderError> {
    serde_json::from_str(body).map_err(|e| ProviderError::Protocol(format!("invalid JSON: {e}")))
}

fn endpoint(base: &str, path: &str) -> String {
    format!(
        "{}/{}",
        base.trim_end_matches('/'),
        path.trim_start_matches('/')
    )
}

/// OpenAI-compatible `chat/completions` endpoint.
pub struct OpenAiChat {
    id: String,
    base_url: String,
    model: String,
    api_key_env: String,
    transport: std::sync::Arc<dyn HttpTransport>,
}

impl OpenAiChat {
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        api_key_env: impl Into<String>,
        transport: std::sync::Arc<dyn HttpTransport>,
    ) -> Self {
        let model = model.into();
        Self {
            id: format!("openai:{model}"),
            base_url: base_url.into(),
            model,
            api_key_env: api_key_env.into(),
            transport,
        }
    }
}

impl TextGenerator for OpenAiChat {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &GenRequest) -> Result<String, ProviderError> {
        let key = credential(&self.api_key_env)?;
        let mut body = json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": req.prompt }],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        let resp = self.transport.post_json(
            &endpoint(&self.base_url, "chat/completions"),
            &[("Authorization", format!("Bearer {key}"))],
            &body,
        )?;
        let v = json_body(&check_status(resp)?)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                ProviderError::Protocol("response lacks choices[0].message.content".into())
            })
    }
}

/// Anthropic-style `v1/messages` endpoint. Seeds are not supported there and
/// are dropped.
pub struct AnthropicMessages {
    id: String,
    base_url: String,
    model: String,
    api_key_env: String,
    transport: std::sync::Arc<dyn HttpTransport>,
}

impl AnthropicMessages {
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        api_key_env: impl Into<String>,
        transport: std::sync::Arc<dyn HttpTransport>,
    ) -> Self {
        let model = model.into();
        Self {
            id: format!("anthropic:{model}"),
            base_url: base_url.into(),
            model,
            api_key_env: api_key_env.into(),
            transport,
        }
    }
}

impl TextGenerator for AnthropicMessages {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &GenRequest) -> Result<String, ProviderError> {
        let key = credential(&self.api_key_env)?;
        let body = json!({
            "model": self.model,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
            "messages": [{ "role": "user", "content": req.prompt }],
        });
        let resp = self.transport.post_json(
            &endpoint(&self.base_url, "v1/messages"),
            &[
                ("x-api-key", key),
                ("anthropic-version", "2023-06-01".to_string()),
            ],
            &body,
        )?;
        let v = json_body(&check_status(resp)?)?;
        let blocks = v
            .get("content")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Protocol("response lacks content".into()))?;
        let text: String = blocks
            .iter()
            .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
            .filter_map(|b| b.get("text").and_then(Value::as_str))
            .collect();
        Ok(text)
    }
}

/// OpenAI-style `embeddings` endpoint.
pub struct HttpEmbedder {
    id: String,
    base_url: String,
    model: String,
    api_key_env: Option<String>,
    batch: usize,
    transport: std::sync::Arc<dyn HttpTransport>,
}

impl HttpEmbedder {
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        api_key_env: Option<String>,
        batch: usize,
        transport: std::sync::Arc<dyn HttpTransport>,
    ) -> Self {
        let model = model.into();
        Self {
            id: format!("embeddings:{model}"),
            base_url: base_url.into(),
            model,
            api_key_env,
            batch: batch.max(1),
            transport,
        }
    }
}

fn auth_headers(env: &Option<String>) -> Result<Vec<(&'static str, String)>, ProviderError> {
    Ok(match env {
        Some(var) => vec![("Authorization", format!("Bearer {}", credential(var)?))],
        None => Vec::new(),
    })
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn max_batch(&self) -> usize {
        self.batch
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let headers = auth_headers(&self.api_key_env)?;
        let body = json!({ "model": self.model, "input": texts });
        let resp =
            self.transport
                .post_json(&endpoint(&self.base_url, "embeddings"), &headers, &body)?;
        let v = json_body(&check_status(resp)?)?;
        let data = v
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Protocol("response lacks data".into()))?;
        let mut indexed: Vec<(usize, EmbeddingVector)> = data
            .iter()
            .enumerate()
            .map(|(pos, item)| {
                let idx = item
                    .get("index")
                    .and_then(Value::as_u64)
                    .map_or(pos, |i| i as usize);
                let values: Vec<f64> = item
                    .get("embedding")
                    .and_then(Value::as_array)
                    .ok_or_else(|| ProviderError::Protocol("item lacks embedding".into()))?
                    .iter()
                    .map(|x| {
                        x.as_f64()
                            .ok_or_else(|| ProviderError::Protocol("non-numeric component".into()))
                    })
                    .collect::<Result<_, _>>()?;
                Ok((idx, EmbeddingVector::new(values)?))
            })
            .collect::<Result<_, ProviderError>>()?;
        indexed.sort_by_key(|(i, _)| *i);
        let out: Vec<EmbeddingVector> = indexed.into_iter().map(|(_, v)| v).collect();
        if let Some(first) = out.first() {
            if out.iter().any(|v| v.dimension() != first.dimension()) {
                return Err(ProviderError::Protocol(
                    "mixed embedding dimensions in one response".into(),
                ));
            }
        }
        Ok(out)
    }
}

/// JSON translation service: `POST {base}/translate` with
/// `{"text", "source", "target"}` answering `{"translation"}`.
pub struct HttpTranslator {
    base_url: String,
    api_key_env: Option<String>,
    languages: Vec<String>,
    transport: std::sync::Arc<dyn HttpTransport>,
}

impl HttpTranslator {
    pub fn new(
        base_url: impl Into<String>,
        api_key_env: Option<String>,
        languages: Vec<String>,
        transport: std::sync::Arc<dyn HttpTransport>,
    ) -> Self {
        Self {
            base_url: base_url.into(),
            api_key_env,
            languages,
            transport,
        }
    }
}

impl Translator for HttpTranslator {
    fn id(&self) -> &str {
        &self.base_url
    }

    fn supports(&self, source: &str, target: &str) -> bool {
        source != target
            && self.languages.iter().any(|l| l == source)
            && self.languages.iter().any(|l| l == target)
    }

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, ProviderError> {
        let headers = auth_headers(&self.api_key_env)?;
        let body = json!({ "text": text, "source": source, "target": target });
        let resp =
            self.transport
                .post_json(&endpoint(&self.base_url, "translate"), &headers, &body)?;
        let v = json_body(&check_status(resp)?)?;
        v.get("translation")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Protocol("response lacks translation".into()))
    }
}

/// JSON paraphrase service: `POST {base}/paraphrase` with
/// `{"text", "count", "seed", "controls"}` answering `{"paraphrases": [...]}`.
/// `controls` is passed through untouched.
pub struct HttpParaphraser {
    base_url: String,
    api_key_env: Option<String>,
    controls: Value,
    transport: std::sync::Arc<dyn HttpTransport>,
}

impl HttpParaphraser {
    pub fn new(
        base_url: impl Into<String>,
        api_key_env: Option<String>,
        controls: Value,
        transport: std::sync::Arc<dyn HttpTransport>,
    ) -> Self {
        Self {
            base_url: base_url.into(),
            api_key_env,
            controls,
            transport,
        }
    }
}

impl Paraphraser for HttpParaphraser {
    fn id(&self) -> &str {
        &self.base_url
    }

    fn paraphrase(
        &self,
        text: &str,
        count: usize,
        seed: u64,
    ) -> Result<Vec<String>, ProviderError> {
        let headers = auth_headers(&self.api_key_env)?;
        let body = json!({ "text": text, "count": count, "seed": seed, "controls": self.controls });
        let resp =
            self.transport
                .post_json(&endpoint(&self.base_url, "paraphrase"), &headers, &body)?;
        let v = json_body(&check_status(resp)?)?;
        v.get("paraphrases")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Protocol("response lacks paraphrases".into()))?
            .iter()
            .map(|p| {
                p.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| ProviderError::Protocol("non-string paraphrase".into()))
            })
            .collect()
    }
}
