//! Context acquisition: each topic gets one passage, either a section of a
//! Wikipedia article found by searching for the topic or a passage generated
//! in a randomly drawn style.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GenRequest, ProviderError};
use crate::record::{ContextDoc, ContextProvenance, ContextSource, Topic};
use crate::util::{derive_seed, seeded_rng, sha256_hex};

pub const CONTEXT_STYLES: [&str; 13] = [
    "news article",
    "blog post",
    "text messages",
    "fictional short story",
    "video transcript",
    "song",
    "poem",
    "scientific study",
    "medical report",
    "social media post with replies",
    "email",
    "tweet",
    "how-to article",
];

/// Default context prompt. Not a published prompt; override it in config.
pub const DEFAULT_CONTEXT_TEMPLATE: &str =
    "Generate a {style} related to the topic {topic}. Write in Thai.";

pub const WIKI_SEARCH_LIMIT: u32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPolicy {
    pub p_wiki: f64,
    /// Relative style weights aligned with [`CONTEXT_STYLES`]; `None` is uniform.
    pub style_weights: Option<Vec<f64>>,
    pub temperature: f64,
    pub template: String,
    pub max_tokens: u32,
    pub wiki_limit: u32,
}

impl Default for ContextPolicy {
    fn default() -> Self {
        Self {
            p_wiki: 0.5,
            style_weights: None,
            temperature: 0.8,
            template: DEFAULT_CONTEXT_TEMPLATE.to_string(),
            max_tokens: 1024,
            wiki_limit: WIKI_SEARCH_LIMIT,
        }
    }
}

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("invalid context policy: {0}")]
    Policy(String),
    #[error("style '{0}' is not one of the supported context styles")]
    UnknownStyle(String),
    #[error("topic text is empty")]
    EmptyTopic,
    #[error("generator returned an empty context for topic '{0}'")]
    EmptyCompletion(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl ContextPolicy {
    pub fn validate(&self) -> Result<(), ContextError> {
        if !(0.0..=1.0).contains(&self.p_wiki) {
            return Err(ContextError::Policy(format!(
                "p_wiki {} outside [0, 1]",
                self.p_wiki
            )));
        }
        if let Some(w) = &self.style_weights {
            if w.len() != CONTEXT_STYLES.len()
                || w.iter().any(|x| !x.is_finite() || *x < 0.0)
                || w.iter().sum::<f64>() <= 0.0
            {
                return Err(ContextError::Policy(
                    "style_weights must be 13 non-negative values with a positive sum".into(),
                ));
            }
        }
        if !self.template.contains("{style}") || !self.template.contains("{topic}") {
            return Err(ContextError::Policy(
                "template must contain {style} and {topic}".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Wiki,
    Generated,
}

pub fn choose_source(policy: &ContextPolicy, rng: &mut ChaCha8Rng) -> SourceKind {
    // one draw either way keeps the stream aligned across policies
    let u: f64 = rng.gen();
    if u < policy.p_wiki {
        SourceKind::Wiki
    } else {
        SourceKind::Generated
    }
}

pub fn choose_style(policy: &ContextPolicy, rng: &mut ChaCha8Rng) -> &'static str {
    match &policy.style_weights {
        None => CONTEXT_STYLES[rng.gen_range(0..CONTEXT_STYLES.len())],
        Some(w) => {
            let total: f64 = w.iter().sum();
            let mut x = rng.gen::<f64>() * total;
            for (style, weight) in CONTEXT_STYLES.iter().zip(w) {
                if x < *weight {
                    return style;
                }
                x -= weight;
            }
            CONTEXT_STYLES[CONTEXT_STYLES.len() - 1]
        }
    }
}

pub fn render_context_prompt(template: &str, style: &str, topic: &str) -> String {
    template.replace("{style}", style).replace("{topic}", topic)
}

pub fn generate_context(
    topic: &Topic,
    style: &str,
    gateway: &Gateway,
    policy: &ContextPolicy,
    seed: u64,
    seed_path: Vec<String>,
) -> Result<ContextDoc, ContextError> {
    if !CONTEXT_STYLES.contains(&style) {
        return Err(ContextError::UnknownStyle(style.to_string()));
    }
    if topic.text.trim().is_empty() {
        return Err(ContextError::EmptyTopic);
    }
    let prompt = render_context_prompt(&policy.template, style, &topic.text);
    let req =
        GenRequest::new(prompt.clone(), policy.temperature, policy.max_tokens)?.with_seed(seed);
    let body = gateway.complete(&req)?;
    if body.trim().is_empty() {
        return Err(ContextError::EmptyCompletion(topic.text.clone()));
    }
    Ok(ContextDoc {
        body: body.trim().to_string(),
        source: ContextSource::Generated {
            style: style.to_string(),
        },
        topic: topic.clone(),
        provenance: ContextProvenance {
            seed_path,
            seed,
            wiki_fallback: false,
            temperature: Some(policy.temperature),
            prompt_hash: Some(sha256_hex(prompt.as_bytes())),
        },
    })
}

/// Searches Wikipedia for the topic, picks one article and one section
/// uniformly. Returns `None` when the search or the article is empty.
pub fn wiki_context(
    topic: &Topic,
    gateway: &Gateway,
    policy: &ContextPolicy,
    rng: &mut ChaCha8Rng,
    seed: u64,
    seed_path: &[String],
) -> Result<Option<ContextDoc>, ContextError> {
    if topic.text.trim().is_empty() {
        return Err(ContextError::EmptyTopic);
    }
    let refs = gateway.wiki_search(&topic.text, policy.wiki_limit)?;
    if refs.is_empty() {
        return Ok(None);
    }
    let article = &refs[rng.gen_range(0..refs.len())];
    let sections = gateway.wiki_fetch_sections(article)?;
    if sections.is_empty() {
        return Ok(None);
    }
    let section = &sections[rng.gen_range(0..sections.len())];
    Ok(Some(ContextDoc {
        body: section.body.clone(),
        source: ContextSource::Wiki {
            title: section.title.clone(),
            page_id: section.page_id,
            section_index: section.index,
            heading: section.heading.clone(),
        },
        topic: topic.clone(),
        provenance: ContextProvenance {
            seed_path: seed_path.to_vec(),
            seed,
            wiki_fallback: false,
            temperature: None,
            prompt_hash: None,
        },
    }))
}

/// Produces the context for one topic, falling back to generation when
/// Wikipedia has nothing for it.
pub fn acquire_context(
    topic: &Topic,
    gateway: &Gateway,
    policy: &ContextPolicy,
    base_seed: u64,
    seed_path: &[String],
) -> Result<ContextDoc, ContextError> {
    let labels: Vec<&str> = seed_path.iter().map(String::as_str).collect();
    let seed = derive_seed(base_seed, &labels);
    let mut rng = seeded_rng(seed);
    let source = choose_source(policy, &mut rng);
    let style = choose_style(policy, &mut rng);
    if source == SourceKind::Wiki {
        if let Some(doc) = wiki_context(topic, gateway, policy, &mut rng, seed, seed_path)? {
            return Ok(doc);
        }
        tracing::info!(topic = %topic.text, "wikipedia had no usable section, generating instead");
    }
    let gen_seed = derive_seed(seed, &["generate"]);
    let mut doc = generate_context(topic, style, gateway, policy, gen_seed, seed_path.to_vec())?;
    doc.provenance.wiki_fallback = source == SourceKind::Wiki;
    Ok(doc)
}

/// A context paired with the id prefix its records will carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub id: String,
    pub context: ContextDoc,
}

/// One context per (topic, round), ordered by topic index then round.
pub fn acquire_contexts(
    topics: &[(usize, Topic)],
    round: u32,
    gateway: &Gateway,
    policy: &ContextPolicy,
    seed: u64,
) -> Result<Vec<(usize, ContextDoc)>, ContextError> {
    policy.validate()?;
    topics
        .par_iter()
        .map(|(idx, topic)| {
            let path = vec![
                "context".to_string(),
                topic.category.to_string(),
                topic.text.clone(),
                round.to_string(),
            ];
            acquire_context(topic, gateway, policy, seed, &path).map(|d| (*idx, d))
        })
        .collect()
}
