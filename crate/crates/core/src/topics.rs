//! Topic generation: prompting for batches of random topics, parsing the
//! returned string lists and removing duplicates.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GenRequest, ProviderError};
use crate::lenient::{find_value, Shape};
use crate::record::{Topic, TopicCategory};
use crate::util::{derive_seed, normalize_text, sha256_hex};

pub const TOPICS_PER_BATCH: usize = 20;
pub const TOPIC_TEMPERATURE: f64 = 0.95;

pub const GENERAL_TOPICS_PROMPT: &str = "Please generate 20 completely random topics. These can be about absolutely anything from everyday conversation, advice, random thoughts, mathematics, science, history, philosophy, etc. ";

pub const CULTURAL_TOPICS_PROMPT: &str = "You are a native Thai person with expert knowledge of Thai culture, history, language, and customs. Ensure that everything you act, do, say, and generate matches with this fact. Please generate 20 completely random topics relating to your culture. These can be about anything related to your culture such traditions, history, food, language, etc. ";

/// Output-format instructions shared by both topic prompts.
pub const TOPIC_PROMPT_TAIL: &str = "Each topic should be a short phrase or sentence. Ensure your output is in the format of a list of strings, where each string is a topic. Your output should be one line in the aforementioned format without anything else.";

pub fn render_topic_prompt(category: TopicCategory) -> String {
    let head = match category {
        TopicCategory::General => GENERAL_TOPICS_PROMPT,
        TopicCategory::Cultural => CULTURAL_TOPICS_PROMPT,
    };
    format!("{head}{TOPIC_PROMPT_TAIL}")
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("no topic list found in model output")]
pub struct TopicParseError {
    pub raw: String,
}

/// Extracts the first list of strings from `raw`, trimming each entry and
/// dropping empty ones.
pub fn parse_topic_list(raw: &str) -> Result<Vec<String>, TopicParseError> {
    let is_string_list = |v: &serde_json::Value| {
        v.as_array()
            .is_some_and(|a| !a.is_empty() && a.iter().all(|x| x.is_string()))
    };
    let Some(v) = find_value(raw, Shape::List, is_string_list) else {
        return Err(TopicParseError {
            raw: raw.to_string(),
        });
    };
    let topics: Vec<String> = v
        .as_array()
        .expect("checked above")
        .iter()
        .filter_map(|x| x.as_str())
        .map(|s| s.trim().trim_matches(['"', '\'']).trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if topics.is_empty() {
        return Err(TopicParseError {
            raw: raw.to_string(),
        });
    }
    Ok(topics)
}

/// Keeps the first occurrence of each topic under case-fold and whitespace
/// normalization.
pub fn dedup_topics(topics: Vec<Topic>) -> Vec<Topic> {
    let mut seen = HashSet::new();
    topics
        .into_iter()
        .filter(|t| seen.insert(normalize_text(&t.text)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicBatch {
    pub category: TopicCategory,
    pub batch_id: u32,
    pub seed: u64,
    pub temperature: f64,
    pub prompt_hash: String,
    /// Parsed topics before deduplication; `None` when the output was unparseable.
    pub parsed: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSet {
    pub topics: Vec<Topic>,
    pub requested_general: usize,
    pub requested_cultural: usize,
    pub batches: Vec<TopicBatch>,
    /// Topics dropped because the other category already produced them.
    pub collisions: Vec<String>,
}

impl TopicSet {
    pub fn of(&self, category: TopicCategory) -> impl Iterator<Item = &Topic> {
        self.topics.iter().filter(move |t| t.category == category)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSettings {
    pub temperature: f64,
    pub max_tokens: u32,
    /// Unparseable batches tolerated before giving up.
    pub retry_limit: u32,
}

impl Default for TopicSettings {
    fn default() -> Self {
        Self {
            temperature: TOPIC_TEMPERATURE,
            max_tokens: 1024,
            retry_limit: 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum TopicError {
    #[error("requested topic count must be at least 1")]
    InvalidCount,
    #[error("topic generation exhausted after {batches} batches with {collected} of {requested} {category} topics")]
    Exhausted {
        category: TopicCategory,
        requested: usize,
        collected: usize,
        batches: usize,
    },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Generates `n` unique topics of one category. `seen` holds normalized
/// texts that are already taken (by earlier calls or the other category);
/// `first_batch` offsets batch ids so extension rounds never reuse a seed.
#[allow(clippy::type_complexity)]
pub fn generate_topics(
    category: TopicCategory,
    n: usize,
    gateway: &Gateway,
    seed: u64,
    settings: &TopicSettings,
    seen: &mut HashSet<String>,
    first_batch: u32,
) -> Result<(Vec<Topic>, Vec<TopicBatch>, Vec<String>), TopicError> {
    if n == 0 {
        return Err(TopicError::InvalidCount);
    }
    let prompt = render_topic_prompt(category);
    let prompt_hash = sha256_hex(prompt.as_bytes());
    let mut kept = Vec::new();
    let mut batches = Vec::new();
    let mut collisions = Vec::new();
    let mut failures = 0u32;
    let mut stale = 0u32;
    let mut next = first_batch;
    while kept.len() < n {
        let remaining = n - kept.len();
        let wave = remaining
            .div_ceil(TOPICS_PER_BATCH)
            .clamp(1, gateway.budget().max_concurrent.max(1) * 2) as u32;
        let ids: Vec<u32> = (next..next + wave).collect();
        next += wave;
        let results: Vec<(u32, u64, Result<String, ProviderError>)> = ids
            .par_iter()
            .map(|&b| {
                let s = derive_seed(seed, &["topics", &category.to_string(), &b.to_string()]);
                let out =
                    GenRequest::new(prompt.clone(), settings.temperature, settings.max_tokens)
                        .and_then(|r| gateway.complete(&r.with_seed(s)));
                (b, s, out)
            })
            .collect();
        for (batch_id, s, out) in results {
            if kept.len() >= n {
                break;
            }
            let raw = out?;
            let parsed = parse_topic_list(&raw);
            batches.push(TopicBatch {
                category,
                batch_id,
                seed: s,
                temperature: settings.temperature,
                prompt_hash: prompt_hash.clone(),
                parsed: parsed.as_ref().ok().map(Vec::len),
            });
            let texts = match parsed {
                Ok(t) => t,
                Err(e) => {
                    failures += 1;
                    tracing::warn!(%category, batch_id, raw = %e.raw, "unparseable topic batch");
                    if failures > settings.retry_limit {
                        return Err(TopicError::Exhausted {
                            category,
                            requested: n,
                            collected: kept.len(),
                            batches: batches.len(),
                        });
                    }
                    continue;
                }
            };
            let before = kept.len();
            for text in texts {
                if kept.len() >= n {
                    break;
                }
                let key = normalize_text(&text);
                if seen.insert(key.clone()) {
                    kept.push(Topic {
                        text,
                        category,
                        batch_id,
                    });
                } else if !kept.iter().any(|t: &Topic| normalize_text(&t.text) == key) {
                    collisions.push(text);
                }
            }
            // a generator that only repeats itself would otherwise loop forever
            stale = if kept.len() == before { stale + 1 } else { 0 };
            if stale > settings.retry_limit {
                return Err(TopicError::Exhausted {
                    category,
                    requested: n,
                    collected: kept.len(),
                    batches: batches.len(),
                });
            }
        }
    }
    Ok((kept, batches, collisions))
}

/// Generates general then cultural topics with one global duplicate check.
pub fn generate_topic_set(
    general: usize,
    cultural: usize,
    gateway: &Gateway,
    seed: u64,
    settings: &TopicSettings,
) -> Result<TopicSet, TopicError> {
    let mut seen = HashSet::new();
    let mut set = TopicSet {
        topics: Vec::new(),
        requested_general: general,
        requested_cultural: cultural,
        batches: Vec::new(),
        collisions: Vec::new(),
    };
    for (category, n) in [
        (TopicCategory::General, general),
        (TopicCategory::Cultural, cultural),
    ] {
        if n == 0 {
            continue;
        }
        let (topics, batches, collisions) =
            generate_topics(category, n, gateway, seed, settings, &mut seen, 0)?;
        set.topics.extend(topics);
        set.batches.extend(batches);
        set.collisions.extend(collisions);
    }
    if set.topics.is_empty() {
        return Err(TopicError::InvalidCount);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ProviderError, TextGenerator};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn topic(text: &str) -> Topic {
        Topic {
            text: text.into(),
            category: TopicCategory::General,
            batch_id: 0,
        }
    }

    #[test]
    fn prompts_are_category_specific() {
        let g = render_topic_prompt(TopicCategory::General);
        let c = render_topic_prompt(TopicCategory::Cultural);
        assert!(g.contains("completely random topics"));
        assert!(c.contains("expert knowledge of Thai culture"));
        assert!(!g.contains("native Thai person"));
        for p in [&g, &c] {
            assert!(p.contains("a list of strings"));
            assert!(p.ends_with(TOPIC_PROMPT_TAIL));
        }
    }

    #[test]
    fn parses_canonical_and_wrapped_lists() {
        assert_eq!(parse_topic_list(r#"["a", "b"]"#).unwrap(), vec!["a", "b"]);
        assert_eq!(
            parse_topic_list(r#"Here you go: ["a","b"]"#).unwrap(),
            vec!["a", "b"]
        );
        assert!(parse_topic_list("no list here").is_err());
        assert!(parse_topic_list("[1, 2]").is_err());
    }

    #[test]
    fn dedup_normalizes_case_and_space() {
        let out = dedup_topics(vec![topic("A "), topic("a")]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].text, "A ");
        let disjoint = vec![topic("x"), topic("y")];
        assert_eq!(dedup_topics(disjoint.clone()), disjoint);
    }

    #[test]
    fn planted_duplicates_are_removed() {
        let mut topics: Vec<Topic> = (0..900).map(|i| topic(&format!("topic {i}"))).collect();
        for i in 0..100 {
            topics.insert(i * 9 + 5, topic(&format!("  TOPIC   {}", i * 7)));
        }
        assert_eq!(topics.len(), 1000);
        let once = dedup_topics(topics);
        assert_eq!(once.len(), 900);
        assert_eq!(dedup_topics(once.clone()), once);
    }

    /// Returns 20 topics per call where consecutive calls overlap by 5.
    struct Overlapping {
        calls: AtomicUsize,
    }

    impl TextGenerator for Overlapping {
        fn id(&self) -> &str {
            "overlapping"
        }
        fn is_remote(&self) -> bool {
            false
        }
        fn complete(&self, _req: &GenRequest) -> Result<String, ProviderError> {
            let k = self.calls.fetch_add(1, Ordering::SeqCst);
            let start = k * 15;
            let items: Vec<String> = (start..start + 20).map(|i| format!("\"t{i}\"")).collect();
            Ok(format!("[{}]", items.join(", ")))
        }
    }

    fn gateway_with(g: Arc<dyn TextGenerator>) -> Gateway {
        Gateway::builder().generator(g).build().unwrap()
    }

    #[test]
    fn one_call_suffices_for_twenty() {
        let g = Arc::new(Overlapping {
            calls: AtomicUsize::new(0),
        });
        let gw = gateway_with(g.clone());
        let mut seen = HashSet::new();
        let (topics, batches, _) = generate_topics(
            TopicCategory::General,
            20,
            &gw,
            1,
            &TopicSettings::default(),
            &mut seen,
            0,
        )
        .unwrap();
        assert_eq!(topics.len(), 20);
        assert_eq!(g.calls.load(Ordering::SeqCst), 1);
        assert_eq!(batches[0].temperature, 0.95);
    }

    #[test]
    fn overlapping_batches_loop_until_enough() {
        let g = Arc::new(Overlapping {
            calls: AtomicUsize::new(0),
        });
        let gw = gateway_with(g.clone());
        let mut seen = HashSet::new();
        let (topics, _, _) = generate_topics(
            TopicCategory::General,
            30,
            &gw,
            1,
            &TopicSettings::default(),
            &mut seen,
            0,
        )
        .unwrap();
        assert_eq!(topics.len(), 30);
        assert!(g.calls.load(Ordering::SeqCst) >= 2);
        assert_eq!(dedup_topics(topics.clone()).len(), 30);
    }

    #[test]
    fn mock_topic_sets_are_deterministic() {
        let a = generate_topic_set(6, 8, &Gateway::mock(), 42, &TopicSettings::default()).unwrap();
        let b = generate_topic_set(6, 8, &Gateway::mock(), 42, &TopicSettings::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.of(TopicCategory::General).count(), 6);
        assert_eq!(a.of(TopicCategory::Cultural).count(), 8);
    }

    struct Garbage;
    impl TextGenerator for Garbage {
        fn id(&self) -> &str {
            "garbage"
        }
        fn is_remote(&self) -> bool {
            false
        }
        fn complete(&self, _req: &GenRequest) -> Result<String, ProviderError> {
            Ok("I cannot help with that".into())
        }
    }

    #[test]
    fn unparseable_output_exhausts_the_budget() {
        let gw = gateway_with(Arc::new(Garbage));
        let mut seen = HashSet::new();
        let err = generate_topics(
            TopicCategory::Cultural,
            5,
            &gw,
            1,
            &TopicSettings::default(),
            &mut seen,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, TopicError::Exhausted { collected: 0, .. }));
    }
}
