//! Deterministic in-process providers.
//!
//! Every mock is a pure function of its inputs (and seed, where one is
//! accepted). The text generator recognizes the pipeline's prompt families
//! and answers in the format each one requests, occasionally emitting a
//! malformed payload so retry paths get exercised.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::wiki::split_sections;
use super::{
    Embedder, EmbeddingVector, GenRequest, Paraphraser, ProviderError, TextGenerator, Translator,
    WikiArticleRef, WikiSection, WikiSource,
};
use crate::util::{derive_seed, fnv1a, seeded_rng};

const GENERAL_WORDS: &[&str] = &[
    "ข้าว",
    "น้ำ",
    "ตลาด",
    "ครอบครัว",
    "อาหาร",
    "ดนตรี",
    "ภาษา",
    "ประวัติศาสตร์",
    "วิทยาศาสตร์",
    "คณิตศาสตร์",
    "ปรัชญา",
    "ธรรมชาติ",
    "ภูเขา",
    "ทะเล",
    "แม่น้ำ",
    "เมือง",
    "หมู่บ้าน",
    "โรงเรียน",
    "นักเรียน",
    "ครู",
    "หนังสือ",
    "ศิลปะ",
    "การเดินทาง",
    "สุขภาพ",
    "การออกกำลังกาย",
    "เทคโนโลยี",
    "คอมพิวเตอร์",
    "เศรษฐกิจ",
    "การเกษตร",
    "ผลไม้",
    "ดอกไม้",
    "ฝน",
    "ฤดูร้อน",
    "ฤดูหนาว",
    "พระอาทิตย์",
    "ดวงจันทร์",
    "ดาว",
    "กีฬา",
    "ฟุตบอล",
    "บ้าน",
    "ถนน",
    "รถไฟ",
    "เรือ",
    "ขนม",
    "ชา",
    "กาแฟ",
    "ความรัก",
    "มิตรภาพ",
    "ความสุข",
    "การทำงาน",
    "เงิน",
    "ธนาคาร",
    "โรงพยาบาล",
    "แพทย์",
    "ยา",
    "ป่า",
    "นก",
    "ปลา",
    "แมว",
    "สุนัข",
    "ทักษะ",
    "ความคิด",
    "อนาคต",
    "อดีต",
    "พลังงาน",
    "อากาศ",
    "ดิน",
    "ไฟ",
    "แสง",
    "เสียง",
    "เวลา",
    "ความฝัน",
    "การนอน",
    "กาแล็กซี",
    "จักรวาล",
];

const CULTURAL_WORDS: &[&str] = &[
    "วัด",
    "ประเพณี",
    "เทศกาล",
    "สงกรานต์",
    "ลอยกระทง",
    "มวยไทย",
    "ผ้าไหม",
    "ตลาดน้ำ",
    "ต้มยำ",
    "ส้มตำ",
    "ทุเรียน",
    "มะม่วง",
    "ช้าง",
    "พระ",
    "สมุนไพร",
    "รามเกียรติ์",
    "โขน",
    "ลิเก",
    "หมอลำ",
    "กรุงศรีอยุธยา",
    "สุโขทัย",
    "ล้านนา",
    "อีสาน",
    "ภาคใต้",
    "ข้าวเหนียว",
    "แกงเขียวหวาน",
    "ผ้าขาวม้า",
    "การไหว้",
    "บุญบั้งไฟ",
    "แห่เทียนพรรษา",
    "ตักบาตร",
    "นวดแผนไทย",
    "ภาษาถิ่น",
    "ลายไทย",
    "เรือนไทย",
    "ดนตรีไทย",
    "ระนาด",
    "พวงมาลัย",
    "ศาลพระภูมิ",
    "วันพ่อ",
];

const CONNECTIVES: &[&str] = &["และ", "ของ", "ใน", "กับ", "เพื่อ", "จาก", "ที่", "โดย"];

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words[rng.gen_range(0..words.len())]
}

fn phrase(rng: &mut ChaCha8Rng, words: &[&str]) -> String {
    let n = rng.gen_range(2..=3);
    let mut parts = Vec::with_capacity(2 * n);
    for i in 0..n {
        if i > 0 {
            parts.push(pick(rng, CONNECTIVES).to_string());
        }
        parts.push(pick(rng, words).to_string());
    }
    parts.join(" ")
}

fn sentence(rng: &mut ChaCha8Rng, anchor: &[&str]) -> String {
    let n = rng.gen_range(5..=9);
    let mut parts: Vec<String> = (0..n)
        .map(|_| {
            if !anchor.is_empty() && rng.gen_bool(0.3) {
                pick(rng, anchor).to_string()
            } else if rng.gen_bool(0.25) {
                pick(rng, CONNECTIVES).to_string()
            } else {
                pick(rng, GENERAL_WORDS).to_string()
            }
        })
        .collect();
    parts.dedup();
    parts.join(" ")
}

/// Returns the text between the first `open` and the following `close`.
fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let end = text[start..].find(close)? + start;
    Some(text[start..end].trim())
}

#[derive(Debug, Clone)]
pub struct MockGenerator {
    /// Probability of emitting a deliberately malformed payload.
    pub malformed_rate: f64,
}

impl Default for MockGenerator {
    fn default() -> Self {
        Self::new()
    }
}

impl MockGenerator {
    pub fn new() -> Self {
        Self {
            malformed_rate: 0.03,
        }
    }

    pub fn well_formed() -> Self {
        Self {
            malformed_rate: 0.0,
        }
    }

    fn topics(&self, rng: &mut ChaCha8Rng, cultural: bool) -> String {
        let words = if cultural {
            CULTURAL_WORDS
        } else {
            GENERAL_WORDS
        };
        let topics: Vec<String> = (0..20).map(|_| phrase(rng, words)).collect();
        let quoted: Vec<String> = if rng.gen_bool(0.25) {
            topics.iter().map(|t| format!("'{t}'")).collect()
        } else {
            topics.iter().map(|t| format!("\"{t}\"")).collect()
        };
        let list = format!("[{}]", quoted.join(", "));
        if rng.gen_bool(0.15) {
            format!("นี่คือหัวข้อ: {list}")
        } else {
            list
        }
    }

    fn context(&self, rng: &mut ChaCha8Rng, prompt: &str) -> String {
        let topic = between(prompt, "related to the topic ", ".").unwrap_or("หัวข้อ");
        let anchor: Vec<&str> = topic.split_whitespace().collect();
        let n = rng.gen_range(5..=8);
        (0..n)
            .map(|_| sentence(rng, &anchor))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn closed_qa(&self, rng: &mut ChaCha8Rng, prompt: &str) -> String {
        let ctx = between(prompt, "<context>", "</context>").unwrap_or("");
        let anchor: Vec<&str> = ctx.split_whitespace().take(40).collect();
        let pairs: Vec<String> = (0..5)
            .map(|_| {
                let q = format!("{} คืออะไร", sentence(rng, &anchor));
                let a = sentence(rng, &anchor);
                format!("{{\"question\": \"{q}\", \"answer\": \"{a}\"}}")
            })
            .collect();
        format!("[{}]", pairs.join(", "))
    }

    fn summary(&self, rng: &mut ChaCha8Rng, prompt: &str) -> String {
        let ctx = between(prompt, "<context>", "</context>").unwrap_or("");
        let anchor: Vec<&str> = ctx.split_whitespace().take(40).collect();
        let style = between(prompt, "summary in ", " format").unwrap_or("paragraphs");
        let points: Vec<String> = (0..3).map(|_| sentence(rng, &anchor)).collect();
        let body = match style {
            "bullet points" => points
                .iter()
                .map(|p| format!("- {p}"))
                .collect::<Vec<_>>()
                .join("\\n"),
            "numbered lists" => points
                .iter()
                .enumerate()
                .map(|(i, p)| format!("{}. {p}", i + 1))
                .collect::<Vec<_>>()
                .join("\\n"),
            _ => points.join(" "),
        };
        let instruction = format!(
            "โปรดสรุปข้อความต่อไปนี้ในรูปแบบ{style} {}",
            sentence(rng, &anchor)
        );
        format!("{{\"summary\": \"{body}\", \"instruction\": \"{instruction}\"}}")
    }

    fn conversation(&self, rng: &mut ChaCha8Rng, prompt: &str) -> String {
        let topic = between(prompt, "on the topic of ", ". The user").unwrap_or("");
        let anchor: Vec<&str> = topic.split_whitespace().collect();
        format!(
            "Input: {} ไหมครับ\nOutput: {} นะครับ {}",
            sentence(rng, &anchor),
            sentence(rng, &anchor),
            sentence(rng, &anchor)
        )
    }

    fn multiple_choice(&self, rng: &mut ChaCha8Rng, prompt: &str) -> String {
        let ctx = between(prompt, "<context>", "</context>").unwrap_or("");
        let anchor: Vec<&str> = ctx.split_whitespace().take(40).collect();
        let mut choices: Vec<String> = Vec::new();
        while choices.len() < 4 {
            let c = phrase(rng, GENERAL_WORDS);
            if !choices
                .iter()
                .any(|o| o.contains(&c) || c.contains(o.as_str()))
            {
                choices.push(c);
            }
        }
        let explanation = loop {
            let e = format!("{} {}", sentence(rng, &anchor), sentence(rng, &anchor));
            if !choices.iter().any(|c| e.contains(c.as_str())) {
                break e;
            }
        };
        // correct answer listed first, mirroring the generator bias that
        // shuffling later removes
        let listed: String = choices.iter().map(|c| format!("- {c}\n")).collect();
        format!(
            "Question: {} คืออะไร\nChoices:\n{listed}Answer: {explanation} ดังนั้นคำตอบที่ถูกต้องคือ {}",
            sentence(rng, &anchor),
            choices[0]
        )
    }

    fn malformed(&self, rng: &mut ChaCha8Rng) -> String {
        match rng.gen_range(0..3) {
            0 => "ขออภัย ฉันไม่สามารถทำตามคำขอนี้ได้".to_string(),
            1 => "[\"ข้อความที่ถูกตัด".to_string(),
            _ => "{\"question\": }".to_string(),
        }
    }
}

impl TextGenerator for MockGenerator {
    fn id(&self) -> &str {
        "mock-generator"
    }

    fn is_remote(&self) -> bool {
        false
    }

    fn complete(&self, req: &GenRequest) -> Result<String, ProviderError> {
        if let Some(rest) = req.prompt.strip_prefix("echo:") {
            return Ok(rest.to_string());
        }
        let seed = derive_seed(
            req.seed.unwrap_or(0),
            &[&req.prompt, &req.temperature.to_bits().to_string()],
        );
        let mut rng = seeded_rng(seed);
        let p = &req.prompt;
        let kind = if p.contains("completely random topics") {
            0
        } else if p.contains("'question' key") {
            1
        } else if p.contains("Generate a concise summary") {
            2
        } else if p.contains("Generate a conversation") {
            3
        } else if p.contains("multiple-choice question") {
            4
        } else {
            5
        };
        if kind < 5 && self.malformed_rate > 0.0 && rng.gen_bool(self.malformed_rate) {
            return Ok(self.malformed(&mut rng));
        }
        Ok(match kind {
            0 => self.topics(&mut rng, p.contains("relating to your culture")),
            1 => self.closed_qa(&mut rng, p),
            2 => self.summary(&mut rng, p),
            3 => self.conversation(&mut rng, p),
            4 => self.multiple_choice(&mut rng, p),
            _ => self.context(&mut rng, p),
        })
    }
}

/// Hashed character-trigram embedder. Identical texts map to identical
/// vectors; texts sharing most of their characters land close together.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    pub dimension: usize,
    pub batch: usize,
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self {
            dimension: 256,
            batch: 64,
        }
    }
}

impl MockEmbedder {
    fn hashed(&self, text: &str, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        let chars: Vec<char> = std::iter::once('\u{2}')
            .chain(text.chars())
            .chain(std::iter::once('\u{3}'))
            .collect();
        let mut buf = String::new();
        for w in chars.windows(n.min(chars.len())) {
            buf.clear();
            buf.extend(w.iter());
            let h = fnv1a(buf.as_bytes());
            let slot = (h % self.dimension as u64) as usize;
            let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
            v[slot] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Embedder for MockEmbedder {
    fn id(&self) -> &str {
        "mock-embedder"
    }

    fn is_remote(&self) -> bool {
        false
    }

    fn max_batch(&self) -> usize {
        self.batch
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        texts
            .iter()
            .map(|t| EmbeddingVector::new(self.hashed(t, 3)))
            .collect()
    }

    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        tokens
            .iter()
            .map(|t| EmbeddingVector::new(self.hashed(t, 2)))
            .collect()
    }
}

/// Wraps text in language-tagged brackets: `en⟨x⟩`. Round trips are visible
/// (`th⟨en⟨x⟩⟩`) and never reproduce the input.
#[derive(Debug, Clone)]
pub struct MockTranslator {
    pub languages: Vec<String>,
}

impl Default for MockTranslator {
    fn default() -> Self {
        Self {
            languages: vec!["th".into(), "en".into()],
        }
    }
}

impl Translator for MockTranslator {
    fn id(&self) -> &str {
        "mock-translator"
    }

    fn is_remote(&self) -> bool {
        false
    }

    fn supports(&self, source: &str, target: &str) -> bool {
        source != target
            && self.languages.iter().any(|l| l == source)
            && self.languages.iter().any(|l| l == target)
    }

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, ProviderError> {
        if text.is_empty() {
            return Err(ProviderError::InvalidRequest(
                "cannot translate empty text".into(),
            ));
        }
        if !self.supports(source, target) {
            return Err(ProviderError::Config(format!(
                "unsupported pair {source} -> {target}"
            )));
        }
        Ok(format!("{target}⟨{text}⟩"))
    }
}

/// Produces `para{i}⟨...⟩` variants with the words shuffled by seed.
#[derive(Debug, Clone, Default)]
pub struct MockParaphraser;

impl Paraphraser for MockParaphraser {
    fn id(&self) -> &str {
        "mock-paraphraser"
    }

    fn is_remote(&self) -> bool {
        false
    }

    fn paraphrase(
        &self,
        text: &str,
        count: usize,
        seed: u64,
    ) -> Result<Vec<String>, ProviderError> {
        if count == 0 {
            return Err(ProviderError::InvalidRequest("count must be >= 1".into()));
        }
        Ok((1..=count)
            .map(|i| {
                let mut rng = seeded_rng(derive_seed(seed, &[text, &i.to_string()]));
                let mut words: Vec<&str> = text.split_whitespace().collect();
                words.shuffle(&mut rng);
                format!("para{i}⟨{}⟩", words.join(" "))
            })
            .collect())
    }
}

/// Wikipedia stand-in: either synthesizes articles from the query hash or
/// serves fixed fixtures.
#[derive(Debug, Clone)]
pub struct MockWiki {
    fixtures: Option<WikiFixtures>,
}

#[derive(Debug, Clone, Default)]
pub struct WikiFixtures {
    /// query -> ranked (title, page_id)
    pub searches: HashMap<String, Vec<(String, u64)>>,
    /// page_id -> raw wikitext
    pub pages: HashMap<u64, String>,
}

impl MockWiki {
    pub fn synthetic() -> Self {
        Self { fixtures: None }
    }

    pub fn with_fixtures(fixtures: WikiFixtures) -> Self {
        Self {
            fixtures: Some(fixtures),
        }
    }

    fn synthetic_page(page_id: u64) -> String {
        let mut rng = seeded_rng(page_id);
        let mut text = String::new();
        let sections = rng.gen_range(1..=4);
        for s in 0..=sections {
            if s > 0 {
                text.push_str(&format!("\n== {} ==\n", phrase(&mut rng, GENERAL_WORDS)));
            }
            let n = rng.gen_range(3..=6);
            for _ in 0..n {
                text.push_str(&sentence(&mut rng, &[]));
                text.push_str(" [[");
                text.push_str(pick(&mut rng, CULTURAL_WORDS));
                text.push_str("]]\n");
            }
        }
        text
    }
}

impl WikiSource for MockWiki {
    fn id(&self) -> &str {
        "mock-wiki"
    }

    fn is_remote(&self) -> bool {
        false
    }

    fn search(&self, query: &str, limit: u32) -> Result<Vec<WikiArticleRef>, ProviderError> {
        let hits: Vec<(String, u64)> = match &self.fixtures {
            Some(f) => f.searches.get(query).cloned().unwrap_or_default(),
            None => {
                let h = fnv1a(query.as_bytes());
                if h.is_multiple_of(7) {
                    Vec::new()
                } else {
                    (0..10u64)
                        .map(|k| {
                            (
                                format!("{query} ({})", k + 1),
                                (h ^ k.wrapping_mul(0x9e37_79b9)) % 1_000_000_007 + 1,
                            )
                        })
                        .collect()
                }
            }
        };
        Ok(hits
            .into_iter()
            .take(limit as usize)
            .enumerate()
            .map(|(i, (title, page_id))| WikiArticleRef {
                title,
                page_id,
                relevance_rank: i as u32 + 1,
            })
            .collect())
    }

    fn sections(&self, article: &WikiArticleRef) -> Result<Vec<WikiSection>, ProviderError> {
        let text = match &self.fixtures {
            Some(f) => f
                .pages
                .get(&article.page_id)
                .cloned()
                .ok_or_else(|| ProviderError::NotFound(format!("page {}", article.page_id)))?,
            None => Self::synthetic_page(article.page_id),
        };
        Ok(split_sections(article.page_id, &article.title, &text))
    }
}
