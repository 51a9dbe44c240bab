//! Parsers for the four task output formats.
//!
//! Every parser returns either a value satisfying its type's invariants or a
//! [`ParseError`]; nothing partially populated escapes.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::lenient::{find_value, Shape};
use crate::util::normalize_text;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no {0} payload found")]
    NoPayload(&'static str),
    #[error("expected {expected} question-answer pairs, found {found}")]
    WrongCount { expected: usize, found: usize },
    #[error("missing key '{0}'")]
    MissingKey(&'static str),
    #[error("field '{0}' is empty")]
    EmptyField(&'static str),
    #[error("missing '{0}' marker")]
    MissingMarker(&'static str),
    #[error("found {0} '{1}' markers where exactly one is allowed")]
    Repeated(usize, &'static str),
    #[error("need at least 2 choices, found {0}")]
    TooFewChoices(usize),
    #[error("choices are not distinct")]
    DuplicateChoices,
    #[error("ordinal reference '{0}' is not allowed")]
    OrdinalReference(String),
    #[error("correct choice could not be located in the answer")]
    CorrectChoiceNotFound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

fn get_str(obj: &serde_json::Map<String, Value>, key: &'static str) -> Result<String, ParseError> {
    let v = obj
        .iter()
        .find(|(k, _)| k.trim().eq_ignore_ascii_case(key))
        .map(|(_, v)| v)
        .ok_or(ParseError::MissingKey(key))?;
    let s = match v {
        Value::String(s) => s.trim().to_string(),
        // bullet summaries sometimes come back as a list
        Value::Array(items) if items.iter().all(Value::is_string) => items
            .iter()
            .filter_map(Value::as_str)
            .map(str::trim)
            .collect::<Vec<_>>()
            .join("\n"),
        Value::Number(n) => n.to_string(),
        _ => String::new(),
    };
    if s.is_empty() {
        return Err(ParseError::EmptyField(key));
    }
    Ok(s)
}

pub fn parse_closed_qa(raw: &str, expected: usize) -> Result<Vec<QaPair>, ParseError> {
    let list_of_dicts = |v: &Value| {
        v.as_array()
            .is_some_and(|a| !a.is_empty() && a.iter().all(Value::is_object))
    };
    let v = find_value(raw, Shape::List, list_of_dicts)
        .ok_or(ParseError::NoPayload("question-answer list"))?;
    let pairs = v
        .as_array()
        .expect("checked above")
        .iter()
        .map(|item| {
            let obj = item.as_object().expect("checked above");
            Ok(QaPair {
                question: get_str(obj, "question")?,
                answer: get_str(obj, "answer")?,
            })
        })
        .collect::<Result<Vec<_>, ParseError>>()?;
    if pairs.len() != expected {
        return Err(ParseError::WrongCount {
            expected,
            found: pairs.len(),
        });
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryPayload {
    pub summary: String,
    pub instruction: String,
}

pub fn parse_summary(raw: &str) -> Result<SummaryPayload, ParseError> {
    let has_key = |v: &Value| {
        v.as_object().is_some_and(|o| {
            o.keys().any(|k| {
                k.trim().eq_ignore_ascii_case("summary")
                    || k.trim().eq_ignore_ascii_case("instruction")
            })
        })
    };
    let v =
        find_value(raw, Shape::Dict, has_key).ok_or(ParseError::NoPayload("summary dictionary"))?;
    let obj = v.as_object().expect("checked above");
    Ok(SummaryPayload {
        summary: get_str(obj, "summary")?,
        instruction: get_str(obj, "instruction")?,
    })
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("valid regex"))
}

fn strip_format_tags(raw: &str) -> String {
    static TAGS: OnceLock<Regex> = OnceLock::new();
    re(&TAGS, r"(?i)</?format>")
        .replace_all(raw, " ")
        .into_owned()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationPayload {
    pub input: String,
    pub output: String,
}

pub fn parse_conversation(raw: &str) -> Result<ConversationPayload, ParseError> {
    static INPUT: OnceLock<Regex> = OnceLock::new();
    static OUTPUT: OnceLock<Regex> = OnceLock::new();
    let text = strip_format_tags(raw);
    let inputs: Vec<_> = re(&INPUT, r"(?i)\binput\s*:").find_iter(&text).collect();
    let outputs: Vec<_> = re(&OUTPUT, r"(?i)\boutput\s*:").find_iter(&text).collect();
    match inputs.len() {
        0 => return Err(ParseError::MissingMarker("Input:")),
        1 => {}
        n => return Err(ParseError::Repeated(n, "Input:")),
    }
    match outputs.len() {
        0 => return Err(ParseError::MissingMarker("Output:")),
        1 => {}
        n => return Err(ParseError::Repeated(n, "Output:")),
    }
    let (i, o) = (inputs[0], outputs[0]);
    if o.start() < i.end() {
        return Err(ParseError::MissingMarker("Input: before Output:"));
    }
    let input = text[i.end()..o.start()].trim().to_string();
    let output = text[o.end()..].trim().to_string();
    if input.is_empty() {
        return Err(ParseError::EmptyField("input"));
    }
    if output.is_empty() {
        return Err(ParseError::EmptyField("output"));
    }
    Ok(ConversationPayload { input, output })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McQuestion {
    pub question: String,
    pub choices: Vec<String>,
    /// Explanation, reasoning and the correct answer, in that order.
    pub answer_text: String,
    pub correct_index: usize,
}

fn ordinal_patterns() -> &'static Regex {
    static ORD: OnceLock<Regex> = OnceLock::new();
    re(
        &ORD,
        concat!(
            r"(?i)\b(?:all|none|both|neither) of the above\b",
            r"|\ball the above\b",
            r"|\babove (?:answers|choices|options)\b",
            r"|\b(?:first|second|third|fourth|last) (?:answer|choice|option)\b",
            r"|\b(?:option|choice) \(?[a-d1-4]\)?(?:\s|$|[.,])",
            r"|\b(?:answers|choices|options) [a-d1-4] (?:and|or) [a-d1-4]\b",
            r"|ทั้งหมดข้างต้น|ถูกทุกข้อ|ผิดทุกข้อ|ไม่มีข้อใดถูก|ทุกข้อที่กล่าวมา|ข้อแรก|ข้อสุดท้าย",
            r"|ตัวเลือกแรก|ตัวเลือกสุดท้าย|ตัวเลือกที่\s*[1-4๑-๔]|ข้อ\s*[1-4๑-๔](?:\s|$|[.,)])",
            r"|ข้อ\s*[กขคง](?:\s|$|[.,)])|ถูกทั้ง\s*[กขคง]\s*และ\s*[กขคง]",
        ),
    )
}

/// Returns the first ordinal or positional reference in `text`, if any.
pub fn find_ordinal(text: &str) -> Option<String> {
    ordinal_patterns()
        .find(text)
        .map(|m| m.as_str().trim().to_string())
}

fn clean_choice(raw: &str) -> String {
    static LABEL: OnceLock<Regex> = OnceLock::new();
    let mut s = raw.trim();
    if s.starts_with('[') && s.ends_with(']') && s.len() >= 2 {
        s = s[1..s.len() - 1].trim();
    }
    re(&LABEL, r"^(?:[A-Da-d]|[1-4])[.)]\s+")
        .replace(s, "")
        .trim()
        .to_string()
}

fn parse_choices(block: &str) -> Vec<String> {
    static BULLET_LINE: OnceLock<Regex> = OnceLock::new();
    static INLINE: OnceLock<Regex> = OnceLock::new();
    let bullet = re(&BULLET_LINE, r"^\s*[-•*]\s*(.*)$");
    let lines: Vec<&str> = block.lines().filter(|l| !l.trim().is_empty()).collect();
    let choices: Vec<String> = if lines.len() > 1 && lines.iter().all(|l| bullet.is_match(l)) {
        lines
            .iter()
            .filter_map(|l| bullet.captures(l))
            .map(|c| clean_choice(&c[1]))
            .collect()
    } else {
        let flat = block.split_whitespace().collect::<Vec<_>>().join(" ");
        re(&INLINE, r"(?:^|\s)[-•*]\s+")
            .split(&flat)
            .map(clean_choice)
            .collect()
    };
    choices.into_iter().filter(|c| !c.is_empty()).collect()
}

fn answer_markers() -> &'static Regex {
    static MARK: OnceLock<Regex> = OnceLock::new();
    re(
        &MARK,
        r"(?i)correct answer(?: is)?\s*:?|the answer is\s*:?|answer is\s*:?|คำตอบที่ถูกต้อง(?:คือ)?\s*:?|คำตอบคือ\s*:?|ดังนั้น",
    )
}

fn containment_key(s: &str) -> String {
    normalize_text(s.trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace()))
}

fn longest_contained(segment: &str, choices: &[String]) -> Option<usize> {
    let seg = normalize_text(segment);
    let mut best: Option<(usize, usize)> = None;
    for (i, c) in choices.iter().enumerate() {
        let key = containment_key(c);
        if key.is_empty() || !seg.contains(&key) {
            continue;
        }
        let len = key.chars().count();
        if best.is_none_or(|(_, l)| len > l) {
            best = Some((i, len));
        }
    }
    best.map(|(i, _)| i)
}

/// Locates the correct choice: the longest choice contained in the text
/// after the last answer marker, else anywhere in the answer. Ties go to
/// the earliest choice.
pub fn resolve_correct(answer: &str, choices: &[String]) -> Option<usize> {
    if let Some(m) = answer_markers().find_iter(answer).last() {
        if let Some(i) = longest_contained(&answer[m.end()..], choices) {
            return Some(i);
        }
    }
    longest_contained(answer, choices)
}

impl McQuestion {
    pub fn validate(&self) -> Result<(), ParseError> {
        if self.question.trim().is_empty() {
            return Err(ParseError::EmptyField("question"));
        }
        if self.answer_text.trim().is_empty() {
            return Err(ParseError::EmptyField("answer"));
        }
        if self.choices.len() < 2 {
            return Err(ParseError::TooFewChoices(self.choices.len()));
        }
        let mut keys: Vec<String> = self.choices.iter().map(|c| normalize_text(c)).collect();
        if keys.iter().any(String::is_empty) {
            return Err(ParseError::EmptyField("choice"));
        }
        keys.sort();
        keys.dedup();
        if keys.len() != self.choices.len() {
            return Err(ParseError::DuplicateChoices);
        }
        for c in &self.choices {
            if let Some(o) = find_ordinal(c) {
                return Err(ParseError::OrdinalReference(o));
            }
        }
        if self.correct_index >= self.choices.len() {
            return Err(ParseError::CorrectChoiceNotFound);
        }
        Ok(())
    }
}

pub fn parse_multiple_choice(raw: &str) -> Result<McQuestion, ParseError> {
    static Q: OnceLock<Regex> = OnceLock::new();
    static C: OnceLock<Regex> = OnceLock::new();
    static A: OnceLock<Regex> = OnceLock::new();
    let text = strip_format_tags(raw);
    let qs: Vec<_> = re(&Q, r"(?i)\bquestion\s*:").find_iter(&text).collect();
    if qs.is_empty() {
        return Err(ParseError::MissingMarker("Question:"));
    }
    let c = re(&C, r"(?i)\bchoices\s*:")
        .find_at(&text, qs[0].end())
        .ok_or(ParseError::MissingMarker("Choices:"))?;
    // a preamble such as "Here is your question:" is dropped; a second
    // question after the choices is not
    let after = qs.iter().filter(|m| m.start() >= c.end()).count();
    if after > 0 {
        return Err(ParseError::Repeated(qs.len(), "Question:"));
    }
    let q = *qs
        .iter()
        .rfind(|m| m.end() <= c.start())
        .expect("first marker precedes the choices");
    let a = re(&A, r"(?i)\banswer\s*:")
        .find_at(&text, c.end())
        .ok_or(ParseError::MissingMarker("Answer:"))?;
    let question = text[q.end()..c.start()].trim().to_string();
    let choices = parse_choices(&text[c.end()..a.start()]);
    let mut answer_text = text[a.end()..].trim();
    if answer_text.starts_with('[') && answer_text.ends_with(']') && answer_text.len() >= 2 {
        answer_text = answer_text[1..answer_text.len() - 1].trim();
    }
    if let Some(o) = find_ordinal(answer_text) {
        return Err(ParseError::OrdinalReference(o));
    }
    let mut mcq = McQuestion {
        question,
        choices,
        answer_text: answer_text.to_string(),
        correct_index: 0,
    };
    if mcq.choices.len() < 2 {
        return Err(ParseError::TooFewChoices(mcq.choices.len()));
    }
    mcq.correct_index =
        resolve_correct(&mcq.answer_text, &mcq.choices).ok_or(ParseError::CorrectChoiceNotFound)?;
    mcq.validate()?;
    Ok(mcq)
}

/// Applies a uniformly random permutation to the choices and remaps the
/// correct index. The answer text is left untouched.
pub fn shuffle_choices(q: &McQuestion, rng: &mut ChaCha8Rng) -> McQuestion {
    let mut order: Vec<usize> = (0..q.choices.len()).collect();
    order.shuffle(rng);
    McQuestion {
        question: q.question.clone(),
        choices: order.iter().map(|&i| q.choices[i].clone()).collect(),
        answer_text: q.answer_text.clone(),
        correct_index: order
            .iter()
            .position(|&i| i == q.correct_index)
            .expect("permutation contains every index"),
    }
}

/// Question followed by one dash-prefixed line per choice.
pub fn render_mc_instruction(q: &McQuestion) -> String {
    let mut s = q.question.trim().to_string();
    for c in &q.choices {
        s.push_str("\n- ");
        s.push_str(c);
    }
    s
}

/// Inverse of [`render_mc_instruction`].
pub fn parse_mc_instruction(instruction: &str) -> (String, Vec<String>) {
    let mut question = Vec::new();
    let mut choices = Vec::new();
    for line in instruction.lines() {
        match line.strip_prefix("- ") {
            Some(c) => choices.push(c.to_string()),
            None if choices.is_empty() => question.push(line),
            None => {}
        }
    }
    (question.join("\n"), choices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;

    const QA5: &str = r#"[{"question": "q1", "answer": "a1"}, {"question": "q2", "answer": "a2"}, {"question": "q3", "answer": "a3"}, {"question": "q4", "answer": "a4"}, {"question": "q5", "answer": "a5"}]"#;

    #[test]
    fn closed_qa_counts() {
        assert_eq!(parse_closed_qa(QA5, 5).unwrap().len(), 5);
        let four = r#"[{'question': 'q1', 'answer': 'a1'}, {'question': 'q2', 'answer': 'a2'}, {'question': 'q3', 'answer': 'a3'}, {'question': 'q4', 'answer': 'a4'}]"#;
        assert_eq!(
            parse_closed_qa(four, 5),
            Err(ParseError::WrongCount {
                expected: 5,
                found: 4
            })
        );
        assert_eq!(
            parse_closed_qa(r#"[{"question": "q"}]"#, 1),
            Err(ParseError::MissingKey("answer"))
        );
    }

    #[test]
    fn summary_requires_both_keys() {
        let ok = parse_summary(r#"Result: {'summary': 's', 'instruction': 'i'}"#).unwrap();
        assert_eq!(ok.summary, "s");
        assert_eq!(ok.instruction, "i");
        assert_eq!(
            parse_summary(r#"{"summary": "s"}"#),
            Err(ParseError::MissingKey("instruction"))
        );
        let list = parse_summary(r#"{"summary": ["- a", "- b"], "instruction": "i"}"#).unwrap();
        assert_eq!(list.summary, "- a\n- b");
    }

    #[test]
    fn conversation_single_pair() {
        let c = parse_conversation("Input: q Output: a").unwrap();
        assert_eq!((c.input.as_str(), c.output.as_str()), ("q", "a"));
        let tagged = parse_conversation("<format>Input: สวัสดี\nOutput: สวัสดีครับ</format>").unwrap();
        assert_eq!(tagged.output, "สวัสดีครับ");
        assert_eq!(
            parse_conversation("Input: q Output: a Input: q2 Output: a2"),
            Err(ParseError::Repeated(2, "Input:"))
        );
        assert_eq!(
            parse_conversation("just text"),
            Err(ParseError::MissingMarker("Input:"))
        );
    }

    fn mc(choices: &[&str], answer: &str) -> String {
        let listed: String = choices.iter().map(|c| format!("- {c}\n")).collect();
        format!("Question: อะไร\nChoices:\n{listed}Answer: {answer}")
    }

    #[test]
    fn multiple_choice_resolves_correct_index() {
        let q = parse_multiple_choice(&mc(
            &["แมว", "สุนัข", "นก", "ปลา"],
            "เพราะว่า... คำตอบที่ถูกต้องคือ นก",
        ))
        .unwrap();
        assert_eq!(q.choices.len(), 4);
        assert_eq!(q.correct_index, 2);
    }

    #[test]
    fn one_line_format_is_accepted() {
        let raw = "Question: Which? Choices: - [red apple] - [green pear] - [blue sky] - [dog] Answer: Because it grows on trees, the correct answer is red apple";
        let q = parse_multiple_choice(raw).unwrap();
        assert_eq!(
            q.choices,
            vec!["red apple", "green pear", "blue sky", "dog"]
        );
        assert_eq!(q.correct_index, 0);
    }

    #[test]
    fn longest_containment_wins() {
        let q = parse_multiple_choice(&mc(
            &["apple", "green apple", "pear"],
            "so the answer is green apple",
        ))
        .unwrap();
        assert_eq!(q.correct_index, 1);
    }

    #[test]
    fn ordinals_are_rejected() {
        let bad = mc(&["a cat", "all of the above"], "the answer is a cat");
        assert!(matches!(
            parse_multiple_choice(&bad),
            Err(ParseError::OrdinalReference(_))
        ));
        let thai = mc(&["แมว", "ทั้งหมดข้างต้น"], "คำตอบคือ แมว");
        assert!(matches!(
            parse_multiple_choice(&thai),
            Err(ParseError::OrdinalReference(_))
        ));
        let in_answer = mc(&["แมว", "หมา"], "ถูกทุกข้อ");
        assert!(matches!(
            parse_multiple_choice(&in_answer),
            Err(ParseError::OrdinalReference(_))
        ));
    }

    #[test]
    fn single_choice_is_rejected() {
        assert_eq!(
            parse_multiple_choice(&mc(&["only"], "only")),
            Err(ParseError::TooFewChoices(1))
        );
    }

    #[test]
    fn shuffle_keeps_correct_text() {
        let q = parse_multiple_choice(&mc(&["w", "x", "y", "z"], "answer is y")).unwrap();
        for s in 0..200 {
            let out = shuffle_choices(&q, &mut seeded_rng(s));
            assert_eq!(out.choices[out.correct_index], q.choices[q.correct_index]);
            let mut a = out.choices.clone();
            let mut b = q.choices.clone();
            a.sort();
            b.sort();
            assert_eq!(a, b);
            assert_eq!(out.answer_text, q.answer_text);
        }
    }

    #[test]
    fn rendered_instruction_round_trips() {
        let q = McQuestion {
            question: "คำถาม?".into(),
            choices: vec!["ก".into(), "ข".into(), "ค".into(), "ง".into()],
            answer_text: "ก".into(),
            correct_index: 0,
        };
        let text = render_mc_instruction(&q);
        assert_eq!(text.lines().filter(|l| l.starts_with("- ")).count(), 4);
        assert_eq!(
            parse_mc_instruction(&text),
            (q.question.clone(), q.choices.clone())
        );
    }

    #[test]
    fn question_preamble_is_ignored_but_second_question_is_not() {
        let q = parse_multiple_choice(
            "Here is your question:\nQuestion: Q? Choices: - red - blue Answer: it is blue",
        )
        .unwrap();
        assert_eq!(q.question, "Q?");
        assert_eq!(q.choices[q.correct_index], "blue");
        let twice =
            "Question: A? Choices: - x - y Answer: y Question: B? Choices: - p - q Answer: q";
        assert!(matches!(
            parse_multiple_choice(twice),
            Err(ParseError::Repeated(2, "Question:"))
        ));
    }
}
