//! Instruction generation for the four tasks: closed QA, summarization,
//! conversation and multiple choice.

pub mod parse;
pub mod prompts;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GenRequest, ProviderError};
use crate::record::{ContextDoc, GenProvenance, InstructionRecord, LineageStep, Task, Topic};
use crate::util::{derive_seed, seeded_rng, sha256_hex};

pub use parse::{
    parse_closed_qa, parse_conversation, parse_mc_instruction, parse_multiple_choice,
    parse_summary, render_mc_instruction, shuffle_choices, McQuestion, ParseError, QaPair,
};
pub use prompts::{QA_PAIRS_PER_CONTEXT, SUMMARY_STYLES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTemperatures {
    pub closed_qa: f64,
    pub summarization: f64,
    pub conversation: f64,
    pub multiple_choice: f64,
}

impl Default for TaskTemperatures {
    fn default() -> Self {
        Self {
            closed_qa: 0.35,
            summarization: 0.35,
            conversation: 0.8,
            multiple_choice: 0.4,
        }
    }
}

impl TaskTemperatures {
    pub fn of(&self, task: Task) -> f64 {
        match task {
            Task::ClosedQa => self.closed_qa,
            Task::Summarization => self.summarization,
            Task::Conversation => self.conversation,
            Task::MultipleChoice => self.multiple_choice,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSettings {
    pub temperatures: TaskTemperatures,
    pub max_tokens: u32,
    pub language: String,
    pub qa_pairs: usize,
    /// Total attempts per generation, so 2 means one re-request.
    pub attempts: u32,
    pub tasks: Vec<Task>,
}

impl Default for TaskSettings {
    fn default() -> Self {
        Self {
            temperatures: TaskTemperatures::default(),
            max_tokens: 1024,
            language: "th".into(),
            qa_pairs: QA_PAIRS_PER_CONTEXT,
            attempts: 2,
            tasks: Task::ALL.to_vec(),
        }
    }
}

/// A generation that stayed malformed after every attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub id_prefix: String,
    pub task: Task,
    pub topic: String,
    pub attempts: u32,
    pub error: String,
    pub raw: String,
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("{} generation for '{}' failed after {} attempts: {}", .0.task, .0.topic, .0.attempts, .0.error)]
    Failed(GenerationFailure),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

struct Attempted<T> {
    value: T,
    provenance: GenProvenance,
}

#[allow(clippy::too_many_arguments)]
fn attempt<T>(
    gateway: &Gateway,
    task: Task,
    topic: &Topic,
    prompt: String,
    settings: &TaskSettings,
    seed: u64,
    id_prefix: &str,
    parse: impl Fn(&str) -> Result<T, ParseError>,
) -> Result<Attempted<T>, TaskError> {
    let temperature = settings.temperatures.of(task);
    let prompt_hash = sha256_hex(prompt.as_bytes());
    let mut last = (String::new(), String::new());
    for k in 0..settings.attempts.max(1) {
        let s = derive_seed(seed, &["attempt", &k.to_string()]);
        let req = GenRequest::new(prompt.clone(), temperature, settings.max_tokens)?.with_seed(s);
        let raw = gateway.complete(&req)?;
        match parse(&raw) {
            Ok(value) => {
                return Ok(Attempted {
                    value,
                    provenance: GenProvenance {
                        generator: gateway.generator_id().to_string(),
                        temperature: Some(temperature),
                        seed: Some(s),
                        prompt_hash: Some(prompt_hash),
                        context_source: None,
                        style: None,
                    },
                })
            }
            Err(e) => {
                tracing::debug!(%task, attempt = k, error = %e, "malformed generation");
                last = (e.to_string(), raw);
            }
        }
    }
    Err(TaskError::Failed(GenerationFailure {
        id_prefix: id_prefix.to_string(),
        task,
        topic: topic.text.clone(),
        attempts: settings.attempts.max(1),
        error: last.0,
        raw: last.1,
    }))
}

fn require_body(ctx: &ContextDoc) -> Result<(), TaskError> {
    if ctx.body.trim().is_empty() {
        return Err(TaskError::Precondition("context body is empty".into()));
    }
    Ok(())
}

fn task_seed(seed: u64, id_prefix: &str, task: Task) -> u64 {
    derive_seed(seed, &[id_prefix, task.as_str()])
}

#[allow(clippy::too_many_arguments)]
fn record(
    id: String,
    task: Task,
    instruction: String,
    context: Option<&ContextDoc>,
    output: String,
    topic: &Topic,
    settings: &TaskSettings,
    provenance: GenProvenance,
) -> InstructionRecord {
    InstructionRecord {
        id,
        task,
        instruction,
        context: context.map(|c| c.body.clone()),
        output,
        topic: topic.clone(),
        language: settings.language.clone(),
        provenance: GenProvenance {
            context_source: context.map(|c| c.source.clone()),
            ..provenance
        },
        lineage: vec![LineageStep::Generated],
        flags: None,
    }
}

pub fn gen_closed_qa(
    ctx: &ContextDoc,
    gateway: &Gateway,
    settings: &TaskSettings,
    seed: u64,
    id_prefix: &str,
) -> Result<Vec<InstructionRecord>, TaskError> {
    require_body(ctx)?;
    let task = Task::ClosedQa;
    let n = settings.qa_pairs;
    let got = attempt(
        gateway,
        task,
        &ctx.topic,
        prompts::closed_qa(&ctx.body),
        settings,
        task_seed(seed, id_prefix, task),
        id_prefix,
        |raw| parse_closed_qa(raw, n),
    )?;
    Ok(got
        .value
        .into_iter()
        .enumerate()
        .map(|(i, pair)| {
            record(
                format!("{id_prefix}-{}-{i}", task.as_str()),
                task,
                pair.question,
                Some(ctx),
                pair.answer,
                &ctx.topic,
                settings,
                got.provenance.clone(),
            )
        })
        .collect())
}

pub fn gen_summarization(
    ctx: &ContextDoc,
    gateway: &Gateway,
    settings: &TaskSettings,
    seed: u64,
    id_prefix: &str,
) -> Result<InstructionRecord, TaskError> {
    require_body(ctx)?;
    let task = Task::Summarization;
    let s = task_seed(seed, id_prefix, task);
    let style =
        SUMMARY_STYLES[seeded_rng(derive_seed(s, &["style"])).gen_range(0..SUMMARY_STYLES.len())];
    let got = attempt(
        gateway,
        task,
        &ctx.topic,
        prompts::summarization(style, &ctx.topic.text, &ctx.body),
        settings,
        s,
        id_prefix,
        parse_summary,
    )?;
    Ok(record(
        format!("{id_prefix}-{}-0", task.as_str()),
        task,
        got.value.instruction,
        Some(ctx),
        got.value.summary,
        &ctx.topic,
        settings,
        GenProvenance {
            style: Some(style.to_string()),
            ..got.provenance
        },
    ))
}

pub fn gen_conversation(
    topic: &Topic,
    gateway: &Gateway,
    settings: &TaskSettings,
    seed: u64,
    id_prefix: &str,
) -> Result<InstructionRecord, TaskError> {
    if topic.text.trim().is_empty() {
        return Err(TaskError::Precondition("topic is empty".into()));
    }
    let task = Task::Conversation;
    let got = attempt(
        gateway,
        task,
        topic,
        prompts::conversation(&topic.text),
        settings,
        task_seed(seed, id_prefix, task),
        id_prefix,
        parse_conversation,
    )?;
    Ok(record(
        format!("{id_prefix}-{}-0", task.as_str()),
        task,
        got.value.input,
        None,
        got.value.output,
        topic,
        settings,
        got.provenance,
    ))
}

/// Generates and parses one question. Choices come back in generator order.
pub fn gen_multiple_choice(
    ctx: &ContextDoc,
    gateway: &Gateway,
    settings: &TaskSettings,
    seed: u64,
    id_prefix: &str,
) -> Result<(McQuestion, GenProvenance), TaskError> {
    require_body(ctx)?;
    let task = Task::MultipleChoice;
    let got = attempt(
        gateway,
        task,
        &ctx.topic,
        prompts::multiple_choice(&ctx.body),
        settings,
        task_seed(seed, id_prefix, task),
        id_prefix,
        parse_multiple_choice,
    )?;
    Ok((got.value, got.provenance))
}

pub fn mc_to_record(
    q: &McQuestion,
    ctx: &ContextDoc,
    settings: &TaskSettings,
    provenance: GenProvenance,
    id: String,
) -> Result<InstructionRecord, TaskError> {
    if q.question.trim().is_empty() {
        return Err(TaskError::Precondition("question is empty".into()));
    }
    Ok(record(
        id,
        Task::MultipleChoice,
        render_mc_instruction(q),
        Some(ctx),
        q.answer_text.clone(),
        &ctx.topic,
        settings,
        provenance,
    ))
}

/// Output of task generation over one or more contexts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub records: Vec<InstructionRecord>,
    pub failures: Vec<GenerationFailure>,
}

fn absorb<T>(
    r: Result<T, TaskError>,
    failures: &mut Vec<GenerationFailure>,
) -> Result<Option<T>, TaskError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(TaskError::Failed(f)) => {
            tracing::warn!(task = %f.task, topic = %f.topic, error = %f.error, "generation failed");
            failures.push(f);
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Runs every enabled task against one context. Malformed generations are
/// logged as failures; provider errors abort.
pub fn generate_for_context(
    ctx: &ContextDoc,
    gateway: &Gateway,
    settings: &TaskSettings,
    seed: u64,
    id_prefix: &str,
) -> Result<Generated, TaskError> {
    let mut out = Generated::default();
    for task in Task::ALL.into_iter().filter(|t| settings.tasks.contains(t)) {
        match task {
            Task::ClosedQa => {
                if let Some(rs) = absorb(
                    gen_closed_qa(ctx, gateway, settings, seed, id_prefix),
                    &mut out.failures,
                )? {
                    out.records.extend(rs);
                }
            }
            Task::Summarization => {
                if let Some(r) = absorb(
                    gen_summarization(ctx, gateway, settings, seed, id_prefix),
                    &mut out.failures,
                )? {
                    out.records.push(r);
                }
            }
            Task::Conversation => {
                if let Some(r) = absorb(
                    gen_conversation(&ctx.topic, gateway, settings, seed, id_prefix),
                    &mut out.failures,
                )? {
                    out.records.push(r);
                }
            }
            Task::MultipleChoice => {
                if let Some((q, prov)) = absorb(
                    gen_multiple_choice(ctx, gateway, settings, seed, id_prefix),
                    &mut out.failures,
                )? {
                    let mut rng = seeded_rng(derive_seed(seed, &[id_prefix, "shuffle"]));
                    let shuffled = shuffle_choices(&q, &mut rng);
                    let id = format!("{id_prefix}-{}-0", task.as_str());
                    out.records
                        .push(mc_to_record(&shuffled, ctx, settings, prov, id)?);
                }
            }
        }
    }
    Ok(out)
}

/// Generates all tasks for many contexts in parallel; output order follows
/// input order.
pub fn generate_all(
    contexts: &[(String, ContextDoc)],
    gateway: &Gateway,
    settings: &TaskSettings,
    seed: u64,
) -> Result<Generated, TaskError> {
    let parts: Vec<Generated> = contexts
        .par_iter()
        .map(|(prefix, ctx)| generate_for_context(ctx, gateway, settings, seed, prefix))
        .collect::<Result<_, _>>()?;
    let mut out = Generated::default();
    for p in parts {
        out.records.extend(p.records);
        out.failures.extend(p.failures);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::MockGenerator;
    use crate::gateway::TextGenerator;
    use crate::record::{ContextProvenance, ContextSource, TopicCategory};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::{Arc, Mutex};

    fn ctx() -> ContextDoc {
        ContextDoc {
            body: "ข้าวเหนียว มะม่วง เป็น ขนม ที่ นิยม ใน ฤดูร้อน".into(),
            source: ContextSource::Generated {
                style: "blog post".into(),
            },
            topic: Topic {
                text: "ข้าวเหนียวมะม่วง".into(),
                category: TopicCategory::Cultural,
                batch_id: 0,
            },
            provenance: ContextProvenance {
                seed_path: vec![],
                seed: 0,
                wiki_fallback: false,
                temperature: Some(0.8),
                prompt_hash: None,
            },
        }
    }

    /// Replays canned outputs in order and records the temperatures used.
    struct Scripted {
        outputs: Vec<String>,
        next: AtomicUsize,
        temps: Mutex<Vec<f64>>,
    }

    impl Scripted {
        fn new(outputs: &[&str]) -> Arc<Self> {
            Arc::new(Self {
                outputs: outputs.iter().map(|s| s.to_string()).collect(),
                next: AtomicUsize::new(0),
                temps: Mutex::new(vec![]),
            })
        }
    }

    impl TextGenerator for Scripted {
        fn id(&self) -> &str {
            "scripted"
        }
        fn is_remote(&self) -> bool {
            false
        }
        fn complete(&self, req: &GenRequest) -> Result<String, ProviderError> {
            self.temps.lock().unwrap().push(req.temperature);
            let i = self.next.fetch_add(1, Ordering::SeqCst);
            Ok(self.outputs[i.min(self.outputs.len() - 1)].clone())
        }
    }

    fn gw(g: Arc<dyn TextGenerator>) -> Gateway {
        Gateway::builder().generator(g).build().unwrap()
    }

    fn qa(n: usize) -> String {
        let items: Vec<String> = (0..n)
            .map(|i| format!("{{\"question\": \"q{i}\", \"answer\": \"a{i}\"}}"))
            .collect();
        format!("[{}]", items.join(", "))
    }

    #[test]
    fn closed_qa_yields_five_records_at_low_temperature() {
        let g = Scripted::new(&[&qa(5)]);
        let recs =
            gen_closed_qa(&ctx(), &gw(g.clone()), &TaskSettings::default(), 1, "t0").unwrap();
        assert_eq!(recs.len(), 5);
        assert!(recs
            .iter()
            .all(|r| r.context.as_deref() == Some(ctx().body.as_str())));
        assert_eq!(recs[0].provenance.temperature, Some(0.35));
        assert_eq!(*g.temps.lock().unwrap(), vec![0.35]);
    }

    #[test]
    fn short_batch_retries_once_then_fails() {
        let g = Scripted::new(&[&qa(4), &qa(4)]);
        let err =
            gen_closed_qa(&ctx(), &gw(g.clone()), &TaskSettings::default(), 1, "t0").unwrap_err();
        assert!(matches!(
            err,
            TaskError::Failed(GenerationFailure { attempts: 2, .. })
        ));
        assert_eq!(g.next.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn retry_recovers_from_one_bad_output() {
        let g = Scripted::new(&["sorry", &qa(5)]);
        assert_eq!(
            gen_closed_qa(&ctx(), &gw(g), &TaskSettings::default(), 1, "t0")
                .unwrap()
                .len(),
            5
        );
    }

    #[test]
    fn summary_style_is_uniform() {
        let mut counts = [0usize; 3];
        for s in 0..9000u64 {
            let seed = task_seed(s, "p", Task::Summarization);
            let i = seeded_rng(derive_seed(seed, &["style"])).gen_range(0..3);
            counts[i] += 1;
        }
        let p = crate::eval::stats::chi_square_uniform_p(&counts);
        assert!(p > 0.01, "{counts:?}");
    }

    #[test]
    fn conversation_has_no_context() {
        let g = Scripted::new(&["Input: q Output: a"]);
        let r = gen_conversation(
            &ctx().topic,
            &gw(g.clone()),
            &TaskSettings::default(),
            1,
            "t0",
        )
        .unwrap();
        assert_eq!((r.instruction.as_str(), r.output.as_str()), ("q", "a"));
        assert!(r.context.is_none());
        assert_eq!(*g.temps.lock().unwrap(), vec![0.8]);
    }

    #[test]
    fn mock_generation_covers_every_task() {
        let gw = Gateway::builder()
            .generator(Arc::new(MockGenerator::well_formed()))
            .build()
            .unwrap();
        let out =
            generate_for_context(&ctx(), &gw, &TaskSettings::default(), 3, "t00000-r0").unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        assert_eq!(out.records.len(), 8);
        for r in &out.records {
            r.validate().unwrap();
        }
        let mc = out
            .records
            .iter()
            .find(|r| r.task == Task::MultipleChoice)
            .unwrap();
        assert_eq!(mc.provenance.temperature, Some(0.4));
        let (_, choices) = parse_mc_instruction(&mc.instruction);
        assert_eq!(choices.len(), 4);
    }

    #[test]
    fn empty_question_is_a_precondition_violation() {
        let q = McQuestion {
            question: " ".into(),
            choices: vec!["a".into(), "b".into()],
            answer_text: "a".into(),
            correct_index: 0,
        };
        let prov = GenProvenance::external("t");
        assert!(matches!(
            mc_to_record(&q, &ctx(), &TaskSettings::default(), prov, "x".into()),
            Err(TaskError::Precondition(_))
        ));
    }
}
