//! Core data model shared by every stage: topics, contexts, instruction
//! records and their lineage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicCategory {
    General,
    Cultural,
}

impl fmt::Display for TopicCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopicCategory::General => "general",
            TopicCategory::Cultural => "cultural",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Topic {
    pub text: String,
    pub category: TopicCategory,
    pub batch_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ClosedQa,
    Summarization,
    Conversation,
    MultipleChoice,
}

impl Task {
    pub const ALL: [Task; 4] = [
        Task::ClosedQa,
        Task::Summarization,
        Task::Conversation,
        Task::MultipleChoice,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::ClosedQa => "closed_qa",
            Task::Summarization => "summarization",
            Task::Conversation => "conversation",
            Task::MultipleChoice => "multiple_choice",
        }
    }

    /// Whether records of this task carry a context passage.
    pub fn needs_context(self) -> bool {
        !matches!(self, Task::Conversation)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim())
            .ok_or_else(|| format!("unknown task '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContextSource {
    Wiki {
        title: String,
        page_id: u64,
        section_index: u32,
        heading: Option<String>,
    },
    Generated {
        style: String,
    },
}

/// How a context passage was obtained, with enough detail to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextProvenance {
    /// Labels fed to the seed derivation, outermost first.
    pub seed_path: Vec<String>,
    pub seed: u64,
    /// Wikipedia was drawn but yielded nothing usable.
    pub wiki_fallback: bool,
    pub temperature: Option<f64>,
    pub prompt_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextDoc {
    pub body: String,
    pub source: ContextSource,
    pub topic: Topic,
    pub provenance: ContextProvenance,
}

/// Generation metadata attached to every record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenProvenance {
    pub generator: String,
    pub temperature: Option<f64>,
    pub seed: Option<u64>,
    pub prompt_hash: Option<String>,
    pub context_source: Option<ContextSource>,
    /// Summary style for summarization records.
    pub style: Option<String>,
}

impl GenProvenance {
    pub fn external(source: &str) -> Self {
        Self {
            generator: source.to_string(),
            temperature: None,
            seed: None,
            prompt_hash: None,
            context_source: None,
            style: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum LineageStep {
    Generated,
    External { source: String },
    Dedup { threshold: f64 },
    RoundTrip { pivot: String },
    Translate { from: String, to: String },
    Paraphrase { index: u32 },
    Original,
}

impl fmt::Display for LineageStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LineageStep::Generated => write!(f, "generated"),
            LineageStep::External { source } => write!(f, "external:{source}"),
            LineageStep::Dedup { threshold } => write!(f, "dedup:{threshold}"),
            LineageStep::RoundTrip { pivot } => write!(f, "round_trip:{pivot}"),
            LineageStep::Translate { from, to } => write!(f, "translate:{from}->{to}"),
            LineageStep::Paraphrase { index } => write!(f, "paraphrase:{index}"),
            LineageStep::Original => write!(f, "original"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PropertyFlags {
    pub fluency: bool,
    pub culture: bool,
    pub diversity: bool,
}

impl fmt::Display for PropertyFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = |b: bool| if b { '+' } else { '-' };
        write!(
            f,
            "F{}C{}D{}",
            s(self.fluency),
            s(self.culture),
            s(self.diversity)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub id: String,
    pub task: Task,
    pub instruction: String,
    pub context: Option<String>,
    pub output: String,
    pub topic: Topic,
    pub language: String,
    pub provenance: GenProvenance,
    pub lineage: Vec<LineageStep>,
    pub flags: Option<PropertyFlags>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecordError {
    #[error("record {id}: {field} is empty")]
    EmptyField { id: String, field: &'static str },
    #[error("record {id}: task {task} requires a context")]
    MissingContext { id: String, task: Task },
    #[error("record {id}: conversation records carry no context")]
    UnexpectedContext { id: String },
}

impl InstructionRecord {
    /// Checks the per-task invariants.
    pub fn validate(&self) -> Result<(), RecordError> {
        let empty = |field| RecordError::EmptyField {
            id: self.id.clone(),
            field,
        };
        if self.id.trim().is_empty() {
            return Err(empty("id"));
        }
        if self.instruction.trim().is_empty() {
            return Err(empty("instruction"));
        }
        if self.output.trim().is_empty() {
            return Err(empty("output"));
        }
        match (&self.context, self.task.needs_context()) {
            (None, true) => Err(RecordError::MissingContext {
                id: self.id.clone(),
                task: self.task,
            }),
            (Some(c), true) if c.trim().is_empty() => Err(empty("context")),
            (Some(_), false) => Err(RecordError::UnexpectedContext {
                id: self.id.clone(),
            }),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(task: Task, context: Option<&str>) -> InstructionRecord {
        InstructionRecord {
            id: "r1".into(),
            task,
            instruction: "i".into(),
            context: context.map(str::to_string),
            output: "o".into(),
            topic: Topic {
                text: "t".into(),
                category: TopicCategory::General,
                batch_id: 0,
            },
            language: "th".into(),
            provenance: GenProvenance::external("test"),
            lineage: vec![LineageStep::Generated],
            flags: None,
        }
    }

    #[test]
    fn context_rules_per_task() {
        assert!(rec(Task::ClosedQa, Some("c")).validate().is_ok());
        assert!(rec(Task::ClosedQa, None).validate().is_err());
        assert!(rec(Task::Conversation, None).validate().is_ok());
        assert!(rec(Task::Conversation, Some("c")).validate().is_err());
    }

    #[test]
    fn task_names_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.as_str().parse::<Task>().unwrap(), t);
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.as_str()));
        }
    }

    #[test]
    fn flags_render_compactly() {
        let f = PropertyFlags {
            fluency: true,
            culture: false,
            diversity: true,
        };
        assert_eq!(f.to_string(), "F+C-D+");
    }
}
