//! Per-pair scoring, aggregation by task and test set, system comparisons
//! and table rendering.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{
    bert_like_score, bleu, chrf, meteor, rouge_l, rouge_lsum, rouge_n, sentence_bleu, squad_f1,
    SquadOptions,
};
use super::stats::{wilcoxon_rank_sum, PMethod};
use super::tokenize::Tokenizer;
use crate::gateway::{Gateway, ProviderError};

pub const FOOTER: &str = "BERTScore-like values use greedy token matching without idf weighting or baseline \
rescaling and are not comparable to published BERTScore numbers. Per-pair BLEU uses add-one smoothing; \
aggregate BLEU is corpus-level.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    Brainstorming,
    Classification,
    ClosedQa,
    CreativeWriting,
    OpenQa,
    MultipleChoice,
    Summarization,
}

impl EvalTask {
    pub const ALL: [EvalTask; 7] = [
        EvalTask::Brainstorming,
        EvalTask::Classification,
        EvalTask::ClosedQa,
        EvalTask::CreativeWriting,
        EvalTask::OpenQa,
        EvalTask::MultipleChoice,
        EvalTask::Summarization,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EvalTask::Brainstorming => "Brainstorming",
            EvalTask::Classification => "Classification",
            EvalTask::ClosedQa => "Closed QA",
            EvalTask::CreativeWriting => "Creative Writing",
            EvalTask::OpenQa => "Open QA",
            EvalTask::MultipleChoice => "Multiple Choice",
            EvalTask::Summarization => "Summarization",
        }
    }
}

impl fmt::Display for EvalTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EvalTask {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .to_lowercase()
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect();
        EvalTask::ALL
            .into_iter()
            .find(|t| t.label().to_lowercase().replace(' ', "") == key)
            .ok_or_else(|| format!("unknown evaluation task '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSet {
    Culture,
    General,
}

impl TestSet {
    pub const ALL: [TestSet; 2] = [TestSet::Culture, TestSet::General];

    pub fn label(self) -> &'static str {
        match self {
            TestSet::Culture => "Thai Culture Test Set",
            TestSet::General => "General Test Set",
        }
    }
}

impl fmt::Display for TestSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestSet::Culture => "culture",
            TestSet::General => "general",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub id: String,
    pub task: EvalTask,
    pub test_set: TestSet,
    pub prediction: String,
    pub reference: String,
}

/// One line of a reference file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub id: String,
    pub task: EvalTask,
    pub test_set: TestSet,
    pub reference: String,
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub prediction: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemPredictions {
    pub name: String,
    pub predictions: Vec<PredictionRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    BertScore,
    Bleu,
    Chrf,
    Meteor,
    Rouge1,
    Rouge2,
    RougeL,
    RougeLsum,
    SquadF1,
}

impl Metric {
    /// Table row order.
    pub const ALL: [Metric; 9] = [
        Metric::BertScore,
        Metric::Bleu,
        Metric::Chrf,
        Metric::Meteor,
        Metric::Rouge1,
        Metric::Rouge2,
        Metric::RougeL,
        Metric::RougeLsum,
        Metric::SquadF1,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Metric::BertScore => "BERTScore",
            Metric::Bleu => "BLEU",
            Metric::Chrf => "ChrF",
            Metric::Meteor => "METEOR",
            Metric::Rouge1 => "ROUGE-1",
            Metric::Rouge2 => "ROUGE-2",
            Metric::RougeL => "ROUGE-L",
            Metric::RougeLsum => "ROUGE-Lsum",
            Metric::SquadF1 => "SQuAD F1",
        }
    }

    /// Inclusive upper bound of the per-pair value (chrF is already a percentage).
    pub fn max(self) -> f64 {
        if self == Metric::Chrf {
            100.0
        } else {
            1.0
        }
    }

    /// Factor applied when rendering tables in percent.
    pub fn display_scale(self) -> f64 {
        100.0 / self.max()
    }
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_lowercase().replace(['-', '_', ' '], "");
        Metric::ALL
            .into_iter()
            .find(|m| m.label().to_lowercase().replace(['-', ' '], "") == key)
            .ok_or_else(|| format!("unknown metric '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub tokenizer: String,
    pub squad: SquadOptions,
    pub bleu_max_n: usize,
    /// Column used for the pairwise rank-sum comparisons.
    pub comparison_metric: Metric,
    pub bert_score: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            tokenizer: "unicode_words".into(),
            squad: SquadOptions::default(),
            bleu_max_n: 4,
            comparison_metric: Metric::BertScore,
            bert_score: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no reference pairs")]
    Empty,
    #[error("no systems to evaluate")]
    NoSystems,
    #[error("duplicate id '{id}' in {source_name}")]
    DuplicateId { source_name: String, id: String },
    #[error("system '{system}' is not aligned with the references: {detail}")]
    Alignment { system: String, detail: String },
    #[error("{0}")]
    Tokenizer(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub id: String,
    pub task: EvalTask,
    pub test_set: TestSet,
    pub scores: BTreeMap<Metric, f64>,
    /// Prediction length in tokens.
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub metric: Metric,
    /// `None` means all tasks.
    pub task: Option<EvalTask>,
    /// `None` means both test sets.
    pub test_set: Option<TestSet>,
    pub value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthGroup {
    pub task: Option<EvalTask>,
    pub test_set: Option<TestSet>,
    pub mean: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub per_pair: Vec<usize>,
    pub groups: Vec<LengthGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub name: String,
    pub per_pair: Vec<PairScores>,
    pub aggregates: Vec<Aggregate>,
    pub lengths: LengthStats,
}

impl SystemReport {
    pub fn aggregate(
        &self,
        metric: Metric,
        task: Option<EvalTask>,
        test_set: Option<TestSet>,
    ) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|a| a.metric == metric && a.task == task && a.test_set == test_set)
            .map(|a| a.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub system_a: String,
    pub system_b: String,
    /// Metric name, or "length" for generation lengths.
    pub column: String,
    pub task: Option<EvalTask>,
    pub test_set: Option<TestSet>,
    pub w: Option<f64>,
    pub p: Option<f64>,
    pub method: Option<PMethod>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tokenizer: String,
    pub options: EvalOptions,
    pub systems: Vec<SystemReport>,
    pub comparisons: Vec<Comparison>,
    pub missing_tasks: Vec<EvalTask>,
    pub skipped_metrics: Vec<String>,
    pub footer: String,
}

/// Joins references with predictions by id. Every reference needs exactly
/// one prediction and vice versa.
pub fn align(
    refs: &[ReferenceRow],
    system: &SystemPredictions,
) -> Result<Vec<EvalPair>, EvalError> {
    let mut by_id: HashMap<&str, &str> = HashMap::new();
    for p in &system.predictions {
        if by_id.insert(&p.id, &p.prediction).is_some() {
            return Err(EvalError::DuplicateId {
                source_name: system.name.clone(),
                id: p.id.clone(),
            });
        }
    }
    let mut pairs = Vec::with_capacity(refs.len());
    for r in refs {
        let pred = by_id
            .remove(r.id.as_str())
            .ok_or_else(|| EvalError::Alignment {
                system: system.name.clone(),
                detail: format!("missing prediction for id '{}'", r.id),
            })?;
        pairs.push(EvalPair {
            id: r.id.clone(),
            task: r.task,
            test_set: r.test_set,
            prediction: pred.to_string(),
            reference: r.reference.clone(),
        });
    }
    if let Some(extra) = by_id.keys().min() {
        return Err(EvalError::Alignment {
            system: system.name.clone(),
            detail: format!("prediction id '{extra}' has no reference"),
        });
    }
    Ok(pairs)
}

/// Scores one pair on every metric. BERTScore-like is included only when a
/// gateway is given.
pub fn score_pair(
    pair: &EvalPair,
    tokenizer: &Tokenizer,
    opts: &EvalOptions,
    gateway: Option<&Gateway>,
) -> Result<PairScores, ProviderError> {
    let p = tokenizer.tokenize(&pair.prediction);
    let r = tokenizer.tokenize(&pair.reference);
    let mut scores = BTreeMap::new();
    scores.insert(Metric::Bleu, sentence_bleu(&p, &r, opts.bleu_max_n));
    scores.insert(
        Metric::Chrf,
        chrf(&pair.prediction, &pair.reference, 6, 2.0),
    );
    scores.insert(Metric::Meteor, meteor(&p, &r));
    scores.insert(Metric::Rouge1, rouge_n(&p, &r, 1).f1);
    scores.insert(Metric::Rouge2, rouge_n(&p, &r, 2).f1);
    scores.insert(Metric::RougeL, rouge_l(&p, &r).f1);
    scores.insert(
        Metric::RougeLsum,
        rouge_lsum(&pair.prediction, &pair.reference, tokenizer).f1,
    );
    scores.insert(
        Metric::SquadF1,
        squad_f1(&pair.prediction, &pair.reference, tokenizer, opts.squad),
    );
    if let Some(gw) = gateway {
        scores.insert(
            Metric::BertScore,
            bert_like_score(&pair.prediction, &pair.reference, tokenizer, gw)?.f1,
        );
    }
    Ok(PairScores {
        id: pair.id.clone(),
        task: pair.task,
        test_set: pair.test_set,
        scores,
        length: p.len(),
    })
}

type GroupKey = (Option<EvalTask>, Option<TestSet>);

/// Every (task, test set) group present, the per-task and per-set
/// marginals, and the overall group, each with member indices.
fn groups(keys: &[(EvalTask, TestSet)]) -> Vec<(GroupKey, Vec<usize>)> {
    let mut map: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (i, &(t, s)) in keys.iter().enumerate() {
        for key in [
            (Some(t), Some(s)),
            (Some(t), None),
            (None, Some(s)),
            (None, None),
        ] {
            map.entry(key).or_default().push(i);
        }
    }
    map.into_iter().collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> (f64, usize) {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (if n == 0 { 0.0 } else { s / n as f64 }, n)
}

/// Prediction token counts per pair with means per group.
pub fn generation_lengths(pairs: &[EvalPair], tokenizer: &Tokenizer) -> LengthStats {
    let per_pair: Vec<usize> = pairs
        .iter()
        .map(|p| tokenizer.tokenize(&p.prediction).len())
        .collect();
    let keys: Vec<_> = pairs.iter().map(|p| (p.task, p.test_set)).collect();
    length_stats(per_pair, &keys)
}

fn length_stats(per_pair: Vec<usize>, keys: &[(EvalTask, TestSet)]) -> LengthStats {
    let groups = groups(keys)
        .into_iter()
        .map(|((task, test_set), idx)| {
            let (m, n) = mean(idx.iter().map(|&i| per_pair[i] as f64));
            LengthGroup {
                task,
                test_set,
                mean: m,
                n,
            }
        })
        .collect();
    LengthStats { per_pair, groups }
}

/// Arithmetic means per group; BLEU aggregates are corpus-level instead.
fn aggregates(
    per_pair: &[PairScores],
    pairs: &[EvalPair],
    tokenizer: &Tokenizer,
    opts: &EvalOptions,
) -> Vec<Aggregate> {
    let keys: Vec<_> = per_pair.iter().map(|p| (p.task, p.test_set)).collect();
    let tokens: Vec<(Vec<String>, Vec<String>)> = pairs
        .iter()
        .map(|p| {
            (
                tokenizer.tokenize(&p.prediction),
                tokenizer.tokenize(&p.reference),
            )
        })
        .collect();
    let mut out = Vec::new();
    for ((task, test_set), idx) in groups(&keys) {
        for metric in Metric::ALL {
            if !per_pair[0].scores.contains_key(&metric) {
                continue;
            }
            let value = if metric == Metric::Bleu {
                let corpus: Vec<_> = idx.iter().map(|&i| tokens[i].clone()).collect();
                bleu(&corpus, opts.bleu_max_n)
            } else {
                mean(idx.iter().map(|&i| per_pair[i].scores[&metric])).0
            };
            out.push(Aggregate {
                metric,
                task,
                test_set,
                value,
                n: idx.len(),
            });
        }
    }
    out
}

fn compare(a: &[f64], b: &[f64]) -> (Option<f64>, Option<f64>, Option<PMethod>, Option<String>) {
    match wilcoxon_rank_sum(a, b) {
        Ok(r) => (Some(r.w), Some(r.p), Some(r.method), None),
        Err(e) => (None, None, None, Some(e.to_string())),
    }
}

/// Scores every system against the references and runs pairwise rank-sum
/// tests per (task, test set) on the comparison metric and on lengths.
pub fn aggregate_report(
    refs: &[ReferenceRow],
    systems: &[SystemPredictions],
    gateway: Option<&Gateway>,
    opts: &EvalOptions,
) -> Result<MetricReport, EvalError> {
    if refs.is_empty() {
        return Err(EvalError::Empty);
    }
    if systems.is_empty() {
        return Err(EvalError::NoSystems);
    }
    let mut seen = HashSet::new();
    for r in refs {
        if !seen.insert(r.id.as_str()) {
            return Err(EvalError::DuplicateId {
                source_name: "references".into(),
                id: r.id.clone(),
            });
        }
    }
    let tokenizer: Tokenizer = opts.tokenizer.parse().map_err(EvalError::Tokenizer)?;
    let mut skipped = Vec::new();
    let mut gateway = if opts.bert_score { gateway } else { None };
    if opts.bert_score && gateway.is_none() {
        skipped.push(format!(
            "{}: no embedding provider configured",
            Metric::BertScore.label()
        ));
    }
    if let Some(gw) = gateway {
        if let Err(e) = gw.embed_tokens(&["probe".to_string()]) {
            if matches!(e, ProviderError::Capability(_)) {
                skipped.push(format!("{}: {e}", Metric::BertScore.label()));
                gateway = None;
            } else {
                return Err(e.into());
            }
        }
    }

    let mut reports = Vec::new();
    for sys in systems {
        let pairs = align(refs, sys)?;
        let per_pair = pairs
            .par_iter()
            .map(|p| score_pair(p, &tokenizer, opts, gateway))
            .collect::<Result<Vec<_>, _>>()?;
        let aggregates = aggregates(&per_pair, &pairs, &tokenizer, opts);
        let keys: Vec<_> = pairs.iter().map(|p| (p.task, p.test_set)).collect();
        let lengths = length_stats(per_pair.iter().map(|p| p.length).collect(), &keys);
        reports.push(SystemReport {
            name: sys.name.clone(),
            per_pair,
            aggregates,
            lengths,
        });
    }

    let column = opts.comparison_metric;
    let has_column = reports[0].per_pair[0].scores.contains_key(&column);
    if !has_column {
        skipped.push(format!(
            "comparisons on {}: metric not computed",
            column.label()
        ));
    }
    let keys: Vec<_> = refs.iter().map(|r| (r.task, r.test_set)).collect();
    let cells: Vec<_> = groups(&keys)
        .into_iter()
        .filter(|((t, s), _)| t.is_some() && s.is_some() || t.is_none() && s.is_none())
        .collect();
    let mut comparisons = Vec::new();
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            let (a, b) = (&reports[i], &reports[j]);
            for ((task, test_set), idx) in &cells {
                let mut push = |name: String, xa: Vec<f64>, xb: Vec<f64>| {
                    let (w, p, method, note) = compare(&xa, &xb);
                    comparisons.push(Comparison {
                        system_a: a.name.clone(),
                        system_b: b.name.clone(),
                        column: name,
                        task: *task,
                        test_set: *test_set,
                        w,
                        p,
                        method,
                        note,
                    });
                };
                if has_column {
                    let pick = |r: &SystemReport| {
                        idx.iter().map(|&k| r.per_pair[k].scores[&column]).collect()
                    };
                    push(column.label().to_string(), pick(a), pick(b));
                }
                let len =
                    |r: &SystemReport| idx.iter().map(|&k| r.per_pair[k].length as f64).collect();
                push("length".into(), len(a), len(b));
            }
        }
    }

    let present: BTreeSet<EvalTask> = refs.iter().map(|r| r.task).collect();
    Ok(MetricReport {
        tokenizer: tokenizer.name(),
        options: opts.clone(),
        systems: reports,
        comparisons,
        missing_tasks: EvalTask::ALL
            .into_iter()
            .filter(|t| !present.contains(t))
            .collect(),
        skipped_metrics: skipped,
        footer: FOOTER.into(),
    })
}

fn table(out: &mut String, report: &MetricReport, task: Option<EvalTask>, test_set: TestSet) {
    let metrics: Vec<Metric> = Metric::ALL
        .into_iter()
        .filter(|m| {
            report
                .systems
                .iter()
                .any(|s| s.aggregate(*m, task, Some(test_set)).is_some())
        })
        .collect();
    if metrics.is_empty() {
        return;
    }
    let scope = task.map_or("all tasks".to_string(), |t| t.label().to_string());
    let _ = writeln!(out, "{} ({scope})", test_set.label());
    let first = Metric::ALL
        .iter()
        .map(|m| m.label().len())
        .max()
        .unwrap_or(6)
        .max(6);
    let widths: Vec<usize> = report
        .systems
        .iter()
        .map(|s| s.name.chars().count().max(7))
        .collect();
    let _ = write!(out, "{:<first$}", "Metric");
    for (s, w) in report.systems.iter().zip(&widths) {
        let _ = write!(out, "  {:>w$}", s.name);
    }
    out.push('\n');
    let total = first + widths.iter().map(|w| w + 2).sum::<usize>();
    let _ = writeln!(out, "{}", "-".repeat(total));
    for m in metrics {
        let _ = write!(out, "{:<first$}", m.label());
        for (s, w) in report.systems.iter().zip(&widths) {
            match s.aggregate(m, task, Some(test_set)) {
                Some(v) => {
                    let _ = write!(out, "  {:>w$.2}", v * m.display_scale());
                }
                None => {
                    let _ = write!(out, "  {:>w$}", "-");
                }
            }
        }
        out.push('\n');
    }
    out.push('\n');
}

/// Renders the report as plain-text tables: metrics as rows, systems as
/// columns, one table per test set for the all-task averages and then one
/// per task.
pub fn render_tables(report: &MetricReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Tokenizer: {}", report.tokenizer);
    if !report.missing_tasks.is_empty() {
        let names: Vec<&str> = report.missing_tasks.iter().map(|t| t.label()).collect();
        let _ = writeln!(out, "Tasks absent from the input: {}", names.join(", "));
    }
    for s in &report.skipped_metrics {
        let _ = writeln!(out, "Skipped: {s}");
    }
    out.push('\n');
    for ts in TestSet::ALL {
        table(&mut out, report, None, ts);
    }
    for task in EvalTask::ALL {
        for ts in TestSet::ALL {
            table(&mut out, report, Some(task), ts);
        }
    }
    if !report.comparisons.is_empty() {
        let _ = writeln!(out, "Wilcoxon rank-sum comparisons");
        for c in &report.comparisons {
            let scope = match (c.task, c.test_set) {
                (Some(t), Some(s)) => format!("{t} / {s}"),
                _ => "all".to_string(),
            };
            let result = match (c.w, c.p) {
                (Some(w), Some(p)) => format!("W = {w:.3}, p = {p:.5}"),
                _ => c.note.clone().unwrap_or_default(),
            };
            let _ = writeln!(
                out,
                "{} vs {} [{}] {}: {}",
                c.system_a, c.system_b, c.column, scope, result
            );
        }
        out.push('\n');
    }
    out.push_str(&report.footer);
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(id: &str, task: EvalTask, ts: TestSet, reference: &str) -> ReferenceRow {
        ReferenceRow {
            id: id.into(),
            task,
            test_set: ts,
            reference: reference.into(),
        }
    }

    fn sys(name: &str, preds: &[(&str, &str)]) -> SystemPredictions {
        SystemPredictions {
            name: name.into(),
            predictions: preds
                .iter()
                .map(|(i, p)| PredictionRow {
                    id: i.to_string(),
                    prediction: p.to_string(),
                })
                .collect(),
        }
    }

    fn opts() -> EvalOptions {
        EvalOptions {
            tokenizer: "whitespace".into(),
            ..EvalOptions::default()
        }
    }

    #[test]
    fn names_parse() {
        assert_eq!("closed_qa".parse::<EvalTask>().unwrap(), EvalTask::ClosedQa);
        assert_eq!(
            "Creative Writing".parse::<EvalTask>().unwrap(),
            EvalTask::CreativeWriting
        );
        assert_eq!("rouge_lsum".parse::<Metric>().unwrap(), Metric::RougeLsum);
        assert_eq!("SQuAD F1".parse::<Metric>().unwrap(), Metric::SquadF1);
    }

    #[test]
    fn single_pair_aggregate_equals_pair_value() {
        let refs = [r("1", EvalTask::OpenQa, TestSet::General, "a b c")];
        let rep = aggregate_report(
            &refs,
            &[sys("s", &[("1", "a b d")])],
            Some(&Gateway::mock()),
            &opts(),
        )
        .unwrap();
        let s = &rep.systems[0];
        for m in Metric::ALL {
            if m == Metric::Bleu {
                continue;
            }
            let v = s.per_pair[0].scores[&m];
            assert_eq!(s.aggregate(m, None, None), Some(v), "{m:?}");
            assert_eq!(
                s.aggregate(m, Some(EvalTask::OpenQa), Some(TestSet::General)),
                Some(v)
            );
        }
        assert_eq!(rep.missing_tasks.len(), 6);
        assert!(render_tables(&rep).contains("Tasks absent from the input"));
    }

    #[test]
    fn per_task_means_use_their_own_partition() {
        // 8 pairs: 2 tasks x 2 sets x 2 items; ROUGE-1 F1 is 1 or 0 per pair
        let mut refs = Vec::new();
        let mut a = Vec::new();
        let mut b = Vec::new();
        let cells = [
            (EvalTask::ClosedQa, TestSet::Culture, [1, 1], [0, 0]),
            (EvalTask::ClosedQa, TestSet::General, [1, 0], [1, 1]),
            (EvalTask::Summarization, TestSet::Culture, [0, 0], [1, 0]),
            (EvalTask::Summarization, TestSet::General, [1, 1], [1, 1]),
        ];
        for (c, (task, ts, xa, xb)) in cells.iter().enumerate() {
            for k in 0..2 {
                let id = format!("{c}-{k}");
                refs.push(r(&id, *task, *ts, "x"));
                a.push((id.clone(), if xa[k] == 1 { "x" } else { "y" }));
                b.push((id, if xb[k] == 1 { "x" } else { "y" }));
            }
        }
        let a: Vec<(&str, &str)> = a.iter().map(|(i, p)| (i.as_str(), *p)).collect();
        let b: Vec<(&str, &str)> = b.iter().map(|(i, p)| (i.as_str(), *p)).collect();
        let rep = aggregate_report(&refs, &[sys("a", &a), sys("b", &b)], None, &opts()).unwrap();
        let (sa, sb) = (&rep.systems[0], &rep.systems[1]);
        let g = |s: &SystemReport, t, ts| s.aggregate(Metric::Rouge1, t, ts).unwrap();
        assert_eq!(g(sa, Some(EvalTask::ClosedQa), Some(TestSet::Culture)), 1.0);
        assert_eq!(g(sa, Some(EvalTask::ClosedQa), Some(TestSet::General)), 0.5);
        assert_eq!(
            g(sa, Some(EvalTask::Summarization), Some(TestSet::Culture)),
            0.0
        );
        assert_eq!(g(sa, Some(EvalTask::ClosedQa), None), 0.75);
        assert_eq!(g(sa, None, None), 5.0 / 8.0);
        assert_eq!(g(sb, Some(EvalTask::ClosedQa), Some(TestSet::Culture)), 0.0);
        assert_eq!(g(sb, None, Some(TestSet::General)), 1.0);
        assert_eq!(g(sb, None, None), 5.0 / 8.0);
        assert!(rep.skipped_metrics.iter().any(|s| s.contains("BERTScore")));
        // four cells plus overall, on length only
        assert_eq!(rep.comparisons.len(), 5);
    }

    #[test]
    fn misaligned_ids_are_rejected() {
        let refs = [r("1", EvalTask::OpenQa, TestSet::General, "a")];
        assert!(matches!(
            aggregate_report(&refs, &[sys("s", &[("2", "a")])], None, &opts()),
            Err(EvalError::Alignment { .. })
        ));
        assert!(matches!(
            aggregate_report(&refs, &[sys("s", &[("1", "a"), ("2", "b")])], None, &opts()),
            Err(EvalError::Alignment { .. })
        ));
        assert!(matches!(
            aggregate_report(&refs, &[sys("s", &[("1", "a"), ("1", "b")])], None, &opts()),
            Err(EvalError::DuplicateId { .. })
        ));
    }

    #[test]
    fn lengths_and_length_comparison() {
        let pairs = [
            EvalPair {
                id: "1".into(),
                task: EvalTask::Brainstorming,
                test_set: TestSet::Culture,
                prediction: "".into(),
                reference: "x".into(),
            },
            EvalPair {
                id: "2".into(),
                task: EvalTask::Brainstorming,
                test_set: TestSet::Culture,
                prediction: "one two three four five".into(),
                reference: "x".into(),
            },
        ];
        let l = generation_lengths(&pairs, &Tokenizer::Whitespace);
        assert_eq!(l.per_pair, vec![0, 5]);
        assert!(l
            .groups
            .iter()
            .any(|g| g.task.is_none() && g.test_set.is_none() && g.mean == 2.5));

        let refs: Vec<ReferenceRow> = (0..10)
            .map(|i| {
                r(
                    &i.to_string(),
                    EvalTask::Brainstorming,
                    TestSet::General,
                    "ก ข ค",
                )
            })
            .collect();
        let short: Vec<(String, String)> = (0..10)
            .map(|i| (i.to_string(), "ก ข".to_string()))
            .collect();
        let long: Vec<(String, String)> = (0..10)
            .map(|i| (i.to_string(), "ก ข ค ง จ ".repeat(i % 3 + 1)))
            .collect();
        let as_ref = |v: &[(String, String)]| {
            v.iter()
                .map(|(a, b)| (a.clone(), b.clone()))
                .collect::<Vec<_>>()
        };
        let mk = |n: &str, v: Vec<(String, String)>| SystemPredictions {
            name: n.into(),
            predictions: v
                .into_iter()
                .map(|(id, prediction)| PredictionRow { id, prediction })
                .collect(),
        };
        let rep = aggregate_report(
            &refs,
            &[mk("short", as_ref(&short)), mk("long", as_ref(&long))],
            Some(&Gateway::mock()),
            &opts(),
        )
        .unwrap();
        let len = rep
            .comparisons
            .iter()
            .find(|c| c.column == "length" && c.task.is_none())
            .unwrap();
        assert!(len.w.unwrap() < 0.0);
        assert!(len.p.unwrap() < 0.01);
        let text = render_tables(&rep);
        assert!(text.contains("BERTScore"));
        assert!(text.contains(FOOTER));
    }
}
