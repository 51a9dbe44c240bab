//! Evaluation harness: metrics, statistical comparison and report rendering.

pub mod metrics;
pub mod report;
pub mod stats;
pub mod tokenize;

pub use metrics::{
    bert_like_from_vectors, bert_like_score, bleu, chrf, meteor, rouge_l, rouge_lsum, rouge_n,
    sentence_bleu, squad_f1, Prf, SquadOptions,
};
pub use report::{
    aggregate_report, render_tables, EvalError, EvalOptions, EvalPair, EvalTask, MetricReport,
    TestSet,
};
pub use stats::{wilcoxon_rank_sum, RankSum};
pub use tokenize::Tokenizer;
