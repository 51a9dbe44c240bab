//! Reference-based text metrics: ROUGE, BLEU, chrF, METEOR, SQuAD F1 and a
//! BERTScore-style greedy embedding match.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::tokenize::Tokenizer;
use crate::diversity::cosine_values;
use crate::gateway::{EmbeddingVector, Gateway, ProviderError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub const ZERO: Prf = Prf {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts
            .entry(w.iter().map(AsRef::as_ref).collect())
            .or_insert(0) += 1;
    }
    counts
}

/// Clipped overlap and the n-gram totals of each side.
fn overlap<T: AsRef<str>>(pred: &[T], reference: &[T], n: usize) -> (usize, usize, usize) {
    let p = ngram_counts(pred, n);
    let r = ngram_counts(reference, n);
    let hits = p
        .iter()
        .map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (hits, p.values().sum(), r.values().sum())
}

pub fn rouge_n<T: AsRef<str>>(pred: &[T], reference: &[T], n: usize) -> Prf {
    let (hits, np, nr) = overlap(pred, reference, n);
    if np == 0 || nr == 0 {
        return Prf::ZERO;
    }
    Prf::new(hits as f64 / np as f64, hits as f64 / nr as f64)
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: AsRef<str>>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: AsRef<str>>(pred: &[T], reference: &[T]) -> Prf {
    if pred.is_empty() || reference.is_empty() {
        return Prf::ZERO;
    }
    let l = lcs_len(pred, reference) as f64;
    Prf::new(l / pred.len() as f64, l / reference.len() as f64)
}

/// Indices into `reference` of one longest common subsequence with `pred`.
fn lcs_ref_indices(reference: &[String], pred: &[String]) -> Vec<usize> {
    let (n, m) = (reference.len(), pred.len());
    let mut t = vec![vec![0usize; m + 1]; n + 1];
    for i in 0..n {
        for j in 0..m {
            t[i + 1][j + 1] = if reference[i] == pred[j] {
                t[i][j] + 1
            } else {
                t[i][j + 1].max(t[i + 1][j])
            };
        }
    }
    let (mut i, mut j) = (n, m);
    let mut out = Vec::new();
    while i > 0 && j > 0 {
        if reference[i - 1] == pred[j - 1] {
            out.push(i - 1);
            i -= 1;
            j -= 1;
        } else if t[i - 1][j] >= t[i][j - 1] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    out.reverse();
    out
}

/// Summary-level ROUGE-L: texts are split on newlines and each reference
/// sentence is scored by the union of its LCS hits against every predicted
/// sentence. Hits are clipped by token counts so nothing is counted twice.
pub fn rouge_lsum(pred: &str, reference: &str, tokenizer: &Tokenizer) -> Prf {
    let split = |t: &str| -> Vec<Vec<String>> {
        t.split('\n')
            .map(|s| tokenizer.tokenize(s))
            .filter(|s| !s.is_empty())
            .collect()
    };
    let ps = split(pred);
    let rs = split(reference);
    let np: usize = ps.iter().map(Vec::len).sum();
    let nr: usize = rs.iter().map(Vec::len).sum();
    if np == 0 || nr == 0 {
        return Prf::ZERO;
    }
    let mut pred_left: HashMap<&str, usize> = HashMap::new();
    for t in ps.iter().flatten() {
        *pred_left.entry(t).or_insert(0) += 1;
    }
    let mut ref_left: HashMap<&str, usize> = HashMap::new();
    for t in rs.iter().flatten() {
        *ref_left.entry(t).or_insert(0) += 1;
    }
    let mut hits = 0usize;
    for r in &rs {
        let mut union: Vec<usize> = ps.iter().flat_map(|p| lcs_ref_indices(r, p)).collect();
        union.sort_unstable();
        union.dedup();
        for i in union {
            let tok = r[i].as_str();
            let (Some(pl), Some(rl)) = (pred_left.get(tok).copied(), ref_left.get(tok).copied())
            else {
                continue;
            };
            if pl > 0 && rl > 0 {
                hits += 1;
                pred_left.insert(tok, pl - 1);
                ref_left.insert(tok, rl - 1);
            }
        }
    }
    Prf::new(hits as f64 / np as f64, hits as f64 / nr as f64)
}

/// Corpus-level BLEU without smoothing.
pub fn bleu<T: AsRef<str>>(corpus: &[(Vec<T>, Vec<T>)], max_n: usize) -> f64 {
    if corpus.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (mut hits, mut total) = (0usize, 0usize);
        for (p, r) in corpus {
            let (h, np, _) = overlap(p, r, n);
            hits += h;
            total += np;
        }
        if hits == 0 || total == 0 {
            return 0.0;
        }
        log_sum += (hits as f64 / total as f64).ln();
    }
    let c: usize = corpus.iter().map(|(p, _)| p.len()).sum();
    let r: usize = corpus.iter().map(|(_, r)| r.len()).sum();
    let bp = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    (bp * (log_sum / max_n as f64).exp()).clamp(0.0, 1.0)
}

/// Sentence-level BLEU with add-one smoothing on orders above one.
pub fn sentence_bleu<T: AsRef<str>>(pred: &[T], reference: &[T], max_n: usize) -> f64 {
    if pred.is_empty() || reference.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (hits, total, _) = overlap(pred, reference, n);
        let p = if n == 1 {
            if hits == 0 {
                return 0.0;
            }
            hits as f64 / total as f64
        } else {
            (hits as f64 + 1.0) / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let (c, r) = (pred.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    (bp * (log_sum / max_n as f64).exp()).clamp(0.0, 1.0)
}

/// Character n-gram F-score on a 0 to 100 scale. Whitespace is removed
/// first; precision and recall are averaged over the orders that exist on
/// both sides.
pub fn chrf(pred: &str, reference: &str, max_n: usize, beta: f64) -> f64 {
    let p: Vec<String> = pred
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(String::from)
        .collect();
    let r: Vec<String> = reference
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(String::from)
        .collect();
    if p.is_empty() && r.is_empty() {
        return 100.0;
    }
    if p.is_empty() || r.is_empty() {
        return 0.0;
    }
    let (mut sp, mut sr, mut orders) = (0.0, 0.0, 0usize);
    for n in 1..=max_n {
        let (hits, np, nr) = overlap(&p, &r, n);
        if np == 0 || nr == 0 {
            continue;
        }
        sp += hits as f64 / np as f64;
        sr += hits as f64 / nr as f64;
        orders += 1;
    }
    let (ap, ar) = (sp / orders as f64, sr / orders as f64);
    if ap + ar == 0.0 {
        return 0.0;
    }
    let b2 = beta * beta;
    (100.0 * (1.0 + b2) * ap * ar / (b2 * ap + ar)).clamp(0.0, 100.0)
}

pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_BETA: f64 = 3.0;
pub const METEOR_GAMMA: f64 = 0.5;

/// Exact-match unigram alignment. Matches as many tokens as possible,
/// taking the longest contiguous runs first to keep the chunk count low
/// (finding the true minimum is NP-hard). Returns (pred, ref) index pairs
/// sorted by prediction index.
pub fn meteor_alignment<T: AsRef<str>>(pred: &[T], reference: &[T]) -> Vec<(usize, usize)> {
    let mut pu = vec![false; pred.len()];
    let mut ru = vec![false; reference.len()];
    let mut pairs = Vec::new();
    loop {
        let mut best: Option<(usize, usize, usize)> = None;
        for i in 0..pred.len() {
            if pu[i] {
                continue;
            }
            for j in 0..reference.len() {
                if ru[j] || pred[i].as_ref() != reference[j].as_ref() {
                    continue;
                }
                let mut len = 1;
                while i + len < pred.len()
                    && j + len < reference.len()
                    && !pu[i + len]
                    && !ru[j + len]
                    && pred[i + len].as_ref() == reference[j + len].as_ref()
                {
                    len += 1;
                }
                if best.is_none_or(|(_, _, l)| len > l) {
                    best = Some((i, j, len));
                }
            }
        }
        let Some((i, j, len)) = best else { break };
        for k in 0..len {
            pu[i + k] = true;
            ru[j + k] = true;
            pairs.push((i + k, j + k));
        }
    }
    pairs.sort_unstable();
    pairs
}

pub fn meteor<T: AsRef<str>>(pred: &[T], reference: &[T]) -> f64 {
    let align = meteor_alignment(pred, reference);
    let m = align.len();
    if m == 0 {
        return 0.0;
    }
    let chunks = 1 + align
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count();
    let p = m as f64 / pred.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = METEOR_GAMMA * (chunks as f64 / m as f64).powf(METEOR_BETA);
    (fmean * (1.0 - penalty)).clamp(0.0, 1.0)
}

/// Closed-form METEOR of a non-empty sequence against itself.
pub fn meteor_identity(m: usize) -> f64 {
    1.0 - METEOR_GAMMA * (1.0 / m as f64).powf(METEOR_BETA)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SquadOptions {
    /// Drop the English articles a, an and the. Off by default because the
    /// harness targets languages without articles and single ASCII letters
    /// are common tokens there.
    pub remove_articles: bool,
}

/// Case-folds, strips punctuation and collapses whitespace.
pub fn squad_normalize(text: &str, opts: SquadOptions) -> String {
    static PUNCT: OnceLock<Regex> = OnceLock::new();
    let punct = PUNCT.get_or_init(|| Regex::new(r"[\p{P}\p{S}]").expect("valid regex"));
    let lowered = text.to_lowercase();
    let stripped = punct.replace_all(&lowered, "");
    stripped
        .split_whitespace()
        .filter(|w| !(opts.remove_articles && matches!(*w, "a" | "an" | "the")))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Bag-of-tokens F1 after normalization. Two empty texts score 1.
pub fn squad_f1(pred: &str, reference: &str, tokenizer: &Tokenizer, opts: SquadOptions) -> f64 {
    let p = tokenizer.tokenize(&squad_normalize(pred, opts));
    let r = tokenizer.tokenize(&squad_normalize(reference, opts));
    if p.is_empty() && r.is_empty() {
        return 1.0;
    }
    if p.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut rc: HashMap<&str, usize> = HashMap::new();
    for t in &r {
        *rc.entry(t).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for t in &p {
        if let Some(c) = rc.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    Prf::new(
        common as f64 / p.len() as f64,
        common as f64 / r.len() as f64,
    )
    .f1
}

/// Greedy max-cosine matching between token vectors, cosines clipped at 0.
/// Two empty sides score 1; one empty side scores 0.
pub fn bert_like_from_vectors(pred: &[EmbeddingVector], reference: &[EmbeddingVector]) -> Prf {
    if pred.is_empty() && reference.is_empty() {
        return Prf::new(1.0, 1.0);
    }
    if pred.is_empty() || reference.is_empty() {
        return Prf::ZERO;
    }
    let sim: Vec<Vec<f64>> = pred
        .iter()
        .map(|p| {
            reference
                .iter()
                .map(|r| {
                    cosine_values(p.values(), r.values())
                        .unwrap_or(0.0)
                        .max(0.0)
                })
                .collect()
        })
        .collect();
    let precision = sim
        .iter()
        .map(|row| row.iter().copied().fold(0.0, f64::max))
        .sum::<f64>()
        / pred.len() as f64;
    let recall = (0..reference.len())
        .map(|j| sim.iter().map(|row| row[j]).fold(0.0, f64::max))
        .sum::<f64>()
        / reference.len() as f64;
    let clamp = |x: f64| x.clamp(0.0, 1.0);
    Prf::new(clamp(precision), clamp(recall))
}

/// BERTScore-style similarity using the gateway's token-level embeddings.
/// No idf weighting and no baseline rescaling.
pub fn bert_like_score(
    pred: &str,
    reference: &str,
    tokenizer: &Tokenizer,
    gateway: &Gateway,
) -> Result<Prf, ProviderError> {
    let pv = gateway.embed_tokens(&tokenizer.tokenize(pred))?;
    let rv = gateway.embed_tokens(&tokenizer.tokenize(reference))?;
    Ok(bert_like_from_vectors(&pv, &rv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn rouge_one_unigram_overlap() {
        let s = rouge_n(&t("a b c"), &t("a b d"), 1);
        assert_eq!(s.precision, 2.0 / 3.0);
        assert_eq!(s.recall, 2.0 / 3.0);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rouge_n(&t("a"), &t("a b"), 2), Prf::ZERO);
    }

    #[test]
    fn rouge_l_hand_lcs() {
        let s = rouge_l(&t("a c b"), &t("a b c"));
        assert_eq!(lcs_len(&t("a c b"), &t("a b c")), 2);
        assert_eq!(s.precision, 2.0 / 3.0);
        assert_eq!(s.recall, 2.0 / 3.0);
    }

    #[test]
    fn rouge_lsum_single_sentence_equals_rouge_l() {
        let tok = Tokenizer::Whitespace;
        let a = rouge_lsum("a c b d", "a b c d e", &tok);
        let b = rouge_l(&t("a c b d"), &t("a b c d e"));
        assert!((a.f1 - b.f1).abs() < 1e-12);
        assert_eq!(rouge_lsum("x y\nz", "x y\nz", &tok).f1, 1.0);
    }

    #[test]
    fn bleu_brevity_penalty() {
        let v = bleu(&[(t("the cat"), t("the cat sat"))], 2);
        assert!((v - (-0.5f64).exp()).abs() < 1e-12);
        assert!((v - 0.6065).abs() < 1e-4);
        assert_eq!(bleu(&[(t("x y"), t("a b"))], 4), 0.0);
        assert_eq!(bleu(&[(t("a b c d"), t("a b c d"))], 4), 1.0);
    }

    #[test]
    fn chrf_reference_values() {
        assert_eq!(chrf("abc", "abc", 6, 2.0), 100.0);
        assert_eq!(chrf("abc", "xyz", 6, 2.0), 0.0);
        // orders 1..4 exist: P = R = (3/4 + 2/3 + 1/2 + 0) / 4
        let expected = 100.0 * (0.75 + 2.0 / 3.0 + 0.5) / 4.0;
        assert!((chrf("abcd", "abce", 6, 2.0) - expected).abs() < 1e-9);
        assert!((chrf("a b", "ab", 6, 2.0) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn meteor_hand_values() {
        assert_eq!(meteor(&t("a b"), &t("b a")), 0.5);
        assert_eq!(meteor(&t("a b c d"), &t("a b c d")), 0.9921875);
        assert_eq!(meteor_identity(4), 0.9921875);
        assert_eq!(meteor(&t("a b"), &t("c d")), 0.0);
    }

    #[test]
    fn meteor_prefers_long_runs() {
        // greedy longest-run keeps "a b c" together: 2 chunks
        let align = meteor_alignment(&t("a b c x a"), &t("a b c a"));
        assert_eq!(align, vec![(0, 0), (1, 1), (2, 2), (4, 3)]);
    }

    #[test]
    fn squad_hand_values() {
        let tok = Tokenizer::Whitespace;
        let o = SquadOptions::default();
        assert_eq!(squad_f1("a b", "b c", &tok, o), 0.5);
        assert_eq!(squad_f1("Hello, World!", "hello world", &tok, o), 1.0);
        assert_eq!(squad_f1("...", "!!", &tok, o), 1.0);
        let articles = SquadOptions {
            remove_articles: true,
        };
        assert_eq!(squad_f1("the cat", "a cat", &tok, articles), 1.0);
    }

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn bert_like_hand_table() {
        let pred = [
            v(&[1.0, 0.0, 0.0]),
            v(&[0.0, 1.0, 0.0]),
            v(&[1.0, 1.0, 0.0]),
        ];
        let reference = [
            v(&[1.0, 0.0, 0.0]),
            v(&[0.0, 0.0, 1.0]),
            v(&[0.0, 1.0, 1.0]),
        ];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        // row maxima: 1, 1/sqrt2, 1/sqrt2 ; column maxima: 1, 0, 1/sqrt2
        let p = (1.0 + h + h) / 3.0;
        let r = (1.0 + 0.0 + h) / 3.0;
        let s = bert_like_from_vectors(&pred, &reference);
        assert!((s.precision - p).abs() < 1e-9);
        assert!((s.recall - r).abs() < 1e-9);
        assert!((s.f1 - 2.0 * p * r / (p + r)).abs() < 1e-9);
    }

    #[test]
    fn bert_like_orthogonal_is_zero_and_identity_is_one() {
        let a = [v(&[1.0, 0.0])];
        let b = [v(&[0.0, 1.0])];
        assert_eq!(bert_like_from_vectors(&a, &b).f1, 0.0);
        let neg = [v(&[-1.0, 0.0])];
        assert_eq!(bert_like_from_vectors(&a, &neg).f1, 0.0);
        let gw = Gateway::mock();
        let s = bert_like_score("แมว กิน ปลา", "แมว กิน ปลา", &Tokenizer::Whitespace, &gw).unwrap();
        assert!((s.f1 - 1.0).abs() < 1e-12);
    }
}
