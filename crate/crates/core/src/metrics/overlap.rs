//! N-gram overlap metrics on lowercased whitespace tokens.

use std::collections::HashMap;

use crate::text::lower_tokens;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn f1(overlap: usize, hyp_total: usize, ref_total: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / hyp_total as f64;
    let r = overlap as f64 / ref_total as f64;
    2.0 * p * r / (p + r)
}

/// ROUGE-N F1. If neither side has an n-gram, identical texts score 1 and
/// anything else 0.
pub fn rouge_n(prediction: &str, reference: &str, n: usize) -> f64 {
    assert!(n >= 1, "rouge_n needs n >= 1");
    let hyp = lower_tokens(prediction);
    let reference = lower_tokens(reference);
    let hc = ngram_counts(&hyp, n);
    let rc = ngram_counts(&reference, n);
    if hc.is_empty() && rc.is_empty() {
        return if hyp == reference { 1.0 } else { 0.0 };
    }
    let overlap: usize = hc.iter().map(|(g, c)| (*c).min(rc.get(g).copied().unwrap_or(0))).sum();
    f1(overlap, hc.values().sum(), rc.values().sum())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 from the longest common token subsequence.
pub fn rouge_l(prediction: &str, reference: &str) -> f64 {
    let hyp = lower_tokens(prediction);
    let reference = lower_tokens(reference);
    if hyp.is_empty() && reference.is_empty() {
        return 1.0;
    }
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    f1(lcs_len(&hyp, &reference), hyp.len(), reference.len())
}

/// Clipped n-gram matches and hypothesis n-gram total, clipping against the
/// per-n-gram maximum over references.
fn clipped_matches(hyp: &[String], refs: &[Vec<String>], n: usize) -> (usize, usize) {
    let hc = ngram_counts(hyp, n);
    let mut max_ref: HashMap<&[String], usize> = HashMap::new();
    for r in refs {
        for (g, c) in ngram_counts(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matches = hc.iter().map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0))).sum();
    (matches, hyp.len().saturating_sub(n - 1))
}

/// Reference length closest to `hyp_len`, preferring the shorter on ties.
fn closest_ref_len(hyp_len: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(hyp_len), r))
        .unwrap_or(0)
}

fn combine(matches: &[usize], totals: &[usize], hyp_len: usize, ref_len: usize) -> f64 {
    if matches.contains(&0) || hyp_len == 0 {
        return 0.0;
    }
    let log_mean = matches
        .iter()
        .zip(totals)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / matches.len() as f64;
    let bp = if hyp_len > ref_len { 1.0 } else { (1.0 - ref_len as f64 / hyp_len as f64).exp() };
    bp * log_mean.exp()
}

/// Unsmoothed sentence BLEU over pre-tokenized text, with the maximum n-gram
/// order capped at the shorter length (and at 4). Two empty texts score 1,
/// one empty text scores 0.
pub fn sentence_bleu(hypothesis: &[String], reference: &[String]) -> f64 {
    if hypothesis.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let order = 4.min(hypothesis.len()).min(reference.len());
    if order == 0 {
        return 0.0;
    }
    let refs = [reference.to_vec()];
    let (matches, totals): (Vec<usize>, Vec<usize>) = (1..=order).map(|n| clipped_matches(hypothesis, &refs, n)).unzip();
    combine(&matches, &totals, hypothesis.len(), reference.len())
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BleuError {
    #[error("{predictions} predictions but {references} reference sets")]
    LengthMismatch { predictions: usize, references: usize },
    #[error("corpus is empty")]
    Empty,
    #[error("prediction {0} has no references")]
    NoReferences(usize),
}

/// Corpus BLEU with n = 1..4: clipped matches, n-gram totals and lengths are
/// pooled over the corpus before the geometric mean and brevity penalty.
pub fn bleu_corpus<S: AsRef<str>>(predictions: &[S], references: &[Vec<S>]) -> Result<f64, BleuError> {
    if predictions.len() != references.len() {
        return Err(BleuError::LengthMismatch { predictions: predictions.len(), references: references.len() });
    }
    if predictions.is_empty() {
        return Err(BleuError::Empty);
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (i, (p, rs)) in predictions.iter().zip(references).enumerate() {
        if rs.is_empty() {
            return Err(BleuError::NoReferences(i));
        }
        let hyp = lower_tokens(p.as_ref());
        let refs: Vec<Vec<String>> = rs.iter().map(|r| lower_tokens(r.as_ref())).collect();
        for n in 1..=4 {
            let (m, t) = clipped_matches(&hyp, &refs, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
        hyp_len += hyp.len();
        ref_len += closest_ref_len(hyp.len(), &refs);
    }
    if totals.contains(&0) {
        return Ok(0.0);
    }
    Ok(combine(&matches, &totals, hyp_len, ref_len))
}
