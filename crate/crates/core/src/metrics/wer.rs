use serde::Serialize;

use super::MetricsError;
use crate::corpus::normalize_text;

/// Edit-operation counts of an alignment against a reference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EditBreakdown {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_words: usize,
}

impl EditBreakdown {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    pub fn wer(&self) -> f64 {
        self.errors() as f64 / self.ref_words as f64
    }

    pub fn deletion_rate(&self) -> f64 {
        self.deletions as f64 / self.ref_words as f64
    }

    pub fn add(&mut self, other: &EditBreakdown) {
        self.substitutions += other.substitutions;
        self.insertions += other.insertions;
        self.deletions += other.deletions;
        self.ref_words += other.ref_words;
    }
}

/// Unit-cost Levenshtein alignment of token sequences. Among minimum-cost
/// alignments the one with the fewest substitutions, then fewest deletions,
/// is reported. `ref_words` is `reference.len()` and may be zero here.
pub fn align<T: PartialEq>(hyp: &[T], reference: &[T]) -> EditBreakdown {
    // cell = (total, substitutions, deletions); compared lexicographically
    let w = hyp.len() + 1;
    let mut prev: Vec<(usize, usize, usize)> = (0..w).map(|j| (j, 0, 0)).collect();
    let mut cur = prev.clone();
    for (i, r) in reference.iter().enumerate() {
        cur[0] = (i + 1, 0, i + 1);
        for (j, h) in hyp.iter().enumerate() {
            let diag = if h == r {
                prev[j]
            } else {
                let p = prev[j];
                (p.0 + 1, p.1 + 1, p.2)
            };
            let del = {
                let p = prev[j + 1];
                (p.0 + 1, p.1, p.2 + 1)
            };
            let ins = {
                let p = cur[j];
                (p.0 + 1, p.1, p.2)
            };
            cur[j + 1] = diag.min(del).min(ins);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (total, s, d) = prev[hyp.len()];
    EditBreakdown {
        substitutions: s,
        insertions: total - s - d,
        deletions: d,
        ref_words: reference.len(),
    }
}

/// Word-level alignment of normalized texts.
pub fn wer(hyp: &str, reference: &str) -> Result<EditBreakdown, MetricsError> {
    let r = normalize_text(reference);
    if r.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    Ok(align(&normalize_text(hyp), &r))
}

/// Pooled counts over all pairs.
pub fn corpus_wer<H: AsRef<str>, R: AsRef<str>>(
    pairs: &[(H, R)],
) -> Result<EditBreakdown, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut total = EditBreakdown::default();
    for (k, (h, r)) in pairs.iter().enumerate() {
        let b = wer(h.as_ref(), r.as_ref()).map_err(|e| MetricsError::AtPair {
            index: k,
            message: e.to_string(),
        })?;
        total.add(&b);
    }
    Ok(total)
}
