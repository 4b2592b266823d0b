//! Levenshtein alignment with unit costs and a fixed tie-break so the
//! substitution/insertion/deletion decomposition is deterministic.

use serde::{Deserialize, Serialize};

use crate::losses::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    pub fn add(&mut self, other: &EditCounts) {
        self.substitutions += other.substitutions;
        self.insertions += other.insertions;
        self.deletions += other.deletions;
    }
}

/// Token error rate: edits over reference length (at least 1).
pub fn wer_from_counts(counts: &EditCounts, ref_len: usize) -> f64 {
    counts.total() as f64 / ref_len.max(1) as f64
}

/// Minimum-edit alignment of `hypothesis` against `reference`.
///
/// When multiple alignments tie, the backtrace prefers substitution, then
/// deletion, then insertion; the total count is tie-break independent.
pub fn edit_distance(reference: &TokenSequence, hypothesis: &TokenSequence) -> EditCounts {
    let r = reference.tokens();
    let h = hypothesis.tokens();
    let m = r.len();
    let n = h.len();

    let mut d = vec![vec![0usize; n + 1]; m + 1];
    for i in 0..=m {
        d[i][0] = i;
    }
    for j in 0..=n {
        d[0][j] = j;
    }
    for i in 1..=m {
        for j in 1..=n {
            let cost = usize::from(r[i - 1] != h[j - 1]);
            d[i][j] = (d[i - 1][j - 1] + cost)
                .min(d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1);
        }
    }

    let mut counts = EditCounts::default();
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let cost = usize::from(r[i - 1] != h[j - 1]);
            if d[i][j] == d[i - 1][j - 1] + cost {
                counts.substitutions += cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            counts.deletions += 1;
            i -= 1;
            continue;
        }
        counts.insertions += 1;
        j -= 1;
    }
    debug_assert_eq!(counts.total(), d[m][n]);
    counts
}
