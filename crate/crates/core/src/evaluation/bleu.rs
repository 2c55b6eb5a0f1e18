use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Sufficient statistics of corpus BLEU.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub cand_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn add<T: Eq + Hash>(&mut self, cand: &[T], reference: &[T]) {
        self.cand_len += cand.len() as u64;
        self.ref_len += reference.len() as u64;
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(reference, n);
            let cand_counts = ngram_counts(cand, n);
            let clipped: usize = cand_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
            self.matches[n - 1] += clipped as u64;
            self.totals[n - 1] += cand.len().saturating_sub(n - 1) as u64;
        }
    }

    /// Modified precision of order `n` (1-based). Orders above one with no
    /// matches use add-one smoothing so that short sentences still score.
    pub fn precision(&self, n: usize) -> f64 {
        let (m, t) = (self.matches[n - 1], self.totals[n - 1]);
        if n > 1 && m == 0 {
            1.0 / (t as f64 + 1.0)
        } else if t == 0 {
            0.0
        } else {
            m as f64 / t as f64
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.cand_len == 0 {
            0.0
        } else if self.cand_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        }
    }

    /// Score in `[0, 100]`.
    pub fn score(&self) -> f64 {
        if self.matches[0] == 0 || self.cand_len == 0 {
            return 0.0;
        }
        let log_mean = (1..=MAX_ORDER).map(|n| self.precision(n).ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * self.brevity_penalty() * log_mean.exp()
    }
}

fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-4 with one reference per candidate.
pub fn bleu<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::Evaluation(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Evaluation("empty corpus".into()));
    }
    if references.iter().any(Vec::is_empty) {
        return Err(Error::Evaluation("empty reference".into()));
    }
    let mut stats = BleuStats::default();
    for (c, r) in candidates.iter().zip(references) {
        stats.add(c, r);
    }
    Ok(stats.score())
}

/// BLEU over whitespace-tokenized, case-sensitive strings.
pub fn bleu_text(candidates: &[&str], references: &[&str]) -> Result<f64> {
    let split = |v: &[&str]| -> Vec<Vec<String>> {
        v.iter()
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect()
    };
    bleu(&split(candidates), &split(references))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_brevity_example() {
        let b = bleu_text(&["a b c d"], &["a b c d e"]).unwrap();
        let expected = 100.0 * (1.0f64 - 5.0 / 4.0).exp();
        assert!((b - expected).abs() < 1e-12);
        assert!((b - 77.88).abs() < 0.01);
    }

    #[test]
    fn identity_is_exactly_100() {
        let x = vec![vec![3, 4, 5, 6, 7], vec![9, 9], vec![4]];
        assert_eq!(bleu(&x, &x).unwrap(), 100.0);
    }

    #[test]
    fn smoothing_keeps_partial_matches_positive() {
        let b = bleu_text(&["a b x c d y"], &["a b z c d w"]).unwrap();
        assert!(b > 0.0 && b < 100.0);
    }

    #[test]
    fn case_sensitive() {
        assert!(bleu_text(&["A b c d"], &["a b c d"]).unwrap() < 100.0);
    }

    #[test]
    fn no_unigram_match_scores_zero() {
        assert_eq!(bleu_text(&["x y"], &["a b"]).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        assert!(bleu::<u32>(&[], &[]).is_err());
        assert!(bleu(&[vec![1]], &[vec![1], vec![2]]).is_err());
        assert!(bleu(&[vec![1]], &[vec![]]).is_err());
    }

    #[test]
    fn clipping_counts() {
        let mut s = BleuStats::default();
        s.add(&["the", "the", "the"], &["the", "cat"]);
        assert_eq!(s.matches[0], 1);
        assert_eq!(s.totals[0], 3);
    }
}
