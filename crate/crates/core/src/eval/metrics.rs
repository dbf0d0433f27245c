//! Rouge-L F1 and exact match.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    RougeLF1,
    ExactMatch,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::RougeLF1 => "rouge_l_f1",
            Metric::ExactMatch => "exact_match",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn rouge_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Length of the longest common subsequence of two token sequences.
///
/// Bit-parallel over the first sequence (Allison–Dix / Hyyrö): `O(|a|·|b|/64)`.
pub fn lcs_len<T: Eq + std::hash::Hash>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let m = a.len();
    let words = m.div_ceil(64);
    let mut masks: HashMap<&T, Vec<u64>> = HashMap::new();
    for (i, t) in a.iter().enumerate() {
        masks.entry(t).or_insert_with(|| vec![0; words])[i / 64] |= 1 << (i % 64);
    }
    let mut v = vec![u64::MAX; words];
    let tail_bits = m % 64;
    if tail_bits != 0 {
        v[words - 1] = (1u64 << tail_bits) - 1;
    }
    for t in b {
        let Some(mask) = masks.get(t) else { continue };
        let mut carry = 0u64;
        for w in 0..words {
            let u = v[w] & mask[w];
            let (s1, c1) = v[w].overflowing_add(u);
            let (s2, c2) = s1.overflowing_add(carry);
            carry = u64::from(c1 || c2);
            v[w] = s2 | (v[w] & !mask[w]);
        }
        if tail_bits != 0 {
            v[words - 1] &= (1u64 << tail_bits) - 1;
        }
    }
    m - v.iter().map(|w| w.count_ones() as usize).sum::<usize>()
}

/// Rouge-L F1 between `hyp` and one reference; lowercase whitespace tokens,
/// no stemming. Two empty strings score 1.
pub fn rouge_l_pair(hyp: &str, reference: &str) -> f64 {
    let h = rouge_tokens(hyp);
    let r = rouge_tokens(reference);
    if h.is_empty() && r.is_empty() {
        return 1.0;
    }
    let l = lcs_len(&h, &r);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / h.len() as f64;
    let rec = l as f64 / r.len() as f64;
    2.0 * p * rec / (p + rec)
}

/// Best Rouge-L F1 over the references.
pub fn rouge_l_f1<S: AsRef<str>>(hyp: &str, references: &[S]) -> f64 {
    references
        .iter()
        .map(|r| rouge_l_pair(hyp, r.as_ref()))
        .fold(0.0, f64::max)
}

/// Lowercase, trim and collapse internal whitespace runs.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match<S: AsRef<str>>(hyp: &str, references: &[S]) -> f64 {
    let h = normalize_answer(hyp);
    if references.iter().any(|r| normalize_answer(r.as_ref()) == h) {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let f = rouge_l_f1("the cat on mat", &["the cat sat on the mat"]);
        assert!((f - 0.8).abs() < 1e-12);
    }

    #[test]
    fn identity_and_disjoint() {
        assert_eq!(rouge_l_f1("a b c", &["A b  c"]), 1.0);
        assert_eq!(rouge_l_f1("a b", &["c d"]), 0.0);
        assert_eq!(rouge_l_f1("", &["c d"]), 0.0);
    }

    #[test]
    fn max_over_references() {
        assert_eq!(rouge_l_f1("x y", &["q", "x y"]), 1.0);
    }

    #[test]
    fn lcs_across_word_boundary() {
        let a: Vec<u32> = (0..150).collect();
        let b: Vec<u32> = (0..150).filter(|x| x % 3 != 0).collect();
        assert_eq!(lcs_len(&a, &b), 100);
        assert_eq!(lcs_len(&b, &a), 100);
    }

    #[test]
    fn exact_match_normalization() {
        assert_eq!(exact_match("Paris ", &["paris"]), 1.0);
        assert_eq!(exact_match("Paris", &["Paris, France"]), 0.0);
        assert_eq!(exact_match("new  york", &["boston", "New York"]), 1.0);
    }

    #[test]
    fn metric_names() {
        assert_eq!(serde_json::to_string(&Metric::RougeLF1).unwrap(), "\"rouge_l_f1\"");
        assert_eq!(Metric::ExactMatch.to_string(), "exact_match");
    }
}
