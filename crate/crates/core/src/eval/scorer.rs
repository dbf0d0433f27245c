//! The scorer contract and the reference scorers used as fixtures.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

/// A language model seen through next-token distributions.
///
/// `logprob` must be additive over continuation splits; the default
/// implementation is, by construction.
pub trait Scorer: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn eos_id(&self) -> TokenId;

    /// Probabilities over the vocabulary for the token following `context`.
    fn next_token_distribution(&self, context: &[TokenId]) -> Vec<f64>;

    /// Sum of log-probabilities of `continuation` given `context`.
    fn logprob(&self, context: &[TokenId], continuation: &[TokenId]) -> f64 {
        let mut ctx = context.to_vec();
        let mut total = 0.0;
        for &t in continuation {
            total += self.next_token_distribution(&ctx)[t as usize].ln();
            ctx.push(t);
        }
        total
    }

    /// Most probable next token, lowest id on ties.
    fn greedy_step(&self, context: &[TokenId]) -> TokenId {
        let dist = self.next_token_distribution(context);
        let mut best = 0;
        for (i, p) in dist.iter().enumerate() {
            if *p > dist[best] {
                best = i;
            }
        }
        best as TokenId
    }

    /// Whether the harness may call this scorer from several threads at once.
    fn supports_concurrency(&self) -> bool {
        true
    }
}

/// Every token has probability `1/V`.
#[derive(Debug, Clone, Copy)]
pub struct UniformScorer {
    vocab: usize,
    eos: TokenId,
}

impl UniformScorer {
    pub fn new(vocab: usize, eos: TokenId) -> Self {
        assert!(vocab > 0 && (eos as usize) < vocab, "eos must be inside the vocabulary");
        UniformScorer { vocab, eos }
    }
}

impl Scorer for UniformScorer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn eos_id(&self) -> TokenId {
        self.eos
    }

    fn next_token_distribution(&self, _context: &[TokenId]) -> Vec<f64> {
        vec![1.0 / self.vocab as f64; self.vocab]
    }

    fn logprob(&self, _context: &[TokenId], continuation: &[TokenId]) -> f64 {
        -(continuation.len() as f64) * (self.vocab as f64).ln()
    }
}

/// Context-free scorer with a fixed token distribution.
#[derive(Debug, Clone)]
pub struct UnigramScorer {
    probs: Vec<f64>,
    eos: TokenId,
}

impl UnigramScorer {
    pub fn new(probs: Vec<f64>, eos: TokenId) -> Result<Self> {
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::Validation(
                "unigram table has a negative or non-finite entry".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("unigram table sums to {sum}, expected 1")));
        }
        if eos as usize >= probs.len() {
            return Err(Error::Validation("eos id outside unigram table".into()));
        }
        Ok(UnigramScorer { probs, eos })
    }
}

impl Scorer for UnigramScorer {
    fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    fn eos_id(&self) -> TokenId {
        self.eos
    }

    fn next_token_distribution(&self, _context: &[TokenId]) -> Vec<f64> {
        self.probs.clone()
    }
}

/// Scripted scorer: predicts the next token of a script, then `<eos>`.
///
/// Keyed scripts apply to contexts starting with their prompt; the generated
/// part is whatever follows the prompt. The fallback script (if any) applies
/// to all other contexts and resumes after the longest context suffix that is
/// a prefix of the script. Contexts matching nothing get a uniform
/// distribution.
#[derive(Debug, Clone)]
pub struct EchoScorer {
    vocab: usize,
    eos: TokenId,
    keyed: HashMap<Vec<TokenId>, Vec<TokenId>>,
    key_lens: BTreeSet<usize>,
    fallback: Option<Vec<TokenId>>,
    /// Probability mass spread over the non-predicted tokens.
    slack: f64,
}

impl EchoScorer {
    pub const SLACK: f64 = 1e-6;

    pub fn new(vocab: usize, eos: TokenId, script: Vec<TokenId>) -> Self {
        let mut s = Self::keyed(vocab, eos);
        s.fallback = Some(script);
        s
    }

    pub fn keyed(vocab: usize, eos: TokenId) -> Self {
        assert!(vocab > 1 && (eos as usize) < vocab, "eos must be inside the vocabulary");
        EchoScorer {
            vocab,
            eos,
            keyed: HashMap::new(),
            key_lens: BTreeSet::new(),
            fallback: None,
            slack: Self::SLACK,
        }
    }

    /// Registers `script` as the answer to `prompt`.
    pub fn insert(&mut self, prompt: Vec<TokenId>, script: Vec<TokenId>) {
        self.key_lens.insert(prompt.len());
        self.keyed.insert(prompt, script);
    }

    fn predicted(&self, context: &[TokenId]) -> Option<TokenId> {
        for &len in self.key_lens.iter().rev().filter(|l| **l <= context.len()) {
            if let Some(script) = self.keyed.get(&context[..len]) {
                let generated = &context[len..];
                return Some(if script.starts_with(generated) {
                    script.get(generated.len()).copied().unwrap_or(self.eos)
                } else {
                    self.eos
                });
            }
        }
        let script = self.fallback.as_ref()?;
        let done = (0..=script.len().min(context.len()))
            .rev()
            .find(|&k| context.ends_with(&script[..k]))
            .unwrap_or(0);
        Some(script.get(done).copied().unwrap_or(self.eos))
    }
}

impl Scorer for EchoScorer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn eos_id(&self) -> TokenId {
        self.eos
    }

    fn next_token_distribution(&self, context: &[TokenId]) -> Vec<f64> {
        match self.predicted(context) {
            Some(tok) => {
                let mut dist = vec![self.slack / (self.vocab - 1) as f64; self.vocab];
                dist[tok as usize] = 1.0 - self.slack;
                dist
            }
            None => vec![1.0 / self.vocab as f64; self.vocab],
        }
    }

    fn greedy_step(&self, context: &[TokenId]) -> TokenId {
        self.predicted(context).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logprob() {
        let s = UniformScorer::new(16, 0);
        assert!((s.logprob(&[1, 2], &[3]) + 2.772589).abs() < 1e-6);
        let d = s.next_token_distribution(&[]);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unigram_validation_and_additivity() {
        assert!(UnigramScorer::new(vec![0.5, 0.4], 0).is_err());
        assert!(UnigramScorer::new(vec![0.5, 0.5], 2).is_err());
        let s = UnigramScorer::new(vec![0.1, 0.2, 0.3, 0.4], 0).unwrap();
        let (c, a, b) = (vec![1, 2], vec![3, 1], vec![2]);
        let whole = s.logprob(&c, &[a.clone(), b.clone()].concat());
        let split = s.logprob(&c, &a) + s.logprob(&[c.clone(), a].concat(), &b);
        assert!((whole - split).abs() < 1e-9);
        assert_eq!(s.greedy_step(&[]), 3);
    }

    #[test]
    fn echo_keyed() {
        let mut s = EchoScorer::keyed(10, 9);
        s.insert(vec![1, 2], vec![5, 6]);
        assert_eq!(s.greedy_step(&[1, 2]), 5);
        assert_eq!(s.greedy_step(&[1, 2, 5]), 6);
        assert_eq!(s.greedy_step(&[1, 2, 5, 6]), 9);
        assert_eq!(s.greedy_step(&[1, 2, 7]), 9);
        assert!(s.logprob(&[1, 2], &[5, 6]) > s.logprob(&[1, 2], &[5, 7]));
    }

    #[test]
    fn echo_fallback_resumes() {
        let s = EchoScorer::new(10, 9, vec![4, 5]);
        assert_eq!(s.greedy_step(&[1]), 4);
        assert_eq!(s.greedy_step(&[1, 4]), 5);
        assert_eq!(s.greedy_step(&[1, 4, 5]), 9);
    }
}
