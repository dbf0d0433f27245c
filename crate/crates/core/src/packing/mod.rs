//! Tokenization of rendered examples, fixed-length packing with `<eos>`
//! separators, document attention masks and the target-only label loss.

mod shard;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use shard::{read_shard, write_shard, ShardHeader, SHARD_MAGIC, SHARD_VERSION};

use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::prompting::{Provenance, RenderedExample};
use crate::tokenizer::{TokenId, Tokenizer};

pub const DEFAULT_SEQ_LEN: usize = 2048;

/// `doc_ids` value of padding positions.
pub const PAD_DOC: i32 = -1;

/// Tolerance on `Σ p = 1` for scorer distributions.
pub const DISTRIBUTION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedExample {
    pub tokens: Vec<TokenId>,
    /// Ordered, disjoint token ranges that carry loss.
    pub target_spans: Vec<Range<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl TokenizedExample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn loss_token_count(&self) -> usize {
        self.target_spans.iter().map(|r| r.len()).sum()
    }
}

/// Encodes `source ‖ target` plus a trailing `<eos>`.
///
/// A token carries loss when its byte range intersects a loss span. The `<eos>`
/// joins the final span, so a model trained on it learns to stop.
pub fn tokenize_rendered(example: &RenderedExample, tokenizer: &dyn Tokenizer) -> Result<TokenizedExample> {
    let text = example.full_text();
    let encoded = tokenizer.encode_with_offsets(&text).map_err(|e| Error::Tokenizer {
        context: format!("{}/{}", example.provenance.task_id, example.provenance.record_id),
        message: e.to_string(),
    })?;
    let mut spans: Vec<Range<usize>> = Vec::with_capacity(example.loss_spans.len() + 1);
    for span in &example.loss_spans {
        let mut hit = encoded
            .iter()
            .enumerate()
            .filter(|(_, (_, r))| r.start < span.end && span.start < r.end)
            .map(|(i, _)| i);
        let Some(first) = hit.next() else { continue };
        let last = hit.next_back().unwrap_or(first);
        match spans.last_mut() {
            Some(prev) if prev.end > first => prev.end = prev.end.max(last + 1),
            _ => spans.push(first..last + 1),
        }
    }
    let n = encoded.len();
    let mut tokens: Vec<TokenId> = encoded.into_iter().map(|(t, _)| t).collect();
    tokens.push(tokenizer.eos_id());
    if !spans.is_empty() {
        match spans.last_mut() {
            Some(last) if last.end == n => last.end = n + 1,
            _ => spans.push(n..n + 1),
        }
    }
    Ok(TokenizedExample {
        tokens,
        target_spans: spans,
        provenance: Some(example.provenance.clone()),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Truncated {
    Kept(TokenizedExample),
    /// Truncation removed every loss-carrying token.
    Dropped,
}

/// Keeps the last `max_len` tokens, shifting and clipping the loss spans.
pub fn left_truncate(example: TokenizedExample, max_len: usize) -> Result<Truncated> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let len = example.tokens.len();
    if len <= max_len {
        return Ok(Truncated::Kept(example));
    }
    let cut = len - max_len;
    let had_loss = !example.target_spans.is_empty();
    let target_spans: Vec<Range<usize>> = example
        .target_spans
        .iter()
        .filter(|r| r.end > cut)
        .map(|r| r.start.max(cut) - cut..r.end - cut)
        .collect();
    if had_loss && target_spans.is_empty() {
        return Ok(Truncated::Dropped);
    }
    Ok(Truncated::Kept(TokenizedExample {
        tokens: example.tokens[cut..].to_vec(),
        target_spans,
        provenance: example.provenance,
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub tokens: Vec<TokenId>,
    /// Sequence-local document index per position, [`PAD_DOC`] for padding.
    pub doc_ids: Vec<i32>,
    pub loss_mask: Vec<bool>,
    pub pad_count: usize,
}

impl PackedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Lengths of the documents in order.
    pub fn doc_lengths(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        let mut prev = PAD_DOC;
        for &d in &self.doc_ids {
            if d == PAD_DOC {
                continue;
            }
            if d != prev {
                out.push(0);
                prev = d;
            }
            *out.last_mut().expect("pushed") += 1;
        }
        out
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if self.doc_ids.len() != n || self.loss_mask.len() != n {
            return Err(Error::Shard("array lengths differ".into()));
        }
        let mut prev = i32::MIN;
        let mut pads = 0;
        for (i, &d) in self.doc_ids.iter().enumerate() {
            if d == PAD_DOC {
                pads += 1;
                if self.loss_mask[i] {
                    return Err(Error::Shard(format!("loss on padding position {i}")));
                }
                continue;
            }
            if d < prev || d < 0 {
                return Err(Error::Shard(format!("doc ids not non-decreasing at {i}")));
            }
            if pads > 0 {
                return Err(Error::Shard(format!("document after padding at {i}")));
            }
            prev = d;
        }
        if pads != self.pad_count {
            return Err(Error::Shard("pad_count mismatch".into()));
        }
        Ok(())
    }
}

/// Greedy, order-preserving packer. Examples never straddle two sequences.
#[derive(Debug, Clone)]
pub struct Packer {
    seq_len: usize,
    eos: TokenId,
    tokens: Vec<TokenId>,
    doc_ids: Vec<i32>,
    loss_mask: Vec<bool>,
    next_doc: i32,
}

impl Packer {
    pub fn new(seq_len: usize, eos: TokenId) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::InvalidArgument("sequence length must be positive".into()));
        }
        Ok(Packer {
            seq_len,
            eos,
            tokens: Vec::with_capacity(seq_len),
            doc_ids: Vec::with_capacity(seq_len),
            loss_mask: Vec::with_capacity(seq_len),
            next_doc: 0,
        })
    }

    /// Adds one example; returns a finished sequence when the example did not
    /// fit into the one being built.
    pub fn push(&mut self, example: &TokenizedExample) -> Result<Option<PackedSequence>> {
        let n = example.tokens.len();
        if n > self.seq_len {
            return Err(Error::InvalidArgument(format!(
                "example of {n} tokens exceeds sequence length {}; truncate first",
                self.seq_len
            )));
        }
        let emitted = if self.tokens.len() + n > self.seq_len {
            self.flush()
        } else {
            None
        };
        let doc = self.next_doc;
        self.next_doc += 1;
        let base = self.loss_mask.len();
        self.tokens.extend_from_slice(&example.tokens);
        self.doc_ids.extend(std::iter::repeat_n(doc, n));
        self.loss_mask.extend(std::iter::repeat_n(false, n));
        for span in &example.target_spans {
            for m in &mut self.loss_mask[base + span.start..base + span.end] {
                *m = true;
            }
        }
        Ok(emitted)
    }

    /// Pads and returns the sequence in progress, if any.
    pub fn flush(&mut self) -> Option<PackedSequence> {
        if self.tokens.is_empty() {
            return None;
        }
        let pad = self.seq_len - self.tokens.len();
        self.tokens.extend(std::iter::repeat_n(self.eos, pad));
        self.doc_ids.extend(std::iter::repeat_n(PAD_DOC, pad));
        self.loss_mask.extend(std::iter::repeat_n(false, pad));
        self.next_doc = 0;
        Some(PackedSequence {
            tokens: std::mem::replace(&mut self.tokens, Vec::with_capacity(self.seq_len)),
            doc_ids: std::mem::replace(&mut self.doc_ids, Vec::with_capacity(self.seq_len)),
            loss_mask: std::mem::replace(&mut self.loss_mask, Vec::with_capacity(self.seq_len)),
            pad_count: pad,
        })
    }
}

/// Packs a whole stream.
pub fn pack<'a, I>(examples: I, seq_len: usize, eos: TokenId) -> Result<Vec<PackedSequence>>
where
    I: IntoIterator<Item = &'a TokenizedExample>,
{
    let mut packer = Packer::new(seq_len, eos)?;
    let mut out = Vec::new();
    for ex in examples {
        out.extend(packer.push(ex)?);
    }
    out.extend(packer.flush());
    Ok(out)
}

/// Recovers the documents (token lists) in stream order.
pub fn unpack(sequences: &[PackedSequence]) -> Vec<Vec<TokenId>> {
    let mut docs = Vec::new();
    for seq in sequences {
        let mut prev = PAD_DOC;
        for (&t, &d) in seq.tokens.iter().zip(&seq.doc_ids) {
            if d == PAD_DOC {
                continue;
            }
            if d != prev {
                docs.push(Vec::new());
                prev = d;
            }
            docs.last_mut().expect("pushed").push(t);
        }
    }
    docs
}

/// Interval form of the document attention mask: position `i` may attend to
/// `j` iff `start[i] <= j <= i`. Padding rows attend to nothing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentMask {
    starts: Vec<Option<usize>>,
}

impl DocumentMask {
    pub fn new(seq: &PackedSequence) -> Self {
        let mut starts = Vec::with_capacity(seq.doc_ids.len());
        let mut cur: Option<(i32, usize)> = None;
        for (i, &d) in seq.doc_ids.iter().enumerate() {
            if d == PAD_DOC {
                starts.push(None);
                continue;
            }
            let start = match cur {
                Some((doc, s)) if doc == d => s,
                _ => i,
            };
            cur = Some((d, start));
            starts.push(Some(start));
        }
        DocumentMask { starts }
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn doc_start(&self, i: usize) -> Option<usize> {
        self.starts[i]
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        matches!(self.starts[i], Some(s) if s <= j && j <= i)
    }

    pub fn to_dense(&self) -> DenseMask {
        let n = self.starts.len();
        let mut bits = vec![false; n * n];
        for (i, s) in self.starts.iter().enumerate() {
            if let Some(s) = s {
                bits[i * n + s..=i * n + i].fill(true);
            }
        }
        DenseMask { n, bits }
    }
}

/// Row-major `L×L` boolean attention mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseMask {
    n: usize,
    bits: Vec<bool>,
}

impl DenseMask {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.n..(i + 1) * self.n]
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Block lower-triangular mask: `M[i][j]` iff `i`, `j` are in the same
/// document and `j <= i`.
pub fn build_doc_mask(seq: &PackedSequence) -> DenseMask {
    let n = seq.doc_ids.len();
    let mut bits = vec![false; n * n];
    for i in 0..n {
        let di = seq.doc_ids[i];
        if di == PAD_DOC {
            continue;
        }
        for j in (0..=i).rev() {
            if seq.doc_ids[j] != di {
                break;
            }
            bits[i * n + j] = true;
        }
    }
    DenseMask { n, bits }
}

pub fn build_loss_mask(seq: &PackedSequence) -> Vec<bool> {
    seq.loss_mask
        .iter()
        .zip(&seq.doc_ids)
        .map(|(&m, &d)| m && d != PAD_DOC)
        .collect()
}

/// Negative log-likelihood of every loss-masked token given its
/// same-document prefix.
pub fn label_loss(seq: &PackedSequence, scorer: &dyn Scorer) -> Result<f64> {
    let vocab = scorer.vocab_size();
    let mask = DocumentMask::new(seq);
    let mut loss = 0.0;
    for (i, m) in build_loss_mask(seq).into_iter().enumerate() {
        if !m {
            continue;
        }
        let start = mask.doc_start(i).expect("loss positions are never padding");
        let dist = scorer.next_token_distribution(&seq.tokens[start..i]);
        if dist.len() != vocab {
            return Err(Error::Contract(format!(
                "distribution has {} entries, vocab is {vocab}",
                dist.len()
            )));
        }
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOL || dist.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Contract(format!("next-token distribution sums to {sum}")));
        }
        let tok = seq.tokens[i] as usize;
        let p = *dist
            .get(tok)
            .ok_or_else(|| Error::Contract(format!("token {tok} outside vocab {vocab}")))?;
        loss -= p.ln();
    }
    Ok(loss)
}

/// Sum of [`label_loss`] over a batch.
pub fn batch_label_loss(seqs: &[PackedSequence], scorer: &dyn Scorer) -> Result<f64> {
    seqs.iter().map(|s| label_loss(s, scorer)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::UniformScorer;
    use crate::prompting::Span;
    use crate::tokenizer::ByteTokenizer;

    fn rendered(src: &str, tgt: &str, spans: Vec<Span>) -> RenderedExample {
        RenderedExample {
            source_text: src.into(),
            target_text: tgt.into(),
            loss_spans: spans,
            shots: 0,
            provenance: Provenance {
                task_id: "t".into(),
                record_id: "r".into(),
                template_id: None,
            },
            demo_record_ids: vec![],
        }
    }

    fn ex(len: usize, spans: Vec<Range<usize>>) -> TokenizedExample {
        TokenizedExample {
            tokens: (0..len as u32).collect(),
            target_spans: spans,
            provenance: None,
        }
    }

    #[test]
    fn tokenize_adds_eos_to_target() {
        let r = rendered("abc", "de", vec![Span::new(3, 5)]);
        let t = tokenize_rendered(&r, &ByteTokenizer).unwrap();
        assert_eq!(t.tokens.len(), 6);
        assert_eq!(*t.tokens.last().unwrap(), ByteTokenizer::EOS);
        assert_eq!(t.target_spans, vec![3..6]);
    }

    #[test]
    fn tokenize_without_loss() {
        let r = rendered("abc", "", vec![]);
        let t = tokenize_rendered(&r, &ByteTokenizer).unwrap();
        assert_eq!(t.tokens.len(), 4);
        assert!(t.target_spans.is_empty());
    }

    #[test]
    fn tokenize_keeps_separate_spans() {
        let r = rendered("ab|cd|", "ef", vec![Span::new(1, 2), Span::new(3, 8)]);
        let t = tokenize_rendered(&r, &ByteTokenizer).unwrap();
        assert_eq!(t.target_spans, vec![1..2, 3..9]);
    }

    #[test]
    fn truncation_keeps_suffix() {
        let t = ex(3000, vec![2990..3000]);
        let Truncated::Kept(k) = left_truncate(t, 2048).unwrap() else {
            panic!()
        };
        assert_eq!(k.tokens.first(), Some(&952));
        assert_eq!(k.tokens.last(), Some(&2999));
        let same = ex(2048, vec![0..1]);
        assert_eq!(left_truncate(same.clone(), 2048).unwrap(), Truncated::Kept(same));
    }

    #[test]
    fn truncation_shifts_spans() {
        let Truncated::Kept(k) = left_truncate(ex(2050, vec![2040..2050]), 2048).unwrap() else {
            panic!()
        };
        assert_eq!(k.target_spans, vec![2038..2048]);
        let Truncated::Kept(k) = left_truncate(ex(10, vec![0..4, 6..10]), 8).unwrap() else {
            panic!()
        };
        assert_eq!(k.target_spans, vec![0..2, 4..8]);
    }

    #[test]
    fn truncation_destroying_target_drops() {
        assert_eq!(left_truncate(ex(10, vec![0..2]), 5).unwrap(), Truncated::Dropped);
        assert!(left_truncate(ex(10, vec![]), 0).is_err());
    }

    #[test]
    fn greedy_packing() {
        let seqs = pack(&[ex(5, vec![]), ex(5, vec![])], 12, 99).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].pad_count, 2);
        assert_eq!(seqs[0].doc_lengths(), vec![5, 5]);
        assert_eq!(&seqs[0].tokens[10..], &[99, 99]);
        let seqs = pack(&[ex(10, vec![]), ex(5, vec![])], 12, 99).unwrap();
        assert_eq!(seqs.len(), 2);
        seqs.iter().for_each(|s| s.validate().unwrap());
    }

    #[test]
    fn oversize_example_rejected() {
        assert!(pack(&[ex(13, vec![])], 12, 0).is_err());
    }

    #[test]
    fn doc_mask_rows() {
        let seq = PackedSequence {
            tokens: vec![0; 5],
            doc_ids: vec![0, 0, 0, 1, 1],
            loss_mask: vec![false; 5],
            pad_count: 0,
        };
        let m = build_doc_mask(&seq);
        assert_eq!(m.row(3), &[false, false, false, true, false]);
        assert_eq!(m.row(4), &[false, false, false, true, true]);
        assert_eq!(DocumentMask::new(&seq).to_dense(), m);
    }

    #[test]
    fn single_doc_is_causal() {
        let seq = pack(&[ex(6, vec![])], 6, 0).unwrap().remove(0);
        let m = build_doc_mask(&seq);
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(m.get(i, j), j <= i);
            }
        }
    }

    #[test]
    fn loss_mask_from_spans() {
        let r = rendered("abc", "de", vec![Span::new(3, 5)]);
        let t = tokenize_rendered(&r, &ByteTokenizer).unwrap();
        let seq = pack(&[t], 8, ByteTokenizer::EOS).unwrap().remove(0);
        assert_eq!(
            build_loss_mask(&seq),
            vec![false, false, false, true, true, true, false, false]
        );
    }

    #[test]
    fn uniform_loss() {
        let s = UniformScorer::new(16, 15);
        let seq = pack(&[ex(12, vec![2..12])], 14, 15).unwrap().remove(0);
        let l = label_loss(&seq, &s).unwrap();
        assert!((l - 27.72589).abs() < 1e-5);
        let none = pack(&[ex(12, vec![])], 14, 15).unwrap().remove(0);
        assert_eq!(label_loss(&none, &s).unwrap(), 0.0);
    }
}
