//! Masked-LM batches.

use rand::Rng as _;

use crate::corpus::tokenizer::{is_reserved, RESERVED};
use crate::corpus::{TokenCorpus, CLS, MASK, PAD, SEP};
use crate::error::{Error, Result};
use crate::model::EncoderInput;
use crate::rng::Rng;

/// Share of selected positions replaced by `[MASK]`, by a random token, or
/// left unchanged.
pub const REPLACE_WITH_MASK: f64 = 0.8;
pub const REPLACE_WITH_RANDOM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct MlmBatch {
    pub input: EncoderInput,
    /// Flattened `row * seq + column` indices of the selected positions.
    pub positions: Vec<usize>,
    /// Original token at each selected position.
    pub targets: Vec<usize>,
}

impl MlmBatch {
    pub fn is_masked(&self, flat: usize) -> bool {
        self.positions.binary_search(&flat).is_ok()
    }
}

/// How each selected position was corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corruption {
    Mask,
    Random,
    Keep,
}

/// Selects each non-special token with probability `rate` and corrupts it
/// 80/10/10. Returns the selected flat positions, their targets and the
/// corruption applied.
pub fn mask_tokens(
    tokens: &mut [usize],
    vocab_size: usize,
    rate: f64,
    rng: &mut Rng,
) -> (Vec<usize>, Vec<usize>, Vec<Corruption>) {
    let mut positions = Vec::new();
    let mut targets = Vec::new();
    let mut kinds = Vec::new();
    for (i, t) in tokens.iter_mut().enumerate() {
        if is_reserved(*t) || !rng.random_bool(rate) {
            continue;
        }
        positions.push(i);
        targets.push(*t);
        let u: f64 = rng.random();
        let kind = if u < REPLACE_WITH_MASK {
            *t = MASK;
            Corruption::Mask
        } else if u < REPLACE_WITH_MASK + REPLACE_WITH_RANDOM {
            *t = rng.random_range(RESERVED.len()..vocab_size);
            Corruption::Random
        } else {
            Corruption::Keep
        };
        kinds.push(kind);
    }
    (positions, targets, kinds)
}

/// A batch of `batch_size` windows of `seq_len` tokens (including `[CLS]`
/// and `[SEP]`) drawn from random documents at random offsets; shorter
/// documents are padded. With `rate > 0` at least one position is masked.
pub fn make_mlm_batch(
    corpus: &TokenCorpus,
    seq_len: usize,
    batch_size: usize,
    rate: f64,
    rng: &mut Rng,
) -> Result<MlmBatch> {
    let docs = corpus.documents();
    if docs.is_empty() || seq_len < 3 || batch_size == 0 {
        return Err(Error::Input(format!(
            "need documents, seq_len >= 3 and batch_size > 0 (got {} docs, {seq_len}, {batch_size})",
            docs.len()
        )));
    }
    let body = seq_len - 2;
    let rows: Vec<Vec<usize>> = (0..batch_size)
        .map(|_| {
            let doc = &docs[rng.random_range(0..docs.len())];
            let start = if doc.len() > body { rng.random_range(0..=doc.len() - body) } else { 0 };
            let end = (start + body).min(doc.len());
            std::iter::once(CLS).chain(doc[start..end].iter().copied()).chain([SEP]).collect()
        })
        .collect();
    let mut input = EncoderInput::from_rows(&rows, PAD)?;
    let (mut positions, mut targets, _) = mask_tokens(&mut input.tokens, corpus.vocab().len(), rate, rng);
    if rate > 0.0 && positions.is_empty() {
        let candidates: Vec<usize> = (0..input.tokens.len()).filter(|&i| !is_reserved(input.tokens[i])).collect();
        if let Some(&i) = candidates.get(rng.random_range(0..candidates.len().max(1))) {
            positions.push(i);
            targets.push(input.tokens[i]);
            input.tokens[i] = MASK;
        }
    }
    Ok(MlmBatch { input, positions, targets })
}
