//! Whitespace and punctuation tokenization with a frequency-capped
//! vocabulary, plus an on-disk cache of tokenized corpora.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::rng::fnv1a;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;

/// Surface forms of the reserved ids, in id order. None can be produced by
/// [`split_words`], which never emits brackets attached to letters.
pub const RESERVED: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

pub fn is_reserved(id: usize) -> bool {
    id < RESERVED.len()
}

/// Lowercases and splits on whitespace; every punctuation character becomes
/// a token of its own.
pub fn split_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_whitespace() || c.is_ascii_punctuation() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            if c.is_ascii_punctuation() {
                words.push(c.to_string());
            }
        } else {
            current.extend(c.to_lowercase());
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens followed by `words` in order.
    pub fn new<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words.iter().map(|w| w.as_ref().to_string()))
            .collect();
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Input("vocabulary must start with the reserved tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), id).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `word`, or [`UNK`].
    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        split_words(text).iter().map(|w| self.id(w)).collect()
    }

    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(&w.as_ref().to_lowercase())).collect()
    }
}

/// Tokenized documents over a shared vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenCorpus {
    vocab: Vocabulary,
    documents: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    vocabulary: Vec<String>,
    document_lengths: Vec<usize>,
}

impl TokenCorpus {
    pub fn new(vocab: Vocabulary, documents: Vec<Vec<usize>>) -> Result<Self> {
        let v = vocab.len();
        if let Some(bad) = documents.iter().flatten().find(|&&id| id >= v) {
            return Err(Error::Input(format!("token id {bad} outside vocabulary of {v}")));
        }
        Ok(TokenCorpus { vocab, documents })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn documents(&self) -> &[Vec<usize>] {
        &self.documents
    }

    pub fn token_count(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }

    /// Writes `<base>.vocab.json` and `<base>.ids` (u32 little-endian).
    pub fn save(&self, base: &Path) -> Result<()> {
        let header = CacheHeader {
            vocabulary: self.vocab.tokens.clone(),
            document_lengths: self.documents.iter().map(Vec::len).collect(),
        };
        let json = serde_json::to_vec_pretty(&header).expect("vocabulary serializes");
        let mut ids = Vec::with_capacity(self.token_count() * 4);
        for &id in self.documents.iter().flatten() {
            ids.extend_from_slice(&(id as u32).to_le_bytes());
        }
        write_atomic(&with_suffix(base, ".vocab.json"), &json)?;
        write_atomic(&with_suffix(base, ".ids"), &ids)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let header_path = with_suffix(base, ".vocab.json");
        let text = fs::read(&header_path).map_err(|e| Error::io(&header_path, e))?;
        let header: CacheHeader =
            serde_json::from_slice(&text).map_err(|source| Error::Json { path: header_path, source })?;
        let ids_path = with_suffix(base, ".ids");
        let bytes = fs::read(&ids_path).map_err(|e| Error::io(&ids_path, e))?;
        let expected: usize = header.document_lengths.iter().sum::<usize>() * 4;
        if bytes.len() != expected {
            return Err(Error::Truncated {
                expected: expected as u64,
                found: bytes.len() as u64,
            });
        }
        let mut flat = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize);
        let documents = header
            .document_lengths
            .iter()
            .map(|&len| flat.by_ref().take(len).collect())
            .collect();
        TokenCorpus::new(Vocabulary::from_tokens(header.vocabulary)?, documents)
    }
}

pub(crate) fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Tokenizes `text` into documents separated by blank lines. The vocabulary
/// keeps the `vocab_size - 5` most frequent words; `seed` orders words of
/// equal frequency. Everything else maps to [`UNK`].
pub fn tokenize_corpus(text: &str, vocab_size: usize, seed: u64) -> Result<TokenCorpus> {
    if vocab_size <= RESERVED.len() {
        return Err(Error::Parameter(format!(
            "vocab_size must exceed the {} reserved tokens, got {vocab_size}",
            RESERVED.len()
        )));
    }
    let documents: Vec<Vec<String>> = text
        .split("\n\n")
        .map(|doc| split_words(doc.trim()))
        .filter(|d| !d.is_empty())
        .collect();
    if documents.is_empty() {
        return Err(Error::Input("corpus text contains no tokens".into()));
    }

    let mut counts: HashMap<&str, usize> = HashMap::new();
    for w in documents.iter().flatten() {
        *counts.entry(w.as_str()).or_default() += 1;
    }
    let salt = seed.to_le_bytes();
    let tie = |w: &str| fnv1a(&[&salt[..], w.as_bytes()].concat());
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| tie(a.0).cmp(&tie(b.0))).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(vocab_size - RESERVED.len());

    let words: Vec<&str> = ranked.into_iter().map(|(w, _)| w).collect();
    let vocab = Vocabulary::new(&words)?;
    let ids = documents.iter().map(|d| vocab.encode_words(d)).collect();
    TokenCorpus::new(vocab, ids)
}
