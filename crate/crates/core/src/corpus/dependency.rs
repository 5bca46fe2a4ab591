//! Dependency treebanks in a three-column tab-separated format:
//! `index<TAB>form<TAB>head`, 1-based indices, head `0` for the root,
//! blank line between sentences. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepSentence {
    pub forms: Vec<String>,
    /// 1-based head per token; 0 marks the root.
    pub heads: Vec<usize>,
}

impl DepSentence {
    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    /// 0-based index of the root token.
    pub fn root(&self) -> Option<usize> {
        self.heads.iter().position(|&h| h == 0)
    }

    /// Checks head ranges, a single root and acyclicity; `index` names the
    /// sentence in errors.
    pub fn validate(&self, index: usize) -> Result<()> {
        let fail = |reason: String| Err(Error::Validation { sentence: index, reason });
        let n = self.len();
        if n == 0 {
            return fail("empty sentence".into());
        }
        if self.heads.len() != n {
            return fail(format!("{} forms but {} heads", n, self.heads.len()));
        }
        if let Some((i, &h)) = self.heads.iter().enumerate().find(|(_, &h)| h > n) {
            return fail(format!("token {} has head {h} beyond sentence length {n}", i + 1));
        }
        match self.heads.iter().filter(|&&h| h == 0).count() {
            1 => {}
            0 => return fail("no root token".into()),
            k => return fail(format!("{k} root tokens")),
        }
        for start in 0..n {
            let mut at = start;
            let mut steps = 0;
            while self.heads[at] != 0 {
                at = self.heads[at] - 1;
                steps += 1;
                if steps > n {
                    return fail(format!("cyclic heads through token {}", start + 1));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DependencyCorpus {
    sentences: Vec<DepSentence>,
}

impl DependencyCorpus {
    pub fn new(sentences: Vec<DepSentence>) -> Result<Self> {
        for (i, s) in sentences.iter().enumerate() {
            s.validate(i + 1)?;
        }
        Ok(DependencyCorpus { sentences })
    }

    pub fn sentences(&self) -> &[DepSentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// First `k` sentences and the rest.
    pub fn split_at(&self, k: usize) -> (DependencyCorpus, DependencyCorpus) {
        let k = k.min(self.len());
        (
            DependencyCorpus { sentences: self.sentences[..k].to_vec() },
            DependencyCorpus { sentences: self.sentences[k..].to_vec() },
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut sentences = Vec::new();
        let mut current = DepSentence { forms: vec![], heads: vec![] };
        let flush = |current: &mut DepSentence, sentences: &mut Vec<DepSentence>| {
            if !current.is_empty() {
                sentences.push(std::mem::replace(current, DepSentence { forms: vec![], heads: vec![] }));
            }
        };
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                flush(&mut current, &mut sentences);
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let sentence = sentences.len() + 1;
            let bad = |reason: String| Error::Validation {
                sentence,
                reason: format!("line {}: {reason}", lineno + 1),
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad(format!("expected 3 tab-separated columns, found {}", cols.len())));
            }
            let index: usize = cols[0].parse().map_err(|_| bad(format!("bad index {:?}", cols[0])))?;
            if index != current.len() + 1 {
                return Err(bad(format!("index {index} out of sequence")));
            }
            let head: usize = cols[2].parse().map_err(|_| bad(format!("bad head {:?}", cols[2])))?;
            current.forms.push(cols[1].to_string());
            current.heads.push(head);
        }
        flush(&mut current, &mut sentences);
        Self::new(sentences)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, s) in self.sentences.iter().enumerate() {
            if k > 0 {
                out.push('\n');
            }
            for (i, (form, head)) in s.forms.iter().zip(&s.heads).enumerate() {
                writeln!(out, "{}\t{form}\t{head}", i + 1).unwrap();
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }
}
