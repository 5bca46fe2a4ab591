//! Text inputs: tokenization, dependency treebanks and the toy grammar that
//! generates the bundled data.

pub mod dependency;
pub mod tokenizer;
pub mod toy;

pub use dependency::{DepSentence, DependencyCorpus};
pub use tokenizer::{split_words, tokenize_corpus, TokenCorpus, Vocabulary, CLS, MASK, PAD, SEP, UNK};
pub use toy::{ClassificationExample, GrammarConfig, Polarity, SpanExample, ToyGrammar, ToySentence};

/// Pre-training text generated by the toy grammar.
pub const BUNDLED_CORPUS: &str = include_str!("../../data/toy_corpus.txt");
/// Gold dependency trees from the same grammar, for probing.
pub const BUNDLED_TREEBANK: &str = include_str!("../../data/toy_treebank.tsv");
