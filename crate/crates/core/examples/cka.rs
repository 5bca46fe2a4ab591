//! Linear CKA between the self-attention blocks of two differently seeded
//! toy encoders, and of one encoder with itself.
//!
//! ```text
//! cargo run --release --example cka
//! ```

use elision::cka::{capture_activations, diagonal_dominance, encode_sentences, similarity_matrix, Pooling};
use elision::corpus::{tokenize_corpus, DependencyCorpus, BUNDLED_CORPUS, BUNDLED_TREEBANK};
use elision::model::{Elision, EncoderModel, ModelConfig};

fn main() -> elision::Result<()> {
    let corpus = tokenize_corpus(BUNDLED_CORPUS, 256, 0)?;
    let treebank = DependencyCorpus::parse(BUNDLED_TREEBANK)?;
    let sentences: Vec<Vec<String>> = treebank.sentences().iter().take(128).map(|s| s.forms.clone()).collect();
    let rows = encode_sentences(corpus.vocab(), &sentences);
    let config = ModelConfig::toy(corpus.vocab().len(), Elision::UNMODIFIED);
    let a = capture_activations(&EncoderModel::<f32>::new(&config, 1)?, &rows, Pooling::Mean, "n=1", 1)?;
    let b = capture_activations(&EncoderModel::<f32>::new(&config, 2)?, &rows, Pooling::Mean, "n=1", 2)?;
    for (x, y) in [(&a, &a), (&a, &b)] {
        let s = similarity_matrix(x, y)?;
        print!("{}", s.to_csv());
        println!("diagonal dominance {:.3}\n", diagonal_dominance(&s)?);
    }
    Ok(())
}
