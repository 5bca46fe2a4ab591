//! Trains the attention-map dependency probe on a randomly initialized
//! encoder and reports held-out unlabeled attachment score.
//!
//! ```text
//! cargo run --release --example probe
//! ```

use elision::corpus::{tokenize_corpus, DependencyCorpus, BUNDLED_CORPUS, BUNDLED_TREEBANK};
use elision::model::{Elision, EncoderModel, ModelConfig};
use elision::probe::{run_probe_sweep, ProbeParams};

fn main() -> elision::Result<()> {
    let corpus = tokenize_corpus(BUNDLED_CORPUS, 256, 0)?;
    let treebank = DependencyCorpus::parse(BUNDLED_TREEBANK)?;
    let small = DependencyCorpus::new(treebank.sentences()[..300].to_vec())?;
    let model = EncoderModel::<f32>::new(&ModelConfig::toy(corpus.vocab().len(), Elision::UNMODIFIED), 0)?;
    for params in [ProbeParams { embedding_dim: None, ..ProbeParams::default() }, ProbeParams::default()] {
        let rows = run_probe_sweep(&[("untrained".into(), &model)], corpus.vocab(), &small, &params, &[0])?;
        for r in rows {
            println!("{} probe: UAS {:.1}%", r.probe_variant, r.uas);
        }
    }
    Ok(())
}
