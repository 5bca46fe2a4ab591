//! Fine-tunes a freshly initialized toy encoder on the sentiment-style
//! classification task and reports held-out accuracy.
//!
//! ```text
//! cargo run --release --example finetune
//! ```

use elision::corpus::{tokenize_corpus, ToyGrammar, BUNDLED_CORPUS};
use elision::model::{Elision, EncoderModel, ModelConfig};
use elision::train::{finetune, FinetuneParams, TaskData, TaskKind};

fn main() -> elision::Result<()> {
    let corpus = tokenize_corpus(BUNDLED_CORPUS, 256, 0)?;
    let data = TaskData::generate(TaskKind::Classification, &ToyGrammar::default(), 400, 200, 1);
    let params = FinetuneParams::for_task(TaskKind::Classification);
    for n in [Elision::UNMODIFIED, Elision::Infinity] {
        let model = EncoderModel::<f32>::new(&ModelConfig::toy(corpus.vocab().len(), n), 0)?;
        let (_, _, record) = finetune(&model, corpus.vocab(), &data, &params, 0)?;
        let metrics = record.metrics.expect("fine-tuning scores the eval split");
        let first = record.losses.first().copied().unwrap_or(f64::NAN);
        let last = record.losses.last().copied().unwrap_or(f64::NAN);
        println!("n={n}: loss {first:.3} -> {last:.3}, accuracy {:.1}%", 100.0 * metrics.get("accuracy").unwrap_or(f64::NAN));
    }
    Ok(())
}
