//! Short masked-LM pre-training of the toy encoder on the bundled corpus.
//!
//! ```text
//! cargo run --release --example pretrain -- 400 inf
//! ```

use elision::corpus::{tokenize_corpus, BUNDLED_CORPUS};
use elision::model::{Elision, ModelConfig};
use elision::train::{pretrain, PretrainSchedule};

fn main() -> elision::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(400, |s| s.parse().expect("steps must be an integer"));
    let n: Elision = args.next().map_or(Ok(Elision::Infinity), |s| s.parse())?;
    let corpus = tokenize_corpus(BUNDLED_CORPUS, 256, 0)?;
    let config = ModelConfig::toy(corpus.vocab().len(), n);
    let (_, record) = pretrain::<f32>(&config, &PretrainSchedule::toy(steps), &corpus, 0, None)?;
    for (i, chunk) in record.losses.chunks(steps.div_ceil(10).max(1)).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!("steps {:>5}..  loss {mean:.3}", i * steps.div_ceil(10).max(1) + 1);
    }
    println!(
        "held-out loss {:.3} -> {:.3} at {:.0} tokens/s",
        record.initial_eval_loss.unwrap_or(f64::NAN),
        record.final_eval_loss.unwrap_or(f64::NAN),
        record.tokens_per_second
    );
    Ok(())
}
