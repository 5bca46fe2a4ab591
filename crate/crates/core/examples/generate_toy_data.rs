//! Regenerates the bundled toy corpus and treebank, or writes a fresh set
//! with another seed.
//!
//! ```text
//! cargo run --example generate_toy_data              # rewrite data/
//! cargo run --example generate_toy_data -- 7 out/    # seed 7 into out/
//! ```

use std::path::PathBuf;

use elision::corpus::toy::{bundle, BUNDLE_CORPUS_SENTENCES, BUNDLE_TREEBANK_SENTENCES};
use elision::corpus::ToyGrammar;
use elision::fsutil::write_atomic;
use elision::rng::{purpose, substream};

fn main() -> elision::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (corpus, treebank, dir) = match args.as_slice() {
        [] => {
            let (c, t) = bundle();
            (c, t, PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data"))
        }
        [seed, dir] => {
            let seed: u64 = seed.parse().expect("seed must be an integer");
            let g = ToyGrammar::default();
            let c = g.corpus_text(&mut substream(seed, purpose::DATA), BUNDLE_CORPUS_SENTENCES);
            let t = g.treebank(&mut substream(seed, purpose::PROBE), BUNDLE_TREEBANK_SENTENCES);
            (c, t.to_tsv(), PathBuf::from(dir))
        }
        _ => {
            eprintln!("usage: generate_toy_data [SEED DIR]");
            std::process::exit(2);
        }
    };
    write_atomic(&dir.join("toy_corpus.txt"), corpus.as_bytes())?;
    write_atomic(&dir.join("toy_treebank.tsv"), treebank.as_bytes())?;
    println!("wrote {} corpus lines and {} treebank lines to {}", corpus.lines().count(), treebank.lines().count(), dir.display());
    let sample = ToyGrammar::default().sentence(&mut substream(0, purpose::DATA));
    println!("sample: {}", sample.text());
    Ok(())
}
