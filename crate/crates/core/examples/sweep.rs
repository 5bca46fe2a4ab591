//! A miniature size/speed/score sweep: pre-train each n briefly, fine-tune
//! on the classification task and print the merged trade-off table.
//!
//! ```text
//! cargo run --release --example sweep
//! ```

use elision::corpus::{tokenize_corpus, ToyGrammar, BUNDLED_CORPUS};
use elision::model::{Elision, ModelConfig};
use elision::report::build_report;
use elision::train::{run_tradeoff_sweep, FinetuneParams, PretrainSchedule, SweepPlan, TaskData, TaskKind};

fn main() -> elision::Result<()> {
    let corpus = tokenize_corpus(BUNDLED_CORPUS, 256, 0)?;
    let task = TaskKind::Classification;
    let plan = SweepPlan {
        config: ModelConfig::toy(corpus.vocab().len(), Elision::UNMODIFIED),
        ns: Elision::parse_list("1,2,inf")?,
        schedule: PretrainSchedule::toy(200),
        corpus: &corpus,
        tasks: vec![(TaskData::generate(task, &ToyGrammar::default(), 300, 200, 1), FinetuneParams::for_task(task))],
        seeds: vec![0],
        untrained_baseline: true,
    };
    let outcome = run_tradeoff_sweep(&plan, None)?;
    print!("{}", build_report(&outcome.rows, &[], &[])?.render());
    Ok(())
}
