//! Throughput of the toy encoder across elision factors.
//!
//! ```text
//! cargo run --release --example bench
//! ```

use elision::bench::{bench, BenchSettings};
use elision::model::{Elision, ModelConfig};

fn main() -> elision::Result<()> {
    let settings = BenchSettings {
        batch: 4,
        seq: 32,
        rounds: 2,
        ..BenchSettings::default()
    };
    let ns = Elision::parse_list("1,2,4,inf")?;
    for r in bench(&ModelConfig::toy(256, Elision::UNMODIFIED), &ns, &settings)? {
        println!(
            "n={:<4} train {:>8.0} tok/s ({:.2}x)  forward {:>8.0} tok/s ({:.2}x)",
            r.n, r.train_tok_s, r.relative_train, r.forward_tok_s, r.relative_forward
        );
    }
    Ok(())
}
