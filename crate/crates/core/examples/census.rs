//! Parameter counts of BERT-base with intermediate blocks kept after every
//! n-th self-attention block.
//!
//! ```text
//! cargo run --example census
//! ```

use elision::model::{census, intermediate_block_params, Elision, ModelConfig};

fn main() -> elision::Result<()> {
    let base = census(&ModelConfig::bert_base(Elision::UNMODIFIED));
    let unit = intermediate_block_params(768, 3072);
    println!("one intermediate block: {unit} parameters\n");
    println!("{:<5} {:>12} {:>9} {:>14}", "n", "total", "decrease", "vs n=inf");
    let floor = census(&ModelConfig::bert_base(Elision::Infinity)).total();
    for n in Elision::parse_list("1,2,3,4,6,inf")? {
        let c = census(&ModelConfig::bert_base(n));
        println!(
            "{:<5} {:>12} {:>8.2}x {:>14}",
            n.to_string(),
            c.total(),
            c.size_decrease_vs(&base),
            format!("+{} blocks", (c.total() - floor) / unit)
        );
    }
    Ok(())
}
