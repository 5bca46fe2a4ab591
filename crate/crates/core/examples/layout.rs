//! Block sequences for a few elision factors.
//!
//! ```text
//! cargo run --example layout -- 12
//! ```

use elision::model::{build_layout, Elision};

fn main() -> elision::Result<()> {
    let m: usize = std::env::args().nth(1).map_or(Ok(12), |s| s.parse()).expect("m must be an integer");
    for n in [1, 2, 3, 5].into_iter().map(Elision::Every).chain([Elision::Infinity]) {
        if matches!(n, Elision::Every(k) if k > m) {
            continue;
        }
        let layout = build_layout(m, n)?;
        println!("n={:<4} {:>2} intermediate  {}", n.to_string(), layout.intermediate_count(), layout.render());
    }
    Ok(())
}
