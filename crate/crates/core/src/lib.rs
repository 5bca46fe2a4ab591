//! Intermediate-block elision laboratory.
//!
//! A BERT-style encoder whose feed-forward ("intermediate") blocks appear
//! only after every `n`-th self-attention block, together with the tools to
//! study it: a closed-form parameter census, masked-LM pre-training and
//! fine-tuning, post-hoc block removal, linear CKA over self-attention
//! activations, an attention-based dependency probe and a throughput bench.
//!
//! Runnable walkthroughs live in `examples/`; the `elision` binary exposes
//! every experiment on the command line.

pub mod autodiff;
pub mod bench;
pub mod checkpoint;
pub mod cka;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod fsutil;
pub mod model;
pub mod probe;
pub mod report;
pub mod rng;
pub mod surgery;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DType, Float, Tensor};
