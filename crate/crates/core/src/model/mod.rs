//! The configurable encoder: config, block layout, census and forward pass.

pub mod census;
pub mod config;
pub mod encoder;
pub mod layout;

pub use census::{attention_block_params, census, intermediate_block_params, ParameterCensus};
pub use config::{Elision, MlmHead, ModelConfig};
pub use encoder::{
    encoder_forward, init_parameters, intermediate_block, mlm_logits, pooled, select_rows,
    self_attention_block, BoundParams, EncoderInput, EncoderModel, EncoderOutput,
};
pub use layout::{build_layout, BlockKind, BlockLayout, Stage};
