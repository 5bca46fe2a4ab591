//! Closed-form parameter counts.
//!
//! Accounting: embeddings (word, position, segment, layer norm), every
//! self-attention and intermediate block, the pooler when enabled, and the
//! masked-LM head (transform dense + layer norm + decoder bias; the decoder
//! matrix only when untied).

use serde::{Deserialize, Serialize};

use super::config::{MlmHead, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCensus {
    pub embeddings: u64,
    pub attention: u64,
    pub intermediate: u64,
    pub pooler: u64,
    pub head: u64,
}

impl ParameterCensus {
    pub fn total(&self) -> u64 {
        self.embeddings + self.attention + self.intermediate + self.pooler + self.head
    }

    /// Size ratio of `baseline` to `self` (e.g. 1.52 for n = 3 at BERT-base).
    pub fn size_decrease_vs(&self, baseline: &ParameterCensus) -> f64 {
        baseline.total() as f64 / self.total() as f64
    }
}

/// Two linear layers with biases plus the trailing layer norm.
pub fn intermediate_block_params(hidden: usize, ff: usize) -> u64 {
    let (h, f) = (hidden as u64, ff as u64);
    h * f + f + f * h + h + 2 * h
}

/// Q, K, V and output projections with biases plus the layer norm.
pub fn attention_block_params(hidden: usize) -> u64 {
    let h = hidden as u64;
    4 * (h * h + h) + 2 * h
}

pub fn census(config: &ModelConfig) -> ParameterCensus {
    let h = config.hidden as u64;
    let embeddings = (config.vocab + config.max_positions + config.type_vocab) as u64 * h + 2 * h;
    let attention = config.m as u64 * attention_block_params(config.hidden);
    let intermediate =
        config.n.intermediate_count(config.m) as u64 * intermediate_block_params(config.hidden, config.ff);
    let pooler = if config.include_pooler { h * h + h } else { 0 };
    let decoder = match config.mlm_head {
        MlmHead::Tied => 0,
        MlmHead::Untied => config.vocab as u64 * h,
    };
    let head = (h * h + h) + 2 * h + config.vocab as u64 + decoder;
    ParameterCensus {
        embeddings,
        attention,
        intermediate,
        pooler,
        head,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Elision;

    #[test]
    fn intermediate_unit_cost_at_bert_base() {
        // 2·768·3072 + 3072 + 768 + 2·768
        assert_eq!(intermediate_block_params(768, 3072), 4_723_968);
    }

    #[test]
    fn bert_base_totals() {
        // frozen from direct evaluation of the closed form
        let expect = [
            (Elision::Every(1), 110_104_890u64),
            (Elision::Every(2), 81_761_082),
            (Elision::Every(3), 72_313_146),
            (Elision::Every(4), 67_589_178),
            (Elision::Every(6), 62_865_210),
            (Elision::Infinity, 53_417_274),
        ];
        for (n, total) in expect {
            assert_eq!(census(&ModelConfig::bert_base(n)).total(), total, "n={n}");
        }
    }

    #[test]
    fn untied_head_adds_decoder() {
        let mut c = ModelConfig::bert_base(Elision::Every(1));
        let tied = census(&c).total();
        c.mlm_head = MlmHead::Untied;
        assert_eq!(census(&c).total() - tied, 30522 * 768);
    }
}
