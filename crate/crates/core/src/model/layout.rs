use serde::{Deserialize, Serialize};

use super::config::Elision;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    SelfAttention,
    Intermediate,
}

/// Ordered sequence of blocks of an encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockLayout {
    blocks: Vec<BlockKind>,
}

/// One step of a layout walk: the attention block index, plus whether an
/// intermediate block follows it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub attention: usize,
    pub intermediate: bool,
}

/// Layout with `m` self-attention blocks and an intermediate block after
/// every `n`-th of them.
pub fn build_layout(m: usize, n: Elision) -> Result<BlockLayout> {
    if m == 0 {
        return Err(Error::Parameter("m must be at least 1".into()));
    }
    if let Elision::Every(0) = n {
        return Err(Error::Parameter("elision factor n must be at least 1".into()));
    }
    let mut blocks = Vec::with_capacity(m + n.intermediate_count(m));
    for i in 0..m {
        blocks.push(BlockKind::SelfAttention);
        if n.follows(i) {
            blocks.push(BlockKind::Intermediate);
        }
    }
    Ok(BlockLayout { blocks })
}

impl BlockLayout {
    pub fn from_blocks(blocks: Vec<BlockKind>) -> Result<Self> {
        if blocks.first() != Some(&BlockKind::SelfAttention) {
            return Err(Error::Parameter("layout must start with a self-attention block".into()));
        }
        if blocks
            .windows(2)
            .any(|w| w[0] == BlockKind::Intermediate && w[1] == BlockKind::Intermediate)
        {
            return Err(Error::Parameter("layout has two adjacent intermediate blocks".into()));
        }
        Ok(BlockLayout { blocks })
    }

    pub fn blocks(&self) -> &[BlockKind] {
        &self.blocks
    }

    pub fn attention_count(&self) -> usize {
        self.blocks.iter().filter(|&&b| b == BlockKind::SelfAttention).count()
    }

    pub fn intermediate_count(&self) -> usize {
        self.blocks.len() - self.attention_count()
    }

    /// 0-based indices of the attention blocks that an intermediate block
    /// follows. Intermediate parameters are named after these indices.
    pub fn intermediate_positions(&self) -> Vec<usize> {
        self.stages()
            .filter(|s| s.intermediate)
            .map(|s| s.attention)
            .collect()
    }

    pub fn stages(&self) -> impl Iterator<Item = Stage> + '_ {
        let mut attention = 0usize;
        let mut out = Vec::with_capacity(self.attention_count());
        for (i, b) in self.blocks.iter().enumerate() {
            if *b == BlockKind::SelfAttention {
                let intermediate = self.blocks.get(i + 1) == Some(&BlockKind::Intermediate);
                out.push(Stage {
                    attention,
                    intermediate,
                });
                attention += 1;
            }
        }
        out.into_iter()
    }

    /// Compact rendering, e.g. `A A I A A I`.
    pub fn render(&self) -> String {
        self.blocks
            .iter()
            .map(|b| match b {
                BlockKind::SelfAttention => "A",
                BlockKind::Intermediate => "I",
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}
