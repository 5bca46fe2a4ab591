use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// How often an intermediate block follows a self-attention block.
///
/// `Every(1)` is the unmodified encoder; `Infinity` drops every
/// intermediate block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Elision {
    Every(usize),
    Infinity,
}

impl Elision {
    pub const UNMODIFIED: Elision = Elision::Every(1);

    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("elision factor n must be at least 1".into()));
        }
        Ok(Elision::Every(n))
    }

    /// Number of intermediate blocks among `m` self-attention blocks.
    pub fn intermediate_count(self, m: usize) -> usize {
        match self {
            Elision::Every(n) => m / n,
            Elision::Infinity => 0,
        }
    }

    /// Whether an intermediate block follows the self-attention block at
    /// 0-based position `index`.
    pub fn follows(self, index: usize) -> bool {
        match self {
            Elision::Every(n) => (index + 1) % n == 0,
            Elision::Infinity => false,
        }
    }

    pub fn is_unmodified(self) -> bool {
        self == Elision::UNMODIFIED
    }

    /// Parses a comma-separated list such as `1,2,3,inf`.
    pub fn parse_list(s: &str) -> Result<Vec<Elision>> {
        s.split(',').map(|p| p.trim().parse()).collect()
    }
}

impl fmt::Display for Elision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Elision::Every(n) => write!(f, "{n}"),
            Elision::Infinity => f.write_str("inf"),
        }
    }
}

impl FromStr for Elision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(Elision::Infinity),
            other => {
                let n: usize = other
                    .parse()
                    .map_err(|_| Error::Parameter(format!("invalid elision factor {other:?}; expected a positive integer or `inf`")))?;
                Elision::new(n)
            }
        }
    }
}

impl Serialize for Elision {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Elision::Every(n) => s.serialize_u64(*n as u64),
            Elision::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Elision {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Int(n) => Elision::new(n as usize),
            Raw::Str(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MlmHead {
    /// Decoder shares the word-embedding matrix.
    Tied,
    Untied,
}

/// Architectural hyper-parameters; the single source of truth for layout,
/// parameter names and census.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of self-attention blocks.
    pub m: usize,
    /// Elision factor.
    pub n: Elision,
    pub hidden: usize,
    pub heads: usize,
    /// Intermediate width.
    pub ff: usize,
    pub vocab: usize,
    pub max_positions: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab: usize,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    #[serde(default = "default_true")]
    pub include_pooler: bool,
    #[serde(default = "default_mlm_head")]
    pub mlm_head: MlmHead,
}

fn default_type_vocab() -> usize {
    2
}
fn default_dropout() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}
fn default_mlm_head() -> MlmHead {
    MlmHead::Tied
}

pub const LAYER_NORM_EPS: f64 = 1e-12;

impl ModelConfig {
    /// BERT-base dimensions with elision factor `n`.
    pub fn bert_base(n: Elision) -> Self {
        ModelConfig {
            m: 12,
            n,
            hidden: 768,
            heads: 12,
            ff: 3072,
            vocab: 30522,
            max_positions: 512,
            type_vocab: 2,
            dropout_p: 0.1,
            include_pooler: true,
            mlm_head: MlmHead::Tied,
        }
    }

    /// Small desk-scale encoder used by the experiments.
    pub fn toy(vocab: usize, n: Elision) -> Self {
        ModelConfig {
            m: 4,
            n,
            hidden: 64,
            heads: 4,
            ff: 256,
            vocab,
            max_positions: 64,
            type_vocab: 2,
            dropout_p: 0.1,
            include_pooler: true,
            mlm_head: MlmHead::Tied,
        }
    }

    pub fn with_n(&self, n: Elision) -> Self {
        ModelConfig { n, ..self.clone() }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("m", self.m),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("ff", self.ff),
            ("vocab", self.vocab),
            ("max_positions", self.max_positions),
            ("type_vocab", self.type_vocab),
        ];
        for (name, v) in extents {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be positive")));
            }
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Parameter(format!(
                "hidden ({}) must be divisible by heads ({})",
                self.hidden, self.heads
            )));
        }
        if let Elision::Every(0) = self.n {
            return Err(Error::Parameter("elision factor n must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Parameter(format!("dropout_p must be in [0, 1), got {}", self.dropout_p)));
        }
        Ok(())
    }
}
