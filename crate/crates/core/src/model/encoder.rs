//! Parameters and forward pass of the encoder.
//!
//! Post-norm blocks throughout: each sublayer is followed by dropout, a
//! residual add and a layer norm. An elided intermediate block is simply
//! absent; the preceding attention block's own norm stays in place.

use std::collections::{BTreeMap, HashMap};

use rand_distr::{Distribution, StandardNormal};

use super::config::{MlmHead, ModelConfig, LAYER_NORM_EPS};
use super::layout::{build_layout, BlockLayout};
use crate::autodiff::{Graph, Mode, Var};
use crate::error::{Error, Result};
use crate::rng::{purpose, substream, Rng};
use crate::tensor::{Float, Tensor};

/// Standard deviation of weights and embeddings at initialization.
pub const INIT_STD: f64 = 0.02;

/// Standard deviation of a unit normal truncated to [-2, 2].
const UNIT_TRUNCATED_STD: f64 = 0.879_625_661_034_239_8;

/// Value used to mask attention scores at padded key positions.
const MASKED_SCORE: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Truncated normal, cut at two underlying standard deviations and
    /// rescaled to standard deviation [`INIT_STD`].
    Normal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(name: String, shape: Vec<usize>, init: Init) -> ParamSpec {
    ParamSpec { name, shape, init }
}

fn linear_specs(out: &mut Vec<ParamSpec>, prefix: &str, fan_in: usize, fan_out: usize) {
    out.push(spec(format!("{prefix}.weight"), vec![fan_in, fan_out], Init::Normal));
    out.push(spec(format!("{prefix}.bias"), vec![fan_out], Init::Zeros));
}

fn norm_specs(out: &mut Vec<ParamSpec>, prefix: &str, width: usize) {
    out.push(spec(format!("{prefix}.gain"), vec![width], Init::Ones));
    out.push(spec(format!("{prefix}.bias"), vec![width], Init::Zeros));
}

pub fn attention_prefix(index: usize) -> String {
    format!("attention.{index}")
}

/// Parameters of the intermediate block following attention block `index`.
pub fn intermediate_prefix(index: usize) -> String {
    format!("intermediate.{index}")
}

pub fn intermediate_param_names(index: usize) -> Vec<String> {
    let p = intermediate_prefix(index);
    ["up.weight", "up.bias", "down.weight", "down.bias", "norm.gain", "norm.bias"]
        .iter()
        .map(|s| format!("{p}.{s}"))
        .collect()
}

/// Every parameter of the encoder in canonical order.
pub fn param_specs(config: &ModelConfig, layout: &BlockLayout) -> Vec<ParamSpec> {
    let h = config.hidden;
    let mut out = vec![
        spec("embeddings.word".into(), vec![config.vocab, h], Init::Normal),
        spec("embeddings.position".into(), vec![config.max_positions, h], Init::Normal),
        spec("embeddings.segment".into(), vec![config.type_vocab, h], Init::Normal),
    ];
    norm_specs(&mut out, "embeddings.norm", h);
    for stage in layout.stages() {
        let p = attention_prefix(stage.attention);
        for proj in ["query", "key", "value", "output"] {
            linear_specs(&mut out, &format!("{p}.{proj}"), h, h);
        }
        norm_specs(&mut out, &format!("{p}.norm"), h);
        if stage.intermediate {
            let p = intermediate_prefix(stage.attention);
            linear_specs(&mut out, &format!("{p}.up"), h, config.ff);
            linear_specs(&mut out, &format!("{p}.down"), config.ff, h);
            norm_specs(&mut out, &format!("{p}.norm"), h);
        }
    }
    if config.include_pooler {
        linear_specs(&mut out, "pooler", h, h);
    }
    linear_specs(&mut out, "mlm.transform", h, h);
    norm_specs(&mut out, "mlm.norm", h);
    if config.mlm_head == MlmHead::Untied {
        out.push(spec("mlm.decoder.weight".into(), vec![config.vocab, h], Init::Normal));
    }
    out.push(spec("mlm.decoder.bias".into(), vec![config.vocab], Init::Zeros));
    out
}

pub(crate) fn sample_init<T: Float>(init: Init, shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::full(shape, T::one()),
        Init::Normal => {
            let n: usize = shape.iter().product();
            let scale = INIT_STD / UNIT_TRUNCATED_STD;
            let data = (0..n)
                .map(|_| loop {
                    let z: f64 = StandardNormal.sample(rng);
                    if z.abs() <= 2.0 {
                        break T::from_f64_lossy(z * scale);
                    }
                })
                .collect();
            Tensor::from_parts(shape.to_vec(), data)
        }
    }
}

/// The encoder: configuration, layout and named parameters.
#[derive(Debug, Clone)]
pub struct EncoderModel<T: Float> {
    config: ModelConfig,
    layout: BlockLayout,
    params: BTreeMap<String, Tensor<T>>,
}

/// Random initialization, fully determined by `seed`.
pub fn init_parameters<T: Float>(config: &ModelConfig, layout: &BlockLayout, seed: u64) -> Result<EncoderModel<T>> {
    config.validate()?;
    check_layout(config, layout)?;
    let mut rng = substream(seed, purpose::INIT);
    let params = param_specs(config, layout)
        .into_iter()
        .map(|s| {
            let t = sample_init(s.init, &s.shape, &mut rng);
            (s.name, t)
        })
        .collect();
    Ok(EncoderModel {
        config: config.clone(),
        layout: layout.clone(),
        params,
    })
}

fn check_layout(config: &ModelConfig, layout: &BlockLayout) -> Result<()> {
    let expected = build_layout(config.m, config.n)?;
    if &expected != layout {
        return Err(Error::Integrity(format!(
            "layout [{}] does not match config (m={}, n={}) which requires [{}]",
            layout.render(),
            config.m,
            config.n,
            expected.render()
        )));
    }
    Ok(())
}

impl<T: Float> EncoderModel<T> {
    /// Fresh model with the layout implied by `config`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let layout = build_layout(config.m, config.n)?;
        init_parameters(config, &layout, seed)
    }

    /// Assembles a model from named tensors, checking that the name set and
    /// every shape are exactly those implied by `(config, layout)`.
    pub fn from_params(
        config: ModelConfig,
        layout: BlockLayout,
        mut params: BTreeMap<String, Tensor<T>>,
    ) -> Result<Self> {
        config.validate()?;
        check_layout(&config, &layout)?;
        let specs = param_specs(&config, &layout);
        if specs.len() != params.len() {
            let expected: std::collections::BTreeSet<_> = specs.iter().map(|s| s.name.as_str()).collect();
            let extra: Vec<_> = params.keys().filter(|k| !expected.contains(k.as_str())).collect();
            return Err(Error::Integrity(format!(
                "expected {} parameters, found {} (unexpected: {extra:?})",
                specs.len(),
                params.len()
            )));
        }
        let mut ordered = BTreeMap::new();
        for s in specs {
            let t = params
                .remove(&s.name)
                .ok_or_else(|| Error::Integrity(format!("missing parameter {}", s.name)))?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Integrity(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
            if !t.all_finite() {
                return Err(Error::NonFinite(format!("parameter {}", s.name)));
            }
            ordered.insert(s.name, t);
        }
        Ok(EncoderModel {
            config,
            layout,
            params: ordered,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    /// Mutable access for optimizers. Shapes must be preserved.
    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.params.iter_mut()
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor<T>> {
        self.params
    }

    pub fn parameter_count(&self) -> u64 {
        self.params.values().map(|t| t.len() as u64).sum()
    }

    /// Parameter names in canonical order.
    pub fn names(&self) -> Vec<String> {
        param_specs(&self.config, &self.layout).into_iter().map(|s| s.name).collect()
    }

    /// Registers every parameter on `graph`, as gradient-receiving leaves
    /// when `trainable`.
    pub fn bind<'g>(&self, graph: &'g Graph<T>, trainable: bool) -> BoundParams<'g, T> {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }

    /// Full forward pass; returns the bound parameters alongside the outputs
    /// so callers can fetch gradients.
    pub fn forward<'g>(
        &self,
        graph: &'g Graph<T>,
        input: &EncoderInput,
        mode: Mode,
        trainable: bool,
        rng: &mut Rng,
    ) -> Result<(BoundParams<'g, T>, EncoderOutput<'g, T>)> {
        let params = self.bind(graph, trainable);
        let out = encoder_forward(&self.config, &self.layout, &params, input, mode, rng)?;
        Ok((params, out))
    }
}

/// Parameter leaves registered on one graph.
pub struct BoundParams<'g, T: Float> {
    vars: HashMap<String, Var<'g, T>>,
}

impl<'g, T: Float> BoundParams<'g, T> {
    pub fn from_vars(names: &[String], vars: &[Var<'g, T>]) -> Self {
        BoundParams {
            vars: names.iter().cloned().zip(vars.iter().copied()).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var<'g, T>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Integrity(format!("parameter {name} is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<'g, T>)> {
        self.vars.iter()
    }
}

/// A padded batch of token sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput {
    pub batch: usize,
    pub seq: usize,
    /// `batch × seq` token ids, row-major.
    pub tokens: Vec<usize>,
    pub segments: Vec<usize>,
    /// `true` for real tokens, `false` for padding.
    pub attention_mask: Vec<bool>,
}

impl EncoderInput {
    /// Pads `rows` to the longest row with `pad`. Segment ids default to 0.
    pub fn from_rows(rows: &[Vec<usize>], pad: usize) -> Result<Self> {
        let seq = rows.iter().map(Vec::len).max().unwrap_or(0);
        if rows.is_empty() || seq == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        let mut tokens = Vec::with_capacity(rows.len() * seq);
        let mut attention_mask = Vec::with_capacity(rows.len() * seq);
        for r in rows {
            tokens.extend(r.iter().copied().chain(std::iter::repeat(pad)).take(seq));
            attention_mask.extend((0..seq).map(|i| i < r.len()));
        }
        Ok(EncoderInput {
            batch: rows.len(),
            seq,
            segments: vec![0; tokens.len()],
            tokens,
            attention_mask,
        })
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let n = self.batch * self.seq;
        if n == 0 || self.tokens.len() != n || self.segments.len() != n || self.attention_mask.len() != n {
            return Err(Error::Input(format!(
                "batch {}×{} inconsistent with {} tokens / {} segments / {} mask entries",
                self.batch,
                self.seq,
                self.tokens.len(),
                self.segments.len(),
                self.attention_mask.len()
            )));
        }
        if self.seq > config.max_positions {
            return Err(Error::Input(format!(
                "sequence length {} exceeds max_positions {}",
                self.seq, config.max_positions
            )));
        }
        if let Some(&t) = self.tokens.iter().find(|&&t| t >= config.vocab) {
            return Err(Error::Input(format!("token id {t} out of range for vocab {}", config.vocab)));
        }
        if let Some(&s) = self.segments.iter().find(|&&s| s >= config.type_vocab) {
            return Err(Error::Input(format!("segment id {s} out of range for {}", config.type_vocab)));
        }
        Ok(())
    }

    pub fn real_tokens(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m).count()
    }
}

pub struct EncoderOutput<'g, T: Float> {
    /// Final hidden states `[batch, seq, hidden]`.
    pub hidden: Var<'g, T>,
    /// Output of every self-attention block (after its residual and norm),
    /// in block order; `m` entries of `[batch, seq, hidden]`.
    pub attention_outputs: Vec<Var<'g, T>>,
    /// Attention probabilities of every self-attention block,
    /// `[batch, heads, seq, seq]`.
    pub attention_probs: Vec<Var<'g, T>>,
}

fn linear<'g, T: Float>(x: Var<'g, T>, params: &BoundParams<'g, T>, prefix: &str) -> Result<Var<'g, T>> {
    x.matmul(params.get(&format!("{prefix}.weight"))?)?
        .add(params.get(&format!("{prefix}.bias"))?)
}

fn norm<'g, T: Float>(x: Var<'g, T>, params: &BoundParams<'g, T>, prefix: &str) -> Result<Var<'g, T>> {
    x.layer_norm(
        params.get(&format!("{prefix}.gain"))?,
        params.get(&format!("{prefix}.bias"))?,
        T::from_f64_lossy(LAYER_NORM_EPS),
    )
}

fn check_hidden<T: Float>(x: &Var<'_, T>, config: &ModelConfig, op: &'static str) -> Result<(usize, usize)> {
    let shape = x.shape();
    if shape.len() != 3 || shape[2] != config.hidden {
        return Err(Error::dim(op, &shape, &[0, 0, config.hidden]));
    }
    Ok((shape[0], shape[1]))
}

/// Multi-head scaled dot-product attention, output projection, dropout,
/// residual add and layer norm. Returns the block output and the attention
/// probabilities.
///
/// `padding` has `batch × seq` entries, `true` at padded positions.
#[allow(clippy::too_many_arguments)]
pub fn self_attention_block<'g, T: Float>(
    x: Var<'g, T>,
    padding: &[bool],
    params: &BoundParams<'g, T>,
    index: usize,
    config: &ModelConfig,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Var<'g, T>, Var<'g, T>)> {
    let (b, s) = check_hidden(&x, config, "self_attention")?;
    if padding.len() != b * s {
        return Err(Error::dim("self_attention mask", &[b, s], &[padding.len()]));
    }
    let (h, d) = (config.heads, config.head_dim());
    let p = attention_prefix(index);
    let split = |v: Var<'g, T>| v.reshape(&[b, s, h, d])?.permute(&[0, 2, 1, 3]);
    let q = split(linear(x, params, &format!("{p}.query"))?)?;
    let k = split(linear(x, params, &format!("{p}.key"))?)?;
    let v = split(linear(x, params, &format!("{p}.value"))?)?;
    let scale = T::from_f64_lossy(1.0 / (d as f64).sqrt());
    let scores = q
        .matmul_nt(k)?
        .scale(scale)?
        .masked_fill(padding, &[b, 1, 1, s], T::from_f64_lossy(MASKED_SCORE))?;
    let probs = scores.softmax(3)?;
    let context = probs.matmul(v)?.permute(&[0, 2, 1, 3])?.reshape(&[b, s, config.hidden])?;
    let out = linear(context, params, &format!("{p}.output"))?
        .dropout(config.dropout_p, mode, rng)?
        .add(x)?;
    Ok((norm(out, params, &format!("{p}.norm"))?, probs))
}

/// Linear, GELU, linear, dropout, residual add, layer norm.
pub fn intermediate_block<'g, T: Float>(
    x: Var<'g, T>,
    params: &BoundParams<'g, T>,
    index: usize,
    config: &ModelConfig,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Var<'g, T>> {
    check_hidden(&x, config, "intermediate")?;
    let p = intermediate_prefix(index);
    let up = linear(x, params, &format!("{p}.up"))?.gelu()?;
    let out = linear(up, params, &format!("{p}.down"))?
        .dropout(config.dropout_p, mode, rng)?
        .add(x)?;
    norm(out, params, &format!("{p}.norm"))
}

/// Embeds the input and applies the blocks in layout order.
pub fn encoder_forward<'g, T: Float>(
    config: &ModelConfig,
    layout: &BlockLayout,
    params: &BoundParams<'g, T>,
    input: &EncoderInput,
    mode: Mode,
    rng: &mut Rng,
) -> Result<EncoderOutput<'g, T>> {
    input.validate(config)?;
    let (b, s) = (input.batch, input.seq);
    let positions: Vec<usize> = (0..s).collect();
    let words = params.get("embeddings.word")?.gather(&input.tokens, &[b, s])?;
    let pos = params.get("embeddings.position")?.gather(&positions, &[s])?;
    let seg = params.get("embeddings.segment")?.gather(&input.segments, &[b, s])?;
    let mut x = norm(words.add(pos)?.add(seg)?, params, "embeddings.norm")?.dropout(config.dropout_p, mode, rng)?;

    let padding: Vec<bool> = input.attention_mask.iter().map(|&m| !m).collect();
    let mut attention_outputs = Vec::with_capacity(config.m);
    let mut attention_probs = Vec::with_capacity(config.m);
    for stage in layout.stages() {
        let (out, probs) = self_attention_block(x, &padding, params, stage.attention, config, mode, rng)?;
        attention_outputs.push(out);
        attention_probs.push(probs);
        x = out;
        if stage.intermediate {
            x = intermediate_block(x, params, stage.attention, config, mode, rng)?;
        }
    }
    Ok(EncoderOutput {
        hidden: x,
        attention_outputs,
        attention_probs,
    })
}

/// Rows of `hidden` (flattened to `[batch·seq, hidden]`) at `positions`.
pub fn select_rows<'g, T: Float>(hidden: Var<'g, T>, positions: &[usize]) -> Result<Var<'g, T>> {
    let shape = hidden.shape();
    let width = *shape.last().unwrap();
    let rows = hidden.reshape(&[shape.iter().product::<usize>() / width, width])?;
    rows.gather(positions, &[positions.len()])
}

/// Masked-LM vocabulary logits at flattened `positions`: `[k, vocab]`.
pub fn mlm_logits<'g, T: Float>(
    config: &ModelConfig,
    params: &BoundParams<'g, T>,
    hidden: Var<'g, T>,
    positions: &[usize],
) -> Result<Var<'g, T>> {
    let rows = select_rows(hidden, positions)?;
    let t = norm(linear(rows, params, "mlm.transform")?.gelu()?, params, "mlm.norm")?;
    let decoder = match config.mlm_head {
        MlmHead::Tied => params.get("embeddings.word")?,
        MlmHead::Untied => params.get("mlm.decoder.weight")?,
    };
    t.matmul_nt(decoder)?.add(params.get("mlm.decoder.bias")?)
}

/// Sentence vector from the first (CLS) position, through the pooler when
/// the config has one: `[batch, hidden]`.
pub fn pooled<'g, T: Float>(
    config: &ModelConfig,
    params: &BoundParams<'g, T>,
    hidden: Var<'g, T>,
) -> Result<Var<'g, T>> {
    let shape = hidden.shape();
    let (b, s) = (shape[0], shape[1]);
    let cls: Vec<usize> = (0..b).map(|i| i * s).collect();
    let rows = select_rows(hidden, &cls)?;
    if config.include_pooler {
        linear(rows, params, "pooler")?.tanh()
    } else {
        Ok(rows)
    }
}
