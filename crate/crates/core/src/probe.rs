//! Attention-based probe for syntactic heads.
//!
//! For word `i` the probe scores every other word `j` by a nonnegative
//! mixture of the frozen encoder's attention in both directions,
//! `s(i,j) = Σ_c w_c α_c(i,j) + Σ_c w'_c α_c(j,i)`, optionally reweighted by
//! a bilinear term over word embeddings learned with the probe:
//! `p(j | i) ∝ s(i,j) · exp(e_iᵀ W e_j)`. Without the bilinear term this is
//! the mixture renormalized over `j ≠ i`.

use std::collections::HashMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mode};
use crate::corpus::{DependencyCorpus, Vocabulary, CLS, PAD, SEP};
use crate::error::{Error, Result};
use crate::model::{EncoderInput, EncoderModel};
use crate::rng::{purpose, substream};
use crate::tensor::{Float, Tensor};
use crate::train::AdamW;

/// Keeps `log s` finite when every mixed attention weight underflows.
const SCORE_FLOOR: f64 = 1e-12;

/// Attention maps of one sentence, framed as `[CLS] words [SEP]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProfile {
    /// Word ids without the framing tokens.
    pub words: Vec<usize>,
    /// Number of maps: attention blocks × heads.
    pub maps: usize,
    /// `maps × seq × seq` probabilities, `seq = words + 2`.
    pub attention: Vec<f64>,
}

impl AttentionProfile {
    pub fn seq(&self) -> usize {
        self.words.len() + 2
    }

    /// Attention of map `k` from word `i` to word `j` (0-based words).
    pub fn alpha(&self, k: usize, i: usize, j: usize) -> f64 {
        let s = self.seq();
        self.attention[(k * s + i + 1) * s + j + 1]
    }
}

const EXTRACT_BATCH: usize = 32;

/// Captures every self-attention map of the frozen `model` for each
/// sentence of word ids.
pub fn extract_attention<T: Float>(model: &EncoderModel<T>, sentences: &[Vec<usize>]) -> Result<Vec<AttentionProfile>> {
    if sentences.iter().any(Vec::is_empty) {
        return Err(Error::Input("cannot probe an empty sentence".into()));
    }
    let heads = model.config().heads;
    let mut out = Vec::with_capacity(sentences.len());
    let mut rng = substream(0, purpose::DROPOUT);
    for chunk in sentences.chunks(EXTRACT_BATCH) {
        let rows: Vec<Vec<usize>> = chunk
            .iter()
            .map(|w| std::iter::once(CLS).chain(w.iter().copied()).chain([SEP]).collect())
            .collect();
        let input = EncoderInput::from_rows(&rows, PAD)?;
        let graph = Graph::new();
        let (_, fwd) = model.forward(&graph, &input, Mode::Eval, false, &mut rng)?;
        let probs: Vec<Tensor<T>> = fwd.attention_probs.iter().map(|p| p.value()).collect();
        let padded = input.seq;
        for (b, words) in chunk.iter().enumerate() {
            let s = words.len() + 2;
            let mut attention = Vec::with_capacity(probs.len() * heads * s * s);
            for p in &probs {
                let data = p.data();
                for h in 0..heads {
                    for i in 0..s {
                        let row = ((b * heads + h) * padded + i) * padded;
                        attention.extend(data[row..row + s].iter().map(|v| v.to_f64_lossy()));
                    }
                }
            }
            out.push(AttentionProfile {
                words: words.clone(),
                maps: probs.len() * heads,
                attention,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeParams {
    /// Full-batch optimizer steps.
    pub epochs: usize,
    pub lr: f64,
    /// Width of the learned word embeddings; `None` disables the bilinear
    /// term.
    pub embedding_dim: Option<usize>,
    /// Share of the treebank used for training; the rest is held out.
    pub train_fraction: f64,
}

impl Default for ProbeParams {
    fn default() -> Self {
        ProbeParams {
            epochs: 150,
            lr: 0.05,
            embedding_dim: Some(16),
            train_fraction: 0.8,
        }
    }
}

impl ProbeParams {
    pub fn variant(&self) -> &'static str {
        if self.embedding_dim.is_some() {
            "attn+emb"
        } else {
            "attn"
        }
    }
}

const MIXING: &str = "probe.mixing";
const EMBEDDINGS: &str = "probe.embeddings";
const BILINEAR: &str = "probe.bilinear";

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    /// Attention maps per direction.
    pub maps: usize,
    /// `MIXING` (`2 × maps` unconstrained scores: forward maps then
    /// reverse maps) and, with the bilinear term, `EMBEDDINGS`
    /// (`vocab × d`) and `BILINEAR` (`d × d`).
    pub params: HashMap<String, Tensor<f64>>,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ProbeModel {
    /// Uniform mixing weights; embeddings drawn from `seed`, bilinear
    /// matrix zero.
    pub fn init(maps: usize, vocab: usize, params: &ProbeParams, seed: u64) -> Result<Self> {
        if maps == 0 {
            return Err(Error::Input("probe needs at least one attention map".into()));
        }
        let mut p = HashMap::new();
        p.insert(MIXING.to_string(), Tensor::zeros(&[2 * maps]));
        if let Some(d) = params.embedding_dim {
            if d == 0 {
                return Err(Error::Parameter("embedding_dim must be positive".into()));
            }
            let mut rng = substream(seed, purpose::PROBE);
            let normal = Normal::new(0.0, 0.1).expect("valid normal");
            let table = (0..vocab * d).map(|_| normal.sample(&mut rng)).collect();
            p.insert(EMBEDDINGS.to_string(), Tensor::new(vec![vocab, d], table)?);
            p.insert(BILINEAR.to_string(), Tensor::zeros(&[d, d]));
        }
        Ok(ProbeModel { maps, params: p })
    }

    /// Mixing weights after softplus and normalization; sums to 1.
    pub fn mixing_weights(&self) -> Vec<f64> {
        let raw = self.params[MIXING].data();
        let sp: Vec<f64> = raw.iter().map(|&r| softplus(r)).collect();
        let total: f64 = sp.iter().sum();
        sp.iter().map(|v| v / total).collect()
    }

    fn bilinear(&self) -> Option<(usize, &[f64], &[f64])> {
        let e = self.params.get(EMBEDDINGS)?;
        Some((e.shape()[1], e.data(), self.params[BILINEAR].data()))
    }
}

/// Mixed attention score `s(i,j)` and bilinear term `b(i,j)` for all pairs.
fn scores(profile: &AttentionProfile, probe: &ProbeModel, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if profile.maps != probe.maps {
        return Err(Error::Input(format!(
            "probe expects {} attention maps, profile has {}",
            probe.maps, profile.maps
        )));
    }
    let n = profile.words.len();
    let k = probe.maps;
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s[i * n + j] = (0..k).map(|c| w[c] * profile.alpha(c, i, j) + w[k + c] * profile.alpha(c, j, i)).sum();
            }
        }
    }
    let mut b = vec![0.0; n * n];
    if let Some((d, table, mat)) = probe.bilinear() {
        let vocab = table.len() / d;
        if let Some(&bad) = profile.words.iter().find(|&&t| t >= vocab) {
            return Err(Error::Input(format!("word id {bad} outside the probe's {vocab}-word table")));
        }
        let emb = |t: usize| &table[t * d..(t + 1) * d];
        for i in 0..n {
            let ei = emb(profile.words[i]);
            // (e_iᵀ W) once per row
            let row: Vec<f64> = (0..d).map(|c| (0..d).map(|r| ei[r] * mat[r * d + c]).sum()).collect();
            for j in 0..n {
                if i != j {
                    b[i * n + j] = row.iter().zip(emb(profile.words[j])).map(|(x, y)| x * y).sum();
                }
            }
        }
    }
    Ok((s, b))
}

fn distribution_from(n: usize, s: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            if n == 1 {
                return vec![0.0];
            }
            let logits: Vec<f64> = (0..n)
                .map(|j| if i == j { f64::NEG_INFINITY } else { (s[i * n + j] + SCORE_FLOOR).ln() + b[i * n + j] })
                .collect();
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        })
        .collect()
}

/// Row `i` is the distribution over the head of word `i` among the other
/// words (entry `i` is zero).
pub fn probe_head_distribution(profile: &AttentionProfile, probe: &ProbeModel) -> Result<Vec<Vec<f64>>> {
    let (s, b) = scores(profile, probe, &probe.mixing_weights())?;
    Ok(distribution_from(profile.words.len(), &s, &b))
}

/// Most probable head of every word, 1-based.
pub fn predict_heads(profile: &AttentionProfile, probe: &ProbeModel) -> Result<Vec<usize>> {
    Ok(probe_head_distribution(profile, probe)?
        .iter()
        .map(|row| {
            1 + row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &p)| if p > best.1 { (j, p) } else { best })
                .0
        })
        .collect())
}

fn check_aligned(profiles: &[AttentionProfile], gold: &DependencyCorpus) -> Result<()> {
    if profiles.len() != gold.len() {
        return Err(Error::Input(format!(
            "{} attention profiles for {} gold sentences",
            profiles.len(),
            gold.len()
        )));
    }
    for (idx, (p, g)) in profiles.iter().zip(gold.sentences()).enumerate() {
        if p.words.len() != g.len() {
            return Err(Error::Input(format!(
                "sentence {idx} has {} profiled words but {} gold tokens",
                p.words.len(),
                g.len()
            )));
        }
    }
    Ok(())
}

/// Mean negative log-likelihood of gold heads over non-root words, and its
/// gradient with respect to every probe parameter.
pub fn probe_loss(
    profiles: &[AttentionProfile],
    gold: &DependencyCorpus,
    probe: &ProbeModel,
) -> Result<(f64, HashMap<String, Tensor<f64>>)> {
    check_aligned(profiles, gold)?;
    let k = probe.maps;
    let w = probe.mixing_weights();
    let count = gold.sentences().iter().flat_map(|s| &s.heads).filter(|&&h| h != 0).count();
    if count == 0 {
        return Err(Error::Input("gold sentences have no non-root tokens".into()));
    }
    let scale = 1.0 / count as f64;
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; 2 * k];
    let bilinear = probe.bilinear();
    let (mut grad_e, mut grad_m) = match bilinear {
        Some((d, table, _)) => (vec![0.0; table.len()], vec![0.0; d * d]),
        None => (Vec::new(), Vec::new()),
    };
    for (profile, sentence) in profiles.iter().zip(gold.sentences()) {
        let n = profile.words.len();
        let (s, b) = scores(profile, probe, &w)?;
        let p = distribution_from(n, &s, &b);
        for (i, &head) in sentence.heads.iter().enumerate() {
            if head == 0 {
                continue;
            }
            let g = head - 1;
            loss -= scale * p[i][g].ln();
            for j in (0..n).filter(|&j| j != i) {
                let sij = s[i * n + j] + SCORE_FLOOR;
                let target = if j == g { 1.0 } else { 0.0 };
                let ds = scale * (p[i][j] - target) / sij;
                for c in 0..k {
                    grad_w[c] += ds * profile.alpha(c, i, j);
                    grad_w[k + c] += ds * profile.alpha(c, j, i);
                }
                if let Some((d, table, mat)) = bilinear {
                    let db = scale * (p[i][j] - target);
                    let (ti, tj) = (profile.words[i], profile.words[j]);
                    for r in 0..d {
                        let ei = table[ti * d + r];
                        for c in 0..d {
                            let ej = table[tj * d + c];
                            grad_m[r * d + c] += db * ei * ej;
                            grad_e[ti * d + r] += db * mat[r * d + c] * ej;
                            grad_e[tj * d + c] += db * mat[r * d + c] * ei;
                        }
                    }
                }
            }
        }
    }
    // through w = softplus(r) / Σ softplus(r)
    let raw = probe.params[MIXING].data();
    let total: f64 = raw.iter().map(|&r| softplus(r)).sum();
    let mean: f64 = grad_w.iter().zip(&w).map(|(g, wi)| g * wi).sum();
    let grad_r: Vec<f64> = raw
        .iter()
        .zip(&grad_w)
        .map(|(&r, &g)| sigmoid(r) / total * (g - mean))
        .collect();
    let mut grads = HashMap::new();
    grads.insert(MIXING.to_string(), Tensor::new(vec![2 * k], grad_r)?);
    if let Some((d, table, _)) = bilinear {
        grads.insert(EMBEDDINGS.to_string(), Tensor::new(vec![table.len() / d, d], grad_e)?);
        grads.insert(BILINEAR.to_string(), Tensor::new(vec![d, d], grad_m)?);
    }
    Ok((loss, grads))
}

/// Full-batch training of a fresh probe. Returns the probe and the loss
/// before each update. The encoder is not involved: profiles are plain
/// numbers.
pub fn train_probe(
    profiles: &[AttentionProfile],
    gold: &DependencyCorpus,
    vocab: usize,
    params: &ProbeParams,
    seed: u64,
) -> Result<(ProbeModel, Vec<f64>)> {
    check_aligned(profiles, gold)?;
    let maps = profiles.first().map(|p| p.maps).ok_or_else(|| Error::Input("no profiles to train on".into()))?;
    let mut probe = ProbeModel::init(maps, vocab, params, seed)?;
    let mut opt = AdamW::new(0.0);
    let mut losses = Vec::with_capacity(params.epochs);
    for _ in 0..params.epochs {
        let (loss, grads) = probe_loss(profiles, gold, &probe)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("probe loss became {loss}")));
        }
        losses.push(loss);
        opt.update(probe.params.iter_mut(), &grads, params.lr)?;
    }
    Ok((probe, losses))
}

/// Fraction of non-root tokens whose predicted head (1-based) is the gold
/// head.
pub fn score_uas(predictions: &[Vec<usize>], gold: &DependencyCorpus) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(Error::Input(format!(
            "{} predicted sentences for {} gold",
            predictions.len(),
            gold.len()
        )));
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for (idx, (p, g)) in predictions.iter().zip(gold.sentences()).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Input(format!("sentence {idx}: {} predictions for {} tokens", p.len(), g.len())));
        }
        for (&ph, &gh) in p.iter().zip(&g.heads) {
            if gh != 0 {
                total += 1;
                hit += (ph == gh) as usize;
            }
        }
    }
    if total == 0 {
        return Err(Error::Input("no non-root tokens to score".into()));
    }
    Ok(hit as f64 / total as f64)
}

/// One sweep result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    /// Elision factor of the network, or `untrained`.
    pub n: String,
    /// Held-out UAS in percent.
    pub uas: f64,
    pub seed: u64,
    pub probe_variant: String,
}

/// Word ids of every treebank sentence.
pub fn encode_treebank(vocab: &Vocabulary, treebank: &DependencyCorpus) -> Vec<Vec<usize>> {
    treebank.sentences().iter().map(|s| vocab.encode_words(&s.forms)).collect()
}

/// Trains a probe per network and seed on the first `train_fraction` of
/// the treebank and scores it on the rest.
pub fn run_probe_sweep<T: Float>(
    networks: &[(String, &EncoderModel<T>)],
    vocab: &Vocabulary,
    treebank: &DependencyCorpus,
    params: &ProbeParams,
    seeds: &[u64],
) -> Result<Vec<ProbeRow>> {
    if !(params.train_fraction > 0.0 && params.train_fraction < 1.0) {
        return Err(Error::Parameter(format!("train_fraction must lie in (0, 1), got {}", params.train_fraction)));
    }
    let cut = (treebank.len() as f64 * params.train_fraction).round() as usize;
    if cut == 0 || cut >= treebank.len() {
        return Err(Error::Input(format!("treebank of {} sentences is too small to split", treebank.len())));
    }
    let (train, test) = treebank.split_at(cut);
    let words = encode_treebank(vocab, treebank);
    let mut rows = Vec::new();
    for (label, model) in networks {
        if model.config().vocab < vocab.len() {
            return Err(Error::Input(format!("network {label} has a smaller vocabulary than the treebank encoding")));
        }
        let profiles = extract_attention(*model, &words)?;
        let (train_p, test_p) = profiles.split_at(cut);
        for &seed in seeds {
            let (probe, _) = train_probe(train_p, &train, vocab.len(), params, seed)?;
            let predicted = test_p.iter().map(|p| predict_heads(p, &probe)).collect::<Result<Vec<_>>>()?;
            rows.push(ProbeRow {
                n: label.clone(),
                uas: 100.0 * score_uas(&predicted, &test)?,
                seed,
                probe_variant: params.variant().into(),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DepSentence;
    use crate::model::{Elision, ModelConfig};
    use rand::Rng as _;

    fn profile(words: usize, maps: usize, seed: u64) -> AttentionProfile {
        let mut rng = substream(seed, "probe-test");
        let s = words + 2;
        let mut attention = Vec::new();
        for _ in 0..maps * s {
            let row: Vec<f64> = (0..s).map(|_| rng.random_range(0.1..1.0)).collect();
            let z: f64 = row.iter().sum();
            attention.extend(row.iter().map(|v| v / z));
        }
        AttentionProfile {
            words: (0..words).map(|i| 5 + (i * 3 + seed as usize) % 7).collect(),
            maps,
            attention,
        }
    }

    fn gold(heads: Vec<Vec<usize>>) -> DependencyCorpus {
        DependencyCorpus::new(
            heads
                .into_iter()
                .map(|h| DepSentence {
                    forms: (0..h.len()).map(|i| format!("w{i}")).collect(),
                    heads: h,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_map_reproduces_its_attention_row() {
        let p = profile(5, 1, 1);
        let mut probe = ProbeModel::init(1, 20, &ProbeParams::default(), 0).unwrap();
        // forward weight ≈ 1, reverse ≈ 0
        probe.params.get_mut(MIXING).unwrap().data_mut().copy_from_slice(&[40.0, -40.0]);
        let dist = probe_head_distribution(&p, &probe).unwrap();
        for (i, row) in dist.iter().enumerate() {
            let z: f64 = (0..5).filter(|&j| j != i).map(|j| p.alpha(0, i, j)).sum();
            for (j, &v) in row.iter().enumerate() {
                let want = if i == j { 0.0 } else { p.alpha(0, i, j) / z };
                assert!((v - want).abs() < 1e-9, "{i},{j}: {v} vs {want}");
            }
        }
    }

    #[test]
    fn rows_are_distributions_and_uniform_stays_uniform() {
        let p = profile(7, 6, 2);
        let params = ProbeParams {
            embedding_dim: Some(4),
            ..ProbeParams::default()
        };
        let probe = ProbeModel::init(6, 20, &params, 3).unwrap();
        for row in probe_head_distribution(&p, &probe).unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let s = 6;
        let uniform = AttentionProfile {
            words: vec![5; 4],
            maps: 2,
            attention: vec![1.0 / s as f64; 2 * s * s],
        };
        let probe = ProbeModel::init(2, 20, &ProbeParams::default(), 0).unwrap();
        for (i, row) in probe_head_distribution(&uniform, &probe).unwrap().iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!((v - if i == j { 0.0 } else { 1.0 / 3.0 }).abs() < 1e-12);
            }
        }
        assert!((probe.mixing_weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_input_error() {
        let probe = ProbeModel::init(3, 20, &ProbeParams::default(), 0).unwrap();
        assert!(matches!(probe_head_distribution(&profile(4, 2, 0), &probe), Err(Error::Input(_))));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let profiles = vec![profile(5, 3, 1), profile(4, 3, 2)];
        let g = gold(vec![vec![2, 0, 2, 5, 3], vec![0, 1, 1, 3]]);
        let params = ProbeParams {
            embedding_dim: Some(3),
            ..ProbeParams::default()
        };
        let mut probe = ProbeModel::init(3, 20, &params, 4).unwrap();
        let mut rng = substream(5, "probe-test");
        for t in probe.params.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
        }
        let (_, grads) = probe_loss(&profiles, &g, &probe).unwrap();
        let h = 1e-5;
        for name in [MIXING, EMBEDDINGS, BILINEAR] {
            for idx in 0..probe.params[name].len() {
                let at = |delta: f64| {
                    let mut q = probe.clone();
                    q.params.get_mut(name).unwrap().data_mut()[idx] += delta;
                    probe_loss(&profiles, &g, &q).unwrap().0
                };
                let numeric = (at(h) - at(-h)) / (2.0 * h);
                let analytic = grads[name].data()[idx];
                assert!((numeric - analytic).abs() < 1e-7 * (1.0 + numeric.abs()), "{name}[{idx}]: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn zero_epochs_returns_the_initial_probe() {
        let profiles = vec![profile(5, 2, 1)];
        let g = gold(vec![vec![2, 0, 2, 3, 4]]);
        let params = ProbeParams {
            epochs: 0,
            embedding_dim: Some(2),
            ..ProbeParams::default()
        };
        let (probe, losses) = train_probe(&profiles, &g, 20, &params, 9).unwrap();
        assert!(losses.is_empty());
        assert_eq!(probe, ProbeModel::init(2, 20, &params, 9).unwrap());
    }

    #[test]
    fn uas_counts_non_root_tokens() {
        let g = gold(vec![vec![2, 0, 2, 3, 4]]);
        assert_eq!(score_uas(&[vec![2, 1, 2, 3, 4]], &g).unwrap(), 1.0);
        assert_eq!(score_uas(&[vec![3, 0, 1, 1, 1]], &g).unwrap(), 0.0);
        assert_eq!(score_uas(&[vec![2, 9, 2, 3, 1]], &g).unwrap(), 0.75);
        assert!(matches!(score_uas(&[vec![1, 2]], &g), Err(Error::Input(_))));
        assert!(matches!(score_uas(&[], &g), Err(Error::Input(_))));
    }

    fn tiny_model() -> EncoderModel<f32> {
        let mut c = ModelConfig::toy(30, Elision::Every(1));
        c.hidden = 8;
        c.heads = 2;
        c.ff = 16;
        c.m = 2;
        EncoderModel::new(&c, 3).unwrap()
    }

    #[test]
    fn extraction_shapes_and_row_sums() {
        let model = tiny_model();
        let sentences = vec![vec![5, 6, 7], vec![8, 9, 10, 11, 12, 13]];
        let profiles = extract_attention(&model, &sentences).unwrap();
        assert_eq!(profiles, extract_attention(&model, &sentences).unwrap());
        for (p, w) in profiles.iter().zip(&sentences) {
            assert_eq!(p.maps, 2 * 2);
            let s = w.len() + 2;
            assert_eq!(p.attention.len(), p.maps * s * s);
            for row in p.attention.chunks(s) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
            }
        }
        let long = vec![vec![5; 100]];
        assert!(matches!(extract_attention(&model, &long), Err(Error::Input(_))));
    }

    #[test]
    fn training_leaves_the_encoder_untouched_and_lowers_loss() {
        let model = tiny_model();
        let before = model.params().clone();
        let g = gold(vec![vec![2, 0, 2], vec![2, 0, 4, 2]]);
        let profiles = extract_attention(&model, &[vec![5, 6, 7], vec![8, 9, 10, 11]]).unwrap();
        let params = ProbeParams {
            epochs: 30,
            ..ProbeParams::default()
        };
        let (_, losses) = train_probe(&profiles, &g, 30, &params, 1).unwrap();
        assert_eq!(model.params(), &before);
        assert!(losses.last().unwrap() < &losses[0]);
    }
}
