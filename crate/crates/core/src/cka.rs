//! Linear centered kernel alignment between self-attention activations.
//!
//! Activations are the output of each self-attention block after its
//! residual add and layer norm. Everything here accumulates in f64.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mode};
use crate::corpus::{Vocabulary, CLS, PAD, SEP};
use crate::error::{Error, Result};
use crate::model::{EncoderInput, EncoderModel};
use crate::rng::{purpose, substream};
use crate::tensor::{gemm, Float, MatView};

/// Dense row-major `rows × cols` matrix of examples by features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Input(format!(
                "{} values cannot fill a {rows}×{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn view(&self) -> MatView<'_, f64> {
        MatView::new(&self.data, self.rows, self.cols)
    }

    /// Subtracts each column's mean.
    pub fn centered(&self) -> Matrix {
        let mut means = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (m, v) in means.iter_mut().zip(self.row(r)) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= self.rows as f64);
        let mut out = self.clone();
        for r in 0..self.rows {
            for (v, m) in out.data[r * self.cols..(r + 1) * self.cols].iter_mut().zip(&means) {
                *v -= m;
            }
        }
        out
    }
}

/// `aᵀ·b` for matrices sharing their row count.
fn cross(a: &Matrix, b: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; a.cols * b.cols];
    gemm(1.0, a.view().t(), b.view(), 0.0, &mut out);
    out
}

/// `a·bᵀ` for matrices sharing their column count.
fn gram(a: &Matrix, b: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; a.rows * b.rows];
    gemm(1.0, a.view(), b.view().t(), 0.0, &mut out);
    out
}

fn frobenius_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(‖YᵀX‖²_F, ‖XᵀX‖²_F, ‖YᵀY‖²_F)` of centered inputs, computed from
/// `d × d` feature products or from `n × n` example Grams.
fn alignment_terms(x: &Matrix, y: &Matrix, example_space: bool) -> (f64, f64, f64) {
    if example_space {
        let (kx, ky) = (gram(x, x), gram(y, y));
        (dot(&kx, &ky), frobenius_sq(&kx), frobenius_sq(&ky))
    } else {
        (frobenius_sq(&cross(y, x)), frobenius_sq(&cross(x, x)), frobenius_sq(&cross(y, y)))
    }
}

/// `‖YᵀX‖²_F / (‖XᵀX‖_F · ‖YᵀY‖_F)` on column-centered inputs.
pub fn linear_cka(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.rows != y.rows {
        return Err(Error::Input(format!("CKA inputs have {} and {} examples", x.rows, y.rows)));
    }
    if x.rows < 2 || x.cols == 0 || y.cols == 0 {
        return Err(Error::Input(format!(
            "CKA needs at least 2 examples and 1 feature (got {}×{} and {}×{})",
            x.rows, x.cols, y.rows, y.cols
        )));
    }
    if !x.data.iter().chain(&y.data).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("CKA input contains a non-finite value".into()));
    }
    let (x, y) = (x.centered(), y.centered());
    // the example-space Gram form is cheaper when features outnumber examples
    let (xy, xx, yy) = alignment_terms(&x, &y, x.cols.max(y.cols) > x.rows);
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::Degenerate("CKA input has zero variance in every feature".into()));
    }
    Ok(xy / (xx.sqrt() * yy.sqrt()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// One row per sentence: the mean over its real tokens.
    #[default]
    Mean,
    /// One row per real token, truncated to `max_rows`.
    PerToken { max_rows: usize },
}

/// Pooled activations of every self-attention block over a fixed list of
/// sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationSet {
    pub network: String,
    pub seed: u64,
    pub pooling: Pooling,
    /// Fingerprint of the input token ids, so sets from different inputs are
    /// never compared.
    pub inputs: u64,
    pub blocks: Vec<Matrix>,
}

impl ActivationSet {
    pub fn examples(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.rows)
    }
}

/// Lowercased words to `[CLS] ... [SEP]` id rows.
pub fn encode_sentences(vocab: &Vocabulary, sentences: &[Vec<String>]) -> Vec<Vec<usize>> {
    sentences
        .iter()
        .map(|s| std::iter::once(CLS).chain(vocab.encode_words(s)).chain([SEP]).collect())
        .collect()
}

fn fingerprint(rows: &[Vec<usize>]) -> u64 {
    let bytes: Vec<u8> = rows
        .iter()
        .flat_map(|r| r.iter().map(|&t| t as u32).chain([u32::MAX]))
        .flat_map(u32::to_le_bytes)
        .collect();
    crate::rng::fnv1a(&bytes)
}

const CAPTURE_BATCH: usize = 32;

/// Runs the encoder in eval mode over `rows` (token ids, already framed)
/// and pools each self-attention block's output.
pub fn capture_activations<T: Float>(
    model: &EncoderModel<T>,
    rows: &[Vec<usize>],
    pooling: Pooling,
    network: &str,
    seed: u64,
) -> Result<ActivationSet> {
    if rows.is_empty() || rows.iter().any(Vec::is_empty) {
        return Err(Error::Input("activation capture needs non-empty sentences".into()));
    }
    let hidden = model.config().hidden;
    let blocks_n = model.layout().attention_count();
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); blocks_n];
    let limit = match pooling {
        Pooling::Mean => rows.len(),
        Pooling::PerToken { max_rows } => max_rows,
    };
    let mut taken = 0;
    let mut rng = substream(seed, purpose::DROPOUT);
    for chunk in rows.chunks(CAPTURE_BATCH) {
        if taken >= limit {
            break;
        }
        let input = EncoderInput::from_rows(chunk, PAD)?;
        let graph = Graph::new();
        let (_, out) = model.forward(&graph, &input, Mode::Eval, false, &mut rng)?;
        let before = taken;
        for (block, var) in out.attention_outputs.iter().enumerate() {
            let value = var.value();
            let data = value.data();
            taken = before;
            for (r, row) in chunk.iter().enumerate() {
                let at = |i: usize| &data[(r * input.seq + i) * hidden..(r * input.seq + i + 1) * hidden];
                match pooling {
                    Pooling::Mean => {
                        let mut mean = vec![0.0; hidden];
                        for i in 0..row.len() {
                            for (m, v) in mean.iter_mut().zip(at(i)) {
                                *m += v.to_f64_lossy();
                            }
                        }
                        pooled[block].extend(mean.iter().map(|m| m / row.len() as f64));
                        taken += 1;
                    }
                    Pooling::PerToken { .. } => {
                        for i in 0..row.len() {
                            if taken == limit {
                                break;
                            }
                            pooled[block].extend(at(i).iter().map(|v| v.to_f64_lossy()));
                            taken += 1;
                        }
                    }
                }
            }
        }
    }
    let blocks = pooled
        .into_iter()
        .map(|data| Matrix::new(data.len() / hidden, hidden, data))
        .collect::<Result<Vec<_>>>()?;
    Ok(ActivationSet {
        network: network.into(),
        seed,
        pooling,
        inputs: fingerprint(rows),
        blocks,
    })
}

/// How trial pairs are drawn when averaging similarity matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairCounting {
    /// Within one family, `i < j`: t(t-1)/2 pairs.
    UnorderedDistinct,
    /// Within one family, `i != j`: t(t-1) pairs.
    OrderedDistinct,
    /// Within one family, `i <= j`: t(t+1)/2 pairs, 15 at t = 5.
    UnorderedWithSelf,
    /// Every trial of one family against every trial of the other.
    Cross,
}

impl PairCounting {
    /// Index pairs for families of `a` and `b` trials.
    pub fn pairs(self, a: usize, b: usize) -> Result<Vec<(usize, usize)>> {
        if self != PairCounting::Cross && a != b {
            return Err(Error::Input(format!(
                "{self:?} pairs trials within one family, got {a} and {b} trials"
            )));
        }
        let all = (0..a).flat_map(|i| (0..b).map(move |j| (i, j)));
        Ok(match self {
            PairCounting::UnorderedDistinct => all.filter(|(i, j)| i < j).collect(),
            PairCounting::OrderedDistinct => all.filter(|(i, j)| i != j).collect(),
            PairCounting::UnorderedWithSelf => all.filter(|(i, j)| i <= j).collect(),
            PairCounting::Cross => all.collect(),
        })
    }
}

impl FromStr for PairCounting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unordered-distinct" => Ok(PairCounting::UnorderedDistinct),
            "ordered-distinct" => Ok(PairCounting::OrderedDistinct),
            "unordered-with-self" => Ok(PairCounting::UnorderedWithSelf),
            "cross" => Ok(PairCounting::Cross),
            other => Err(Error::Parameter(format!(
                "unknown pair counting {other:?}; expected unordered-distinct, ordered-distinct, unordered-with-self or cross"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major CKA values.
    pub values: Vec<f64>,
    pub row_label: String,
    pub col_label: String,
    /// Number of matrices averaged into this one (1 for a single pair).
    pub pairs: usize,
    pub counting: Option<PairCounting>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn transpose(&self) -> SimilarityMatrix {
        let values = (0..self.cols)
            .flat_map(|j| (0..self.rows).map(move |i| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        SimilarityMatrix {
            rows: self.cols,
            cols: self.rows,
            values,
            row_label: self.col_label.clone(),
            col_label: self.row_label.clone(),
            ..self.clone()
        }
    }

    /// Rows are blocks of the row network; label lines are `#` comments.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# rows: {}\n# cols: {}\n# pairs: {}\nblock", self.row_label, self.col_label, self.pairs);
        for j in 0..self.cols {
            write!(s, ",{j}").unwrap();
        }
        s.push('\n');
        for i in 0..self.rows {
            write!(s, "{i}").unwrap();
            for j in 0..self.cols {
                write!(s, ",{}", self.get(i, j)).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Entry `(i, j)` is the CKA of block `i` of `a` with block `j` of `b`.
pub fn similarity_matrix(a: &ActivationSet, b: &ActivationSet) -> Result<SimilarityMatrix> {
    if a.inputs != b.inputs || a.pooling != b.pooling || a.examples() != b.examples() {
        return Err(Error::Input(format!(
            "activation sets {} and {} were captured from different inputs or pooling",
            a.network, b.network
        )));
    }
    let mut values = Vec::with_capacity(a.blocks.len() * b.blocks.len());
    for x in &a.blocks {
        for y in &b.blocks {
            values.push(linear_cka(x, y)?);
        }
    }
    Ok(SimilarityMatrix {
        rows: a.blocks.len(),
        cols: b.blocks.len(),
        values,
        row_label: format!("{} seed={}", a.network, a.seed),
        col_label: format!("{} seed={}", b.network, b.seed),
        pairs: 1,
        counting: None,
    })
}

/// Elementwise mean of the similarity matrices of every trial pair that
/// `counting` selects. Within-family rules expect `b` to be the same
/// family as `a`.
pub fn average_over_trials(
    a: &[ActivationSet],
    b: &[ActivationSet],
    counting: PairCounting,
) -> Result<SimilarityMatrix> {
    let pairs = counting.pairs(a.len(), b.len())?;
    if pairs.is_empty() {
        return Err(Error::Input(format!("{counting:?} selects no pairs from {} and {} trials", a.len(), b.len())));
    }
    let mut sum: Option<SimilarityMatrix> = None;
    for &(i, j) in &pairs {
        let s = similarity_matrix(&a[i], &b[j])?;
        match &mut sum {
            None => sum = Some(s),
            Some(acc) => {
                if (acc.rows, acc.cols) != (s.rows, s.cols) {
                    return Err(Error::dim("average_over_trials", &[acc.rows, acc.cols], &[s.rows, s.cols]));
                }
                acc.values.iter_mut().zip(&s.values).for_each(|(x, y)| *x += y);
            }
        }
    }
    let mut out = sum.expect("at least one pair");
    out.values.iter_mut().for_each(|v| *v /= pairs.len() as f64);
    out.pairs = pairs.len();
    out.counting = Some(counting);
    out.row_label = a[0].network.clone();
    out.col_label = b[0].network.clone();
    Ok(out)
}

/// Entries `S(i, i)` in block order.
pub fn diagonal_profile(s: &SimilarityMatrix) -> Result<Vec<f64>> {
    if s.rows != s.cols {
        return Err(Error::Input(format!("diagonal of a non-square {}×{} matrix", s.rows, s.cols)));
    }
    Ok((0..s.rows).map(|i| s.get(i, i)).collect())
}

/// Mean of the diagonal minus mean of the off-diagonal entries.
pub fn diagonal_dominance(s: &SimilarityMatrix) -> Result<f64> {
    let diag = diagonal_profile(s)?;
    if s.rows < 2 {
        return Err(Error::Input("diagonal dominance needs at least 2 blocks".into()));
    }
    let total: f64 = s.values.iter().sum();
    let d: f64 = diag.iter().sum();
    let off = (total - d) / (s.values.len() - s.rows) as f64;
    Ok(d / s.rows as f64 - off)
}

/// Diagonal profiles as CSV columns keyed by comparison name.
pub fn profiles_csv(profiles: &[(String, Vec<f64>)]) -> Result<String> {
    let len = profiles.first().map_or(0, |p| p.1.len());
    if profiles.iter().any(|p| p.1.len() != len) {
        return Err(Error::Input("diagonal profiles differ in length".into()));
    }
    let mut s = String::from("block");
    for (name, _) in profiles {
        write!(s, ",{name}").unwrap();
    }
    s.push('\n');
    for i in 0..len {
        write!(s, "{i}").unwrap();
        for (_, p) in profiles {
            write!(s, ",{}", p[i]).unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}
