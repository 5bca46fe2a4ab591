//! Task heads and fine-tuning: span extraction and sentence classification.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, score_span, TaskMetrics};
use super::optim::AdamW;
use super::pretrain::{named_gradients, TrialRecord};
use super::schedule::warmup_linear_decay;
use crate::autodiff::{Graph, Mode, Var};
use crate::corpus::{ClassificationExample, SpanExample, ToyGrammar, Vocabulary, CLS, PAD, SEP};
use crate::error::{Error, Result};
use crate::model::encoder::{sample_init, Init};
use crate::model::{pooled, BoundParams, EncoderInput, EncoderModel};
use crate::rng::{purpose, substream, Rng};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Span,
    Classification,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Span => "span",
            TaskKind::Classification => "classification",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "span" => Ok(TaskKind::Span),
            "classification" => Ok(TaskKind::Classification),
            _ => Err(Error::Parameter(format!("unknown task {s:?} (expected span or classification)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskData {
    Span { train: Vec<SpanExample>, eval: Vec<SpanExample> },
    Classification { train: Vec<ClassificationExample>, eval: Vec<ClassificationExample> },
}

impl TaskData {
    /// Fresh toy-grammar examples: `train` then `eval` drawn from one
    /// seeded stream.
    pub fn generate(kind: TaskKind, grammar: &ToyGrammar, train: usize, eval: usize, seed: u64) -> Self {
        let mut rng = substream(seed, purpose::DATA);
        match kind {
            TaskKind::Span => TaskData::Span {
                train: grammar.span_examples(&mut rng, train),
                eval: grammar.span_examples(&mut rng, eval),
            },
            TaskKind::Classification => TaskData::Classification {
                train: grammar.classification_examples(&mut rng, train),
                eval: grammar.classification_examples(&mut rng, eval),
            },
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            TaskData::Span { .. } => TaskKind::Span,
            TaskData::Classification { .. } => TaskKind::Classification,
        }
    }
}

/// Fine-tuning hyper-parameters. They depend only on the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneParams {
    pub task: TaskKind,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    /// Longest predicted span, in tokens.
    pub max_answer_len: usize,
    pub classes: usize,
}

impl FinetuneParams {
    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::Span => FinetuneParams {
                task,
                steps: 600,
                batch_size: 16,
                lr: 1e-3,
                warmup_fraction: 0.1,
                weight_decay: 0.01,
                max_answer_len: 8,
                classes: 0,
            },
            TaskKind::Classification => FinetuneParams {
                task,
                steps: 200,
                batch_size: 16,
                lr: 5e-4,
                warmup_fraction: 0.1,
                weight_decay: 0.01,
                max_answer_len: 0,
                classes: 2,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.steps > 0
            && self.batch_size > 0
            && self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.warmup_fraction)
            && self.weight_decay >= 0.0
            && match self.task {
                TaskKind::Span => self.max_answer_len > 0,
                TaskKind::Classification => self.classes >= 2,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid fine-tuning parameters {self:?}")))
        }
    }
}

/// A span example as model input: token ids, segment ids, the first
/// context position and the answer's token positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSpan {
    pub tokens: Vec<usize>,
    pub segments: Vec<usize>,
    pub context_start: usize,
    pub answer: (usize, usize),
}

/// `[CLS] question [SEP] context [SEP]`, question in segment 0 and context
/// in segment 1.
pub fn encode_span(vocab: &Vocabulary, ex: &SpanExample, max_len: usize) -> Result<EncodedSpan> {
    let q = vocab.encode_words(&ex.question);
    let c = vocab.encode_words(&ex.context);
    let len = q.len() + c.len() + 3;
    if len > max_len {
        return Err(Error::Input(format!("span example of {len} tokens exceeds {max_len}")));
    }
    if ex.answer.0 > ex.answer.1 || ex.answer.1 >= c.len() {
        return Err(Error::Input(format!("answer {:?} outside context of {}", ex.answer, c.len())));
    }
    let context_start = q.len() + 2;
    let tokens: Vec<usize> = [CLS].into_iter().chain(q).chain([SEP]).chain(c).chain([SEP]).collect();
    let segments = (0..len).map(|i| usize::from(i >= context_start)).collect();
    Ok(EncodedSpan {
        tokens,
        segments,
        context_start,
        answer: (ex.answer.0 + context_start, ex.answer.1 + context_start),
    })
}

fn span_input(batch: &[&EncodedSpan]) -> Result<EncoderInput> {
    let rows: Vec<Vec<usize>> = batch.iter().map(|e| e.tokens.clone()).collect();
    let mut input = EncoderInput::from_rows(&rows, PAD)?;
    for (r, e) in batch.iter().enumerate() {
        input.segments[r * input.seq..r * input.seq + e.segments.len()].copy_from_slice(&e.segments);
    }
    Ok(input)
}

/// Fine-tuned task head weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead<T: Float> {
    pub params: BTreeMap<String, Tensor<T>>,
}

fn init_head<T: Float>(task: TaskKind, hidden: usize, classes: usize, rng: &mut Rng) -> TaskHead<T> {
    let out = match task {
        TaskKind::Span => 2,
        TaskKind::Classification => classes,
    };
    let prefix = format!("head.{}", task.name());
    let params = BTreeMap::from([
        (format!("{prefix}.weight"), sample_init(Init::Normal, &[hidden, out], rng)),
        (format!("{prefix}.bias"), Tensor::zeros(&[out])),
    ]);
    TaskHead { params }
}

fn head_logits<'g, T: Float>(head: &HashMap<String, Var<'g, T>>, task: TaskKind, x: Var<'g, T>) -> Result<Var<'g, T>> {
    let prefix = format!("head.{}", task.name());
    x.matmul(head[&format!("{prefix}.weight")])?.add(head[&format!("{prefix}.bias")])
}

/// Start and end logits `[batch, 2, seq]`, with every position outside the
/// context pushed to a large negative value.
fn span_logits<'g, T: Float>(
    head: &HashMap<String, Var<'g, T>>,
    hidden: Var<'g, T>,
    batch: &[&EncodedSpan],
    seq: usize,
) -> Result<Var<'g, T>> {
    let b = batch.len();
    let mut outside = vec![true; b * seq];
    for (r, e) in batch.iter().enumerate() {
        for i in e.context_start..e.tokens.len() - 1 {
            outside[r * seq + i] = false;
        }
    }
    head_logits(head, TaskKind::Span, hidden)?
        .permute(&[0, 2, 1])?
        .masked_fill(&outside, &[b, 1, seq], T::from_f64_lossy(-1e9))
}

/// Highest-scoring `(start, end)` with `start <= end < start + max_len`.
pub fn best_span(start: &[f64], end: &[f64], max_len: usize) -> (usize, usize) {
    let mut best = (0, 0);
    let mut best_score = f64::NEG_INFINITY;
    for (i, &s) in start.iter().enumerate() {
        for (j, &e) in end.iter().enumerate().skip(i).take(max_len) {
            if s + e > best_score {
                best_score = s + e;
                best = (i, j);
            }
        }
    }
    best
}

struct Bound<'g, T: Float> {
    encoder: BoundParams<'g, T>,
    head: HashMap<String, Var<'g, T>>,
}

fn bind_head<'g, T: Float>(graph: &'g Graph<T>, head: &TaskHead<T>, trainable: bool) -> HashMap<String, Var<'g, T>> {
    head.params
        .iter()
        .map(|(k, t)| {
            let v = if trainable { graph.param(t.clone()) } else { graph.constant(t.clone()) };
            (k.clone(), v)
        })
        .collect()
}

/// Loss (training) or logits (evaluation) of one batch.
enum Batch<'a> {
    Span(Vec<&'a EncodedSpan>),
    Classification(Vec<(Vec<usize>, usize)>),
}

fn forward_batch<'g, T: Float>(
    graph: &'g Graph<T>,
    model: &EncoderModel<T>,
    head: &TaskHead<T>,
    batch: &Batch<'_>,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Bound<'g, T>, Var<'g, T>, Vec<usize>)> {
    let trainable = mode == Mode::Train;
    let head_vars = bind_head(graph, head, trainable);
    match batch {
        Batch::Span(items) => {
            let input = span_input(items)?;
            let (encoder, out) = model.forward(graph, &input, mode, trainable, rng)?;
            let logits = span_logits(&head_vars, out.hidden, items, input.seq)?;
            let targets = items.iter().flat_map(|e| [e.answer.0, e.answer.1]).collect();
            let flat = logits.reshape(&[items.len() * 2, input.seq])?;
            Ok((Bound { encoder, head: head_vars }, flat, targets))
        }
        Batch::Classification(items) => {
            let rows: Vec<Vec<usize>> = items.iter().map(|(t, _)| t.clone()).collect();
            let input = EncoderInput::from_rows(&rows, PAD)?;
            let (encoder, out) = model.forward(graph, &input, mode, trainable, rng)?;
            let pooled = pooled(model.config(), &encoder, out.hidden)?;
            let logits = head_logits(&head_vars, TaskKind::Classification, pooled)?;
            let targets = items.iter().map(|(_, l)| *l).collect();
            Ok((Bound { encoder, head: head_vars }, logits, targets))
        }
    }
}

enum Encoded {
    Span { train: Vec<EncodedSpan>, eval: Vec<EncodedSpan> },
    Classification { train: Vec<(Vec<usize>, usize)>, eval: Vec<(Vec<usize>, usize)> },
}

fn encode(data: &TaskData, vocab: &Vocabulary, max_len: usize, classes: usize) -> Result<Encoded> {
    let cls = |ex: &ClassificationExample| -> Result<(Vec<usize>, usize)> {
        let body = vocab.encode_words(&ex.words);
        if body.len() + 2 > max_len {
            return Err(Error::Input(format!("sentence of {} tokens exceeds {max_len}", body.len() + 2)));
        }
        if ex.label >= classes {
            return Err(Error::Input(format!("label {} outside {classes} classes", ex.label)));
        }
        Ok(([CLS].into_iter().chain(body).chain([SEP]).collect(), ex.label))
    };
    Ok(match data {
        TaskData::Span { train, eval } => Encoded::Span {
            train: train.iter().map(|e| encode_span(vocab, e, max_len)).collect::<Result<_>>()?,
            eval: eval.iter().map(|e| encode_span(vocab, e, max_len)).collect::<Result<_>>()?,
        },
        TaskData::Classification { train, eval } => Encoded::Classification {
            train: train.iter().map(cls).collect::<Result<_>>()?,
            eval: eval.iter().map(cls).collect::<Result<_>>()?,
        },
    })
}

const EVAL_BATCH: usize = 32;

fn evaluate<T: Float>(model: &EncoderModel<T>, head: &TaskHead<T>, data: &Encoded, params: &FinetuneParams) -> Result<TaskMetrics> {
    let mut rng = substream(0, purpose::DROPOUT);
    match data {
        Encoded::Span { eval, .. } => {
            let mut predicted = Vec::with_capacity(eval.len());
            for chunk in eval.chunks(EVAL_BATCH) {
                let items: Vec<&EncodedSpan> = chunk.iter().collect();
                let graph = Graph::new();
                let (_, logits, _) = forward_batch(&graph, model, head, &Batch::Span(items), Mode::Eval, &mut rng)?;
                let values = logits.value().to_f64_vec();
                let seq = logits.shape()[1];
                for (r, e) in chunk.iter().enumerate() {
                    let start = &values[2 * r * seq..(2 * r + 1) * seq];
                    let end = &values[(2 * r + 1) * seq..(2 * r + 2) * seq];
                    predicted.push(best_span(start, end, params.max_answer_len));
                    debug_assert!(predicted.last().unwrap().0 >= e.context_start);
                }
            }
            let gold: Vec<(usize, usize)> = eval.iter().map(|e| e.answer).collect();
            let (f1, em) = score_span(&predicted, &gold)?;
            Ok(TaskMetrics::new("span", &[("f1", f1), ("em", em)]))
        }
        Encoded::Classification { eval, .. } => {
            let mut predicted = Vec::with_capacity(eval.len());
            for chunk in eval.chunks(EVAL_BATCH) {
                let graph = Graph::new();
                let batch = Batch::Classification(chunk.to_vec());
                let (_, logits, _) = forward_batch(&graph, model, head, &batch, Mode::Eval, &mut rng)?;
                let values = logits.value().to_f64_vec();
                let k = params.classes;
                predicted.extend(values.chunks(k).map(|row| {
                    row.iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                        .0
                }));
            }
            let gold: Vec<usize> = eval.iter().map(|(_, l)| *l).collect();
            Ok(TaskMetrics::new("classification", &[("accuracy", accuracy(&predicted, &gold)?)]))
        }
    }
}

/// Attaches a fresh head for `params.task`, trains head and encoder on the
/// task's training split and scores the held-out split.
pub fn finetune<T: Float>(
    model: &EncoderModel<T>,
    vocab: &Vocabulary,
    data: &TaskData,
    params: &FinetuneParams,
    seed: u64,
) -> Result<(EncoderModel<T>, TaskHead<T>, TrialRecord)> {
    params.validate()?;
    if data.kind() != params.task {
        return Err(Error::Input(format!(
            "{} data given to a {} fine-tuning run",
            data.kind().name(),
            params.task.name()
        )));
    }
    if vocab.len() > model.config().vocab {
        return Err(Error::Input(format!(
            "task vocabulary of {} exceeds model vocab {}",
            vocab.len(),
            model.config().vocab
        )));
    }
    let encoded = encode(data, vocab, model.config().max_positions, params.classes)?;
    let train_len = match &encoded {
        Encoded::Span { train, .. } => train.len(),
        Encoded::Classification { train, .. } => train.len(),
    };
    if train_len == 0 {
        return Err(Error::Input("empty training split".into()));
    }

    let mut model = EncoderModel::from_params(model.config().clone(), model.layout().clone(), model.params().clone())?;
    let mut head = init_head::<T>(params.task, model.config().hidden, params.classes, &mut substream(seed, purpose::HEAD));
    let mut data_rng = substream(seed, purpose::DATA);
    let mut dropout_rng = substream(seed, purpose::DROPOUT);
    let mut opt = AdamW::new(params.weight_decay);
    let warmup = ((params.warmup_fraction * params.steps as f64).round() as usize).max(1);

    let mut record = TrialRecord::empty(seed, model.config().n);
    record.finetune = Some(params.clone());
    let mut tokens = 0usize;
    let started = Instant::now();
    for step in 1..=params.steps {
        let picks: Vec<usize> = (0..params.batch_size).map(|_| data_rng.random_range(0..train_len)).collect();
        let batch = match &encoded {
            Encoded::Span { train, .. } => Batch::Span(picks.iter().map(|&i| &train[i]).collect()),
            Encoded::Classification { train, .. } => Batch::Classification(picks.iter().map(|&i| train[i].clone()).collect()),
        };
        tokens += match &batch {
            Batch::Span(items) => items.iter().map(|e| e.tokens.len()).sum::<usize>(),
            Batch::Classification(items) => items.iter().map(|(t, _)| t.len()).sum(),
        };
        let lr = warmup_linear_decay(step, params.steps, warmup, params.lr);
        let (loss, grads) = {
            let graph = Graph::new();
            let (bound, logits, targets) = forward_batch(&graph, &model, &head, &batch, Mode::Train, &mut dropout_rng)?;
            let loss = logits.cross_entropy(&targets)?;
            let mut grads = graph.backward(loss)?;
            let mut named = named_gradients(&bound.encoder, &mut grads);
            named.extend(bound.head.iter().filter_map(|(k, &v)| grads.take(v).map(|g| (k.clone(), g))));
            (loss.value().item().to_f64_lossy(), named)
        };
        opt.update(model.params_mut().chain(head.params.iter_mut()), &grads, lr)?;
        record.losses.push(loss);
    }
    let secs = started.elapsed().as_secs_f64();
    record.tokens_per_second = if secs > 0.0 { tokens as f64 / secs } else { 0.0 };
    record.metrics = Some(evaluate(&model, &head, &encoded, params)?);
    Ok((model, head, record))
}

/// Scores an already fine-tuned model on the held-out split of `data`.
pub fn evaluate_task<T: Float>(
    model: &EncoderModel<T>,
    head: &TaskHead<T>,
    vocab: &Vocabulary,
    data: &TaskData,
    params: &FinetuneParams,
) -> Result<TaskMetrics> {
    let encoded = encode(data, vocab, model.config().max_positions, params.classes)?;
    evaluate(model, head, &encoded, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize_corpus, ToyGrammar};
    use crate::model::{Elision, ModelConfig};

    fn vocab() -> Vocabulary {
        tokenize_corpus(&crate::corpus::toy::lexicon().join(" "), 512, 0).unwrap().vocab().clone()
    }

    fn tiny(vocab: usize) -> ModelConfig {
        let mut c = ModelConfig::toy(vocab, Elision::Every(1));
        c.m = 2;
        c.hidden = 16;
        c.heads = 2;
        c.ff = 32;
        c
    }

    fn span_data(n: usize) -> TaskData {
        let g = ToyGrammar::default();
        TaskData::Span {
            train: g.span_examples(&mut substream(1, purpose::DATA), n),
            eval: g.span_examples(&mut substream(2, purpose::DATA), n / 2),
        }
    }

    #[test]
    fn span_encoding_layout() {
        let v = vocab();
        let ex = SpanExample {
            question: vec!["who".into(), "sleeps".into()],
            context: ["the", "dog", "sleeps", "."].map(String::from).to_vec(),
            answer: (0, 1),
        };
        let e = encode_span(&v, &ex, 64).unwrap();
        assert_eq!(e.tokens.len(), 9);
        assert_eq!((e.tokens[0], e.tokens[3], e.tokens[8]), (CLS, SEP, SEP));
        assert_eq!(e.context_start, 4);
        assert_eq!(e.answer, (4, 5));
        assert_eq!(e.segments, [0, 0, 0, 0, 1, 1, 1, 1, 1]);
        assert_eq!(e.tokens[4], v.id("the"));
        assert!(encode_span(&v, &ex, 8).is_err());
    }

    #[test]
    fn best_span_respects_order_and_length() {
        let start = [0.0, 5.0, 1.0, 0.0];
        let end = [3.0, 0.0, 1.0, 4.0];
        assert_eq!(best_span(&start, &end, 8), (1, 3));
        assert_eq!(best_span(&start, &end, 2), (1, 2));
    }

    #[test]
    fn deterministic_and_scores_in_range() {
        let v = vocab();
        let model = EncoderModel::<f32>::new(&tiny(v.len()), 0).unwrap();
        let data = span_data(40);
        let p = FinetuneParams { steps: 6, batch_size: 4, ..FinetuneParams::for_task(TaskKind::Span) };
        let (_, _, a) = finetune(&model, &v, &data, &p, 5).unwrap();
        let (_, _, b) = finetune(&model, &v, &data, &p, 5).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.losses, b.losses);
        let m = a.metrics.unwrap();
        for s in &m.scores {
            assert!((0.0..=1.0).contains(&s.value));
        }
        assert_eq!(a.finetune.as_ref().unwrap(), &p);
    }

    #[test]
    fn classification_learns_polarity() {
        let v = vocab();
        let model = EncoderModel::<f32>::new(&tiny(v.len()), 0).unwrap();
        let g = ToyGrammar::default();
        let data = TaskData::Classification {
            train: g.classification_examples(&mut substream(3, purpose::DATA), 200),
            eval: g.classification_examples(&mut substream(4, purpose::DATA), 100),
        };
        let p = FinetuneParams { steps: 150, lr: 2e-3, ..FinetuneParams::for_task(TaskKind::Classification) };
        let (_, _, rec) = finetune(&model, &v, &data, &p, 1).unwrap();
        let acc = rec.metrics.unwrap().get("accuracy").unwrap();
        assert!(acc > 0.8, "{acc}");
    }

    #[test]
    fn task_mismatch_is_an_input_error() {
        let v = vocab();
        let model = EncoderModel::<f32>::new(&tiny(v.len()), 0).unwrap();
        let p = FinetuneParams::for_task(TaskKind::Classification);
        assert!(matches!(finetune(&model, &v, &span_data(4), &p, 0), Err(Error::Input(_))));
    }
}
