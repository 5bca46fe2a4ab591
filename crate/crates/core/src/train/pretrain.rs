//! Masked-LM pre-training.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::TaskMetrics;
use super::mlm::{make_mlm_batch, MlmBatch};
use super::optim::AdamW;
use super::schedule::PretrainSchedule;
use super::finetune::FinetuneParams;
use crate::autodiff::{Gradients, Graph, Mode};
use crate::checkpoint::{save_checkpoint, Metadata};
use crate::corpus::TokenCorpus;
use crate::error::{Error, Result};
use crate::model::{mlm_logits, BoundParams, Elision, EncoderModel, ModelConfig};
use crate::rng::{purpose, substream};
use crate::tensor::{Float, Tensor};

/// Batches used to measure held-out MLM loss; drawn from a fixed stream so
/// every trial and variant is scored on the same masks.
pub const EVAL_BATCHES: usize = 8;
const EVAL_SEED: u64 = 0x5eed;

/// Everything needed to reproduce and audit one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub n: Elision,
    pub schedule: Option<PretrainSchedule>,
    pub finetune: Option<FinetuneParams>,
    /// Training loss of every update, in order.
    pub losses: Vec<f64>,
    /// Sequence length used by every update.
    pub seq_lens: Vec<usize>,
    /// Held-out MLM loss before the first and after the last update.
    pub initial_eval_loss: Option<f64>,
    pub final_eval_loss: Option<f64>,
    pub metrics: Option<TaskMetrics>,
    /// Real (non-pad) training tokens per wall-clock second.
    pub tokens_per_second: f64,
    pub checkpoint: Option<PathBuf>,
}

impl TrialRecord {
    pub(crate) fn empty(seed: u64, n: Elision) -> Self {
        TrialRecord {
            seed,
            n,
            schedule: None,
            finetune: None,
            losses: Vec::new(),
            seq_lens: Vec::new(),
            initial_eval_loss: None,
            final_eval_loss: None,
            metrics: None,
            tokens_per_second: 0.0,
            checkpoint: None,
        }
    }
}

/// Gradients of every bound parameter, keyed by name.
pub(crate) fn named_gradients<T: Float>(
    params: &BoundParams<'_, T>,
    grads: &mut Gradients<T>,
) -> HashMap<String, Tensor<T>> {
    params
        .iter()
        .filter_map(|(name, &v)| grads.take(v).map(|g| (name.clone(), g)))
        .collect()
}

/// Mean cross-entropy of the masked positions of `batch`.
pub fn mlm_loss<T: Float>(
    model: &EncoderModel<T>,
    batch: &MlmBatch,
    mode: Mode,
    seed_stream: &mut crate::rng::Rng,
) -> Result<f64> {
    let graph = Graph::new();
    let (params, out) = model.forward(&graph, &batch.input, mode, false, seed_stream)?;
    let loss = mlm_logits(model.config(), &params, out.hidden, &batch.positions)?.cross_entropy(&batch.targets)?;
    Ok(loss.value().item().to_f64_lossy())
}

pub fn eval_batches(corpus: &TokenCorpus, schedule: &PretrainSchedule) -> Result<Vec<MlmBatch>> {
    let mut rng = substream(EVAL_SEED, purpose::MLM);
    (0..EVAL_BATCHES)
        .map(|_| make_mlm_batch(corpus, schedule.seq_len_phase1, schedule.batch_size, schedule.mask_rate.max(0.15), &mut rng))
        .collect()
}

/// Mean held-out MLM loss in eval mode.
pub fn eval_loss<T: Float>(model: &EncoderModel<T>, batches: &[MlmBatch]) -> Result<f64> {
    let mut rng = substream(0, purpose::DROPOUT);
    let mut total = 0.0;
    for b in batches {
        total += mlm_loss(model, b, Mode::Eval, &mut rng)?;
    }
    Ok(total / batches.len() as f64)
}

/// Trains a fresh encoder with masked-LM on `corpus`. When `out` is given
/// the final weights are saved there as a checkpoint.
pub fn pretrain<T: Float>(
    config: &ModelConfig,
    schedule: &PretrainSchedule,
    corpus: &TokenCorpus,
    seed: u64,
    out: Option<&Path>,
) -> Result<(EncoderModel<T>, TrialRecord)> {
    schedule.validate(config.max_positions)?;
    if corpus.vocab().len() > config.vocab {
        return Err(Error::Input(format!(
            "corpus vocabulary of {} exceeds model vocab {}",
            corpus.vocab().len(),
            config.vocab
        )));
    }
    let mut model = EncoderModel::<T>::new(config, seed)?;
    let mut data_rng = substream(seed, purpose::MLM);
    let mut dropout_rng = substream(seed, purpose::DROPOUT);
    let mut opt = AdamW::new(schedule.weight_decay);
    let held_out = eval_batches(corpus, schedule)?;

    let mut record = TrialRecord::empty(seed, config.n);
    record.schedule = Some(schedule.clone());
    record.initial_eval_loss = Some(eval_loss(&model, &held_out)?);

    let mut tokens = 0usize;
    let mut busy = 0.0f64;
    for step in 1..=schedule.total_steps {
        let seq_len = schedule.seq_len_at(step);
        let lr = schedule.lr_at(step);
        let batch = make_mlm_batch(corpus, seq_len, schedule.batch_size, schedule.mask_rate, &mut data_rng)?;
        let started = Instant::now();
        let diverged = |e: Error| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("pre-training diverged at step {step} (lr {lr:.3e}): {msg}")),
            other => other,
        };
        let (loss, grads) = {
            let graph = Graph::new();
            let (params, out) = model.forward(&graph, &batch.input, Mode::Train, true, &mut dropout_rng).map_err(diverged)?;
            if batch.positions.is_empty() {
                (0.0, HashMap::new())
            } else {
                let loss = mlm_logits(config, &params, out.hidden, &batch.positions)
                    .and_then(|l| l.cross_entropy(&batch.targets))
                    .map_err(diverged)?;
                let mut g = graph.backward(loss)?;
                (loss.value().item().to_f64_lossy(), named_gradients(&params, &mut g))
            }
        };
        opt.update(model.params_mut(), &grads, lr)?;
        if let Some((name, _)) = model.params().iter().find(|(_, t)| !t.all_finite()) {
            return Err(Error::NonFinite(format!(
                "pre-training diverged at step {step} (lr {lr:.3e}): parameter {name} became non-finite"
            )));
        }
        busy += started.elapsed().as_secs_f64();
        tokens += batch.input.real_tokens();
        record.losses.push(loss);
        record.seq_lens.push(seq_len);
    }
    record.tokens_per_second = if busy > 0.0 { tokens as f64 / busy } else { 0.0 };
    record.final_eval_loss = Some(eval_loss(&model, &held_out)?);
    if let Some(base) = out {
        let meta = Metadata::new("init", 0, seed).advance("pretrained", schedule.total_steps, seed);
        save_checkpoint(&model, meta, base)?;
        record.checkpoint = Some(base.to_path_buf());
    }
    Ok((model, record))
}
