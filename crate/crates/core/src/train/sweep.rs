//! The size/speed/score trade-off across elision factors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::finetune::{finetune, FinetuneParams, TaskData};
use super::pretrain::{pretrain, TrialRecord};
use super::schedule::PretrainSchedule;
use crate::corpus::TokenCorpus;
use crate::error::{Error, Result};
use crate::model::{census, Elision, EncoderModel, ModelConfig};

/// Label used in the `n` column for never-pre-trained networks.
pub const UNTRAINED: &str = "untrained";

/// One score of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Elision factor, or `untrained`.
    pub n: String,
    /// Parameter census total.
    pub params: u64,
    /// Pre-training tokens per second; fine-tuning tokens per second for
    /// `untrained` rows.
    pub throughput_tok_s: f64,
    pub task: String,
    pub score_name: String,
    /// Percent.
    pub score: f64,
    pub trial: usize,
    pub seed: u64,
}

/// Rows for every score in a fine-tuning record.
pub fn rows_from_record(n: &str, params: u64, throughput: f64, trial: usize, record: &TrialRecord) -> Vec<SweepRow> {
    let Some(metrics) = &record.metrics else {
        return Vec::new();
    };
    metrics
        .scores
        .iter()
        .map(|s| SweepRow {
            n: n.into(),
            params,
            throughput_tok_s: throughput,
            task: metrics.task.clone(),
            score_name: s.name.clone(),
            score: 100.0 * s.value,
            trial,
            seed: record.seed,
        })
        .collect()
}

/// What to run: every `n` in `ns` is pre-trained once per seed with the
/// same schedule, then fine-tuned on every task with the task's fixed
/// hyper-parameters.
#[derive(Debug, Clone)]
pub struct SweepPlan<'a> {
    /// Shape shared by every variant; its `n` is ignored.
    pub config: ModelConfig,
    pub ns: Vec<Elision>,
    pub schedule: PretrainSchedule,
    pub corpus: &'a TokenCorpus,
    pub tasks: Vec<(TaskData, FinetuneParams)>,
    pub seeds: Vec<u64>,
    /// Also fine-tune a randomly initialized unmodified network per seed.
    pub untrained_baseline: bool,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// Pre-training records, in `ns` × seed order.
    pub pretraining: Vec<TrialRecord>,
}

/// Runs the plan. With `checkpoints` set, pre-trained weights are saved as
/// `<dir>/pretrained-n<n>-seed<seed>`.
pub fn run_tradeoff_sweep(plan: &SweepPlan<'_>, checkpoints: Option<&Path>) -> Result<SweepOutcome> {
    if plan.ns.is_empty() || plan.seeds.is_empty() {
        return Err(Error::Input("sweep needs at least one n and one seed".into()));
    }
    let vocab = plan.corpus.vocab();
    let mut rows = Vec::new();
    let mut pretraining = Vec::new();
    for &n in &plan.ns {
        let config = plan.config.with_n(n);
        let count = census(&config).total();
        for (trial, &seed) in plan.seeds.iter().enumerate() {
            let out = checkpoints.map(|d| d.join(format!("pretrained-n{n}-seed{seed}")));
            let (model, record) = pretrain::<f32>(&config, &plan.schedule, plan.corpus, seed, out.as_deref())?;
            for (data, params) in &plan.tasks {
                let (_, _, ft) = finetune(&model, vocab, data, params, seed)?;
                rows.extend(rows_from_record(&n.to_string(), count, record.tokens_per_second, trial, &ft));
            }
            pretraining.push(record);
        }
    }
    if plan.untrained_baseline {
        let config = plan.config.with_n(Elision::UNMODIFIED);
        let count = census(&config).total();
        for (trial, &seed) in plan.seeds.iter().enumerate() {
            let model = EncoderModel::<f32>::new(&config, seed)?;
            for (data, params) in &plan.tasks {
                let (_, _, ft) = finetune(&model, vocab, data, params, seed)?;
                rows.extend(rows_from_record(UNTRAINED, count, ft.tokens_per_second, trial, &ft));
            }
        }
    }
    Ok(SweepOutcome { rows, pretraining })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize_corpus, ToyGrammar};
    use crate::fsutil::csv_string;
    use crate::rng::{purpose, substream};
    use crate::train::TaskKind;

    #[test]
    fn one_row_per_n_trial_and_score() {
        let g = ToyGrammar::default();
        let corpus = tokenize_corpus(&g.corpus_text(&mut substream(1, purpose::DATA), 60), 256, 0).unwrap();
        let mut config = ModelConfig::toy(corpus.vocab().len(), Elision::UNMODIFIED);
        config.m = 2;
        config.hidden = 16;
        config.heads = 2;
        config.ff = 32;
        let mut ft = FinetuneParams::for_task(TaskKind::Classification);
        ft.steps = 3;
        let schedule = PretrainSchedule {
            batch_size: 2,
            ..PretrainSchedule::toy(4)
        };
        let plan = SweepPlan {
            config: config.clone(),
            ns: vec![Elision::Every(1), Elision::Infinity],
            schedule,
            corpus: &corpus,
            tasks: vec![(TaskData::generate(TaskKind::Classification, &g, 8, 4, 2), ft)],
            seeds: vec![5, 6],
            untrained_baseline: true,
        };
        let out = run_tradeoff_sweep(&plan, None).unwrap();
        assert_eq!(out.rows.len(), 3 * 2);
        assert_eq!(out.pretraining.len(), 4);
        for r in &out.rows {
            let n = if r.n == UNTRAINED { Elision::UNMODIFIED } else { r.n.parse().unwrap() };
            assert_eq!(r.params, census(&config.with_n(n)).total());
            assert!(r.throughput_tok_s > 0.0 && (0.0..=100.0).contains(&r.score));
        }
        let csv = csv_string(&out.rows).unwrap();
        assert!(csv.starts_with("n,params,throughput_tok_s,task,score_name,score,trial,seed\n"));
    }
}
