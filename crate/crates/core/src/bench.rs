//! Training and inference throughput across elision factors.
//!
//! Within a round, configurations take turns one timed iteration at a time,
//! so slow drift in machine load hits all of them alike. A configuration's
//! throughput is the median over rounds of the per-round median iteration
//! time.

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mode};
use crate::corpus::tokenizer::RESERVED;
use crate::error::{Error, Result};
use crate::model::{mlm_logits, Elision, EncoderInput, EncoderModel, ModelConfig};
use crate::rng::{purpose, substream};

pub const MIN_WARMUP: usize = 3;
pub const MIN_ITERS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    pub batch: usize,
    pub seq: usize,
    /// Untimed iterations before each round.
    pub warmup: usize,
    /// Timed iterations per round.
    pub iters: usize,
    pub rounds: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            batch: 2,
            seq: 64,
            warmup: MIN_WARMUP,
            iters: MIN_ITERS,
            rounds: 3,
        }
    }
}

impl BenchSettings {
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.warmup < MIN_WARMUP || self.iters < MIN_ITERS {
            return Err(Error::Parameter(format!(
                "bench needs at least {MIN_WARMUP} warm-up and {MIN_ITERS} measured iterations (got {} and {})",
                self.warmup, self.iters
            )));
        }
        if self.batch == 0 || self.rounds == 0 || self.seq < 2 || self.seq > config.max_positions {
            return Err(Error::Parameter(format!(
                "bench needs batch, rounds > 0 and 2 <= seq <= {} (got {}, {}, {})",
                config.max_positions, self.batch, self.rounds, self.seq
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config_id: String,
    pub n: String,
    pub batch: usize,
    pub seq: usize,
    pub warmup: usize,
    pub iters: usize,
    pub rounds: usize,
    pub forward_tok_s: f64,
    /// Forward plus backward through a masked-LM loss.
    pub train_tok_s: f64,
    /// `train_tok_s` over the n=1 run with the same dimensions.
    pub relative_train: f64,
    pub relative_forward: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        (v[k / 2 - 1] + v[k / 2]) / 2.0
    }
}

struct Case {
    n: Elision,
    model: EncoderModel<f32>,
    forward: Vec<f64>,
    train: Vec<f64>,
}

/// Benchmarks `base` with every `n` in `ns`; an n=1 run is added when
/// missing so the relative columns have a baseline. Reports come back in
/// `ns` order, with an added baseline first.
pub fn bench(base: &ModelConfig, ns: &[Elision], settings: &BenchSettings) -> Result<Vec<BenchReport>> {
    settings.validate(base)?;
    let mut order: Vec<Elision> = Vec::new();
    if !ns.contains(&Elision::UNMODIFIED) {
        order.push(Elision::UNMODIFIED);
    }
    order.extend(ns.iter().copied());
    let (b, s) = (settings.batch, settings.seq);
    let mut rng = substream(0, purpose::DATA);
    let tokens: Vec<usize> = (0..b * s).map(|_| rng.random_range(RESERVED.len()..base.vocab)).collect();
    let input = EncoderInput::from_rows(&tokens.chunks(s).map(<[usize]>::to_vec).collect::<Vec<_>>(), 0)?;
    let positions: Vec<usize> = (0..b * s).step_by(7).collect();
    let targets: Vec<usize> = positions.iter().map(|&p| tokens[p]).collect();

    let mut cases = order
        .iter()
        .map(|&n| {
            Ok(Case {
                n,
                model: EncoderModel::new(&base.with_n(n), 0)?,
                forward: Vec::new(),
                train: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut dropout = substream(0, purpose::DROPOUT);
    let mut step = |model: &EncoderModel<f32>, train: bool| -> Result<f64> {
        let started = Instant::now();
        let graph = Graph::new();
        let mode = if train { Mode::Train } else { Mode::Eval };
        let (params, out) = model.forward(&graph, &input, mode, train, &mut dropout)?;
        let loss = mlm_logits(model.config(), &params, out.hidden, &positions)?.cross_entropy(&targets)?;
        if train {
            graph.backward(loss)?;
        }
        Ok(started.elapsed().as_secs_f64())
    };
    for _ in 0..settings.rounds {
        for case in &cases {
            for train in [false, true] {
                for _ in 0..settings.warmup {
                    step(&case.model, train)?;
                }
            }
        }
        let mut times = vec![(Vec::new(), Vec::new()); cases.len()];
        for _ in 0..settings.iters {
            for (case, (forward, train)) in cases.iter().zip(&mut times) {
                forward.push(step(&case.model, false)?);
                train.push(step(&case.model, true)?);
            }
        }
        for (case, (forward, train)) in cases.iter_mut().zip(times) {
            case.forward.push(median(forward));
            case.train.push(median(train));
        }
    }
    let tokens = (b * s) as f64;
    let rate = |times: &[f64]| tokens / median(times.to_vec());
    let baseline = cases.iter().find(|c| c.n == Elision::UNMODIFIED).expect("baseline present");
    let (base_train, base_forward) = (rate(&baseline.train), rate(&baseline.forward));
    Ok(cases
        .iter()
        .map(|c| {
            let (train, forward) = (rate(&c.train), rate(&c.forward));
            BenchReport {
                config_id: format!("m{}-h{}-n{}-b{}-s{}", base.m, base.hidden, c.n, b, s),
                n: c.n.to_string(),
                batch: b,
                seq: s,
                warmup: settings.warmup,
                iters: settings.iters,
                rounds: settings.rounds,
                forward_tok_s: forward,
                train_tok_s: train,
                relative_train: train / base_train,
                relative_forward: forward / base_forward,
            }
        })
        .collect())
}
