//! Masked-LM pre-training, fine-tuning heads, metrics and the n sweep.

pub mod finetune;
pub mod metrics;
pub mod mlm;
pub mod optim;
pub mod pretrain;
pub mod schedule;
pub mod sweep;

pub use finetune::{encode_span, evaluate_task, finetune, FinetuneParams, TaskData, TaskHead, TaskKind};
pub use metrics::{accuracy, score_span, Score, TaskMetrics};
pub use mlm::{make_mlm_batch, mask_tokens, MlmBatch};
pub use optim::AdamW;
pub use pretrain::{eval_batches, eval_loss, pretrain, TrialRecord};
pub use schedule::PretrainSchedule;
pub use sweep::{run_tradeoff_sweep, SweepOutcome, SweepPlan, SweepRow, UNTRAINED};
