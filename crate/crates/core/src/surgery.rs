//! Post-hoc removal of intermediate blocks from a pre-trained checkpoint.
//!
//! Intermediate parameters are named by the self-attention block they
//! follow, so a retained block keeps its name and bytes; only the tensor
//! directory and blob are rewritten.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Manifest, TensorEntry};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::encoder::intermediate_param_names;
use crate::model::{build_layout, census, BlockLayout, Elision, EncoderModel};
use crate::train::{finetune, FinetuneParams, TaskData, TrialRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgeryPlan {
    pub source_layout: BlockLayout,
    pub target: Elision,
    /// Parameter names to delete, in directory order.
    pub delete: Vec<String>,
    pub target_layout: BlockLayout,
}

impl SurgeryPlan {
    pub fn is_identity(&self) -> bool {
        self.delete.is_empty()
    }
}

/// Plans the removal of every intermediate block that layout `target`
/// does not keep. The source must be unmodified, except that planning a
/// checkpoint's own `n` gives an empty plan.
pub fn plan_surgery(manifest: &Manifest, target: Elision) -> Result<SurgeryPlan> {
    let config = &manifest.config;
    let target_layout = build_layout(config.m, target)?;
    if config.n == target {
        return Ok(SurgeryPlan {
            source_layout: manifest.layout.clone(),
            target,
            delete: Vec::new(),
            target_layout,
        });
    }
    if !config.n.is_unmodified() {
        return Err(Error::Precondition(format!(
            "surgery starts from an unmodified (n=1) checkpoint; this one has n={}",
            config.n
        )));
    }
    let delete = manifest
        .layout
        .intermediate_positions()
        .into_iter()
        .filter(|&i| !target.follows(i))
        .flat_map(intermediate_param_names)
        .collect();
    Ok(SurgeryPlan {
        source_layout: manifest.layout.clone(),
        target,
        delete,
        target_layout,
    })
}

/// Drops the planned tensors and declares the target layout. Retained
/// tensors are copied byte for byte.
pub fn apply_surgery(source: &Checkpoint, plan: &SurgeryPlan) -> Result<Checkpoint> {
    source.verify()?;
    let m = &source.manifest;
    if m.layout != plan.source_layout {
        return Err(Error::Integrity(format!(
            "plan expects layout [{}] but checkpoint has [{}]",
            plan.source_layout.render(),
            m.layout.render()
        )));
    }
    if plan.target_layout != build_layout(m.config.m, plan.target)? {
        return Err(Error::Integrity("plan target layout disagrees with its elision factor".into()));
    }
    if plan.is_identity() {
        if m.config.n != plan.target {
            return Err(Error::Integrity(format!(
                "empty plan to n={} for a checkpoint with n={}",
                plan.target, m.config.n
            )));
        }
        return Ok(source.clone());
    }
    let delete: HashSet<&str> = plan.delete.iter().map(String::as_str).collect();
    if let Some(missing) = plan.delete.iter().find(|d| source.entry(d).is_none()) {
        return Err(Error::Integrity(format!("plan deletes {missing}, which the checkpoint lacks")));
    }
    let mut blob = Vec::with_capacity(source.blob.len());
    let mut tensors = Vec::with_capacity(m.tensors.len() - delete.len());
    for e in m.tensors.iter().filter(|e| !delete.contains(e.name.as_str())) {
        let bytes = &source.blob[e.offset as usize..(e.offset + e.length) as usize];
        tensors.push(TensorEntry {
            offset: blob.len() as u64,
            ..e.clone()
        });
        blob.extend_from_slice(bytes);
    }
    let mut config = m.config.clone();
    config.n = plan.target;
    let metadata = m.metadata.advance("surgery", m.metadata.step, m.metadata.seed);
    let out = Checkpoint {
        manifest: Manifest {
            format_version: m.format_version,
            config,
            layout: plan.target_layout.clone(),
            tensors,
            metadata,
            blob_length: blob.len() as u64,
        },
        blob,
    };
    out.verify()?;
    Ok(out)
}

/// One score of one fine-tuning run in the surgery comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgeryRow {
    pub n: String,
    pub params: u64,
    pub throughput_tok_s: f64,
    pub task: String,
    pub score_name: String,
    pub score: f64,
    pub trial: usize,
    pub seed: u64,
    /// `cotrained` or `surgery`.
    pub variant: String,
}

fn rows_for(record: &TrialRecord, params: u64, trial: usize, variant: &str) -> Vec<SurgeryRow> {
    let metrics = record.metrics.as_ref().expect("fine-tuning records metrics");
    metrics
        .scores
        .iter()
        .map(|s| SurgeryRow {
            n: record.n.to_string(),
            params,
            throughput_tok_s: record.tokens_per_second,
            task: metrics.task.clone(),
            score_name: s.name.clone(),
            score: 100.0 * s.value,
            trial,
            seed: record.seed,
            variant: variant.into(),
        })
        .collect()
}

/// For each target `n` and seed: surgery on `source`, then fine-tune. When
/// a co-trained checkpoint with the same `n` is supplied it is fine-tuned
/// with the same seed for comparison.
pub fn run_surgery_experiment(
    source: &Checkpoint,
    cotrained: &[Checkpoint],
    targets: &[Elision],
    vocab: &Vocabulary,
    data: &TaskData,
    params: &FinetuneParams,
    seeds: &[u64],
) -> Result<Vec<SurgeryRow>> {
    if seeds.is_empty() || targets.is_empty() {
        return Err(Error::Input("surgery experiment needs at least one n and one seed".into()));
    }
    let mut rows = Vec::new();
    for &n in targets {
        let plan = plan_surgery(&source.manifest, n)?;
        let cut: EncoderModel<f32> = apply_surgery(source, &plan)?.to_model()?;
        let count = census(cut.config()).total();
        let partner = cotrained.iter().find(|c| c.manifest.config.n == n).map(|c| c.to_model::<f32>()).transpose()?;
        for (trial, &seed) in seeds.iter().enumerate() {
            let (_, _, rec) = finetune(&cut, vocab, data, params, seed)?;
            rows.extend(rows_for(&rec, count, trial, "surgery"));
            if let Some(model) = &partner {
                let (_, _, rec) = finetune(model, vocab, data, params, seed)?;
                rows.extend(rows_for(&rec, count, trial, "cotrained"));
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::Metadata;
    use crate::model::ModelConfig;

    fn source(m: usize) -> Checkpoint {
        let mut config = ModelConfig::toy(30, Elision::Every(1));
        config.m = m;
        config.hidden = 8;
        config.heads = 2;
        config.ff = 16;
        let model = EncoderModel::<f32>::new(&config, 4).unwrap();
        Checkpoint::from_model(&model, Metadata::new("pretrained", 10, 4))
    }

    #[test]
    fn plan_for_n2_on_twelve_blocks() {
        let ck = source(12);
        let plan = plan_surgery(&ck.manifest, Elision::Every(2)).unwrap();
        assert_eq!(plan.delete.len(), 6 * 6);
        for i in [0, 2, 4, 6, 8, 10] {
            assert!(plan.delete.contains(&format!("intermediate.{i}.up.weight")));
        }
        for i in [1, 3, 5, 7, 9, 11] {
            assert!(!plan.delete.iter().any(|d| d.starts_with(&format!("intermediate.{i}."))));
        }
        assert!(plan.delete.iter().all(|d| d.starts_with("intermediate.")));
        assert_eq!(plan.target_layout, build_layout(12, Elision::Every(2)).unwrap());
    }

    #[test]
    fn plan_infinity_and_identity() {
        let ck = source(12);
        assert_eq!(plan_surgery(&ck.manifest, Elision::Infinity).unwrap().delete.len(), 12 * 6);
        assert!(plan_surgery(&ck.manifest, Elision::Every(1)).unwrap().is_identity());
    }

    #[test]
    fn rejects_modified_source() {
        let ck = apply_surgery(&source(4), &plan_surgery(&source(4).manifest, Elision::Every(2)).unwrap()).unwrap();
        assert!(matches!(plan_surgery(&ck.manifest, Elision::Infinity), Err(Error::Precondition(_))));
    }

    #[test]
    fn retained_bytes_and_census() {
        let ck = source(6);
        for n in [Elision::Every(2), Elision::Every(3), Elision::Every(4), Elision::Infinity] {
            let cut = apply_surgery(&ck, &plan_surgery(&ck.manifest, n).unwrap()).unwrap();
            for e in &cut.manifest.tensors {
                assert_eq!(cut.tensor_bytes(&e.name), ck.tensor_bytes(&e.name), "{}", e.name);
            }
            let model: EncoderModel<f32> = cut.to_model().unwrap();
            assert_eq!(model.parameter_count(), census(&ck.manifest.config.with_n(n)).total());
            assert_eq!(cut.manifest.metadata.phase, "surgery");
        }
    }

    #[test]
    fn identity_and_repeat_surgery_are_no_ops() {
        let ck = source(4);
        let same = apply_surgery(&ck, &plan_surgery(&ck.manifest, Elision::Every(1)).unwrap()).unwrap();
        assert_eq!(same, ck);
        let cut = apply_surgery(&ck, &plan_surgery(&ck.manifest, Elision::Every(2)).unwrap()).unwrap();
        let again = apply_surgery(&cut, &plan_surgery(&cut.manifest, Elision::Every(2)).unwrap()).unwrap();
        assert_eq!(again, cut);
    }

    #[test]
    fn mismatched_plan_is_an_integrity_error() {
        let plan = plan_surgery(&source(4).manifest, Elision::Every(2)).unwrap();
        assert!(matches!(apply_surgery(&source(6), &plan), Err(Error::Integrity(_))));
        let mut bad = plan.clone();
        bad.delete.push("intermediate.9.up.weight".into());
        assert!(matches!(apply_surgery(&source(4), &bad), Err(Error::Integrity(_))));
    }
}
