//! Checkpoints as a JSON manifest plus a raw little-endian blob.
//!
//! `<base>.manifest.json` records the format version, model config, block
//! layout, an ordered tensor directory and training metadata.
//! `<base>.blob` is the concatenation of every tensor's bytes in directory
//! order. Both files are written atomically.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::tokenizer::with_suffix;
use crate::error::{Error, Result};
use crate::fsutil::{write_atomic, write_json};
use crate::model::encoder::param_specs;
use crate::model::{build_layout, BlockLayout, EncoderModel, ModelConfig};
use crate::tensor::{DType, Float, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    /// Byte offset into the blob.
    pub offset: u64,
    /// Byte length.
    pub length: u64,
}

/// Where a checkpoint came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    /// `init`, `pretrained`, `surgery`, ...
    pub phase: String,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Seed of the run that produced the current weights.
    pub seed: u64,
    /// Earlier stages, oldest first, e.g. `init seed=3`, `pretrain steps=2000`.
    pub lineage: Vec<String>,
}

impl Metadata {
    pub fn new(phase: &str, step: usize, seed: u64) -> Self {
        Metadata {
            phase: phase.into(),
            step,
            seed,
            lineage: Vec::new(),
        }
    }

    /// Appends the current phase to the lineage and starts a new one.
    pub fn advance(&self, phase: &str, step: usize, seed: u64) -> Self {
        let mut lineage = self.lineage.clone();
        lineage.push(format!("{} step={} seed={}", self.phase, self.step, self.seed));
        Metadata {
            phase: phase.into(),
            step,
            seed,
            lineage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub layout: BlockLayout,
    pub tensors: Vec<TensorEntry>,
    pub metadata: Metadata,
    pub blob_length: u64,
}

/// In-memory checkpoint. Surgery edits the directory and blob directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub blob: Vec<u8>,
}

pub fn manifest_path(base: &Path) -> PathBuf {
    with_suffix(base, ".manifest.json")
}

pub fn blob_path(base: &Path) -> PathBuf {
    with_suffix(base, ".blob")
}

fn decode<T: Float>(bytes: &[u8], dtype: DType) -> Vec<T> {
    match dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::read_le(c) as f64))
            .collect(),
        DType::F64 => bytes.chunks_exact(8).map(|c| T::from_f64_lossy(f64::read_le(c))).collect(),
    }
}

impl Checkpoint {
    /// Serializes `model`'s parameters in canonical order.
    pub fn from_model<T: Float>(model: &EncoderModel<T>, metadata: Metadata) -> Self {
        let mut blob = Vec::new();
        let mut tensors = Vec::new();
        for name in model.names() {
            let t = model.param(&name).expect("canonical names exist");
            let bytes = t.bytes_le();
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                dtype: T::DTYPE,
                offset: blob.len() as u64,
                length: bytes.len() as u64,
            });
            blob.extend_from_slice(&bytes);
        }
        Checkpoint {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                config: model.config().clone(),
                layout: model.layout().clone(),
                tensors,
                metadata,
                blob_length: blob.len() as u64,
            },
            blob,
        }
    }

    /// Checks version, blob length, directory coverage and that the
    /// directory is exactly the parameter set of the declared layout.
    pub fn verify(&self) -> Result<()> {
        let m = &self.manifest;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: m.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let found = self.blob.len() as u64;
        if found < m.blob_length {
            return Err(Error::Truncated {
                expected: m.blob_length,
                found,
            });
        }
        if found > m.blob_length {
            return Err(Error::Integrity(format!(
                "blob has {found} bytes but the manifest declares {}",
                m.blob_length
            )));
        }
        let mut cursor = 0u64;
        for e in &m.tensors {
            let want = (e.shape.iter().product::<usize>() * e.dtype.size_in_bytes()) as u64;
            if e.offset != cursor || e.length != want {
                return Err(Error::Integrity(format!(
                    "directory entry {} (offset {}, length {}) does not continue at byte {cursor} with {want} bytes",
                    e.name, e.offset, e.length
                )));
            }
            cursor += e.length;
        }
        if cursor != m.blob_length {
            return Err(Error::Integrity(format!(
                "directory covers {cursor} bytes of a {}-byte blob",
                m.blob_length
            )));
        }
        let expected_layout = build_layout(m.config.m, m.config.n)?;
        if expected_layout != m.layout {
            return Err(Error::Integrity(format!(
                "manifest layout [{}] does not match its config (m={}, n={}) [{}]",
                m.layout.render(),
                m.config.m,
                m.config.n,
                expected_layout.render()
            )));
        }
        let specs = param_specs(&m.config, &m.layout);
        let names_match = specs.len() == m.tensors.len()
            && specs.iter().zip(&m.tensors).all(|(s, e)| s.name == e.name && s.shape == e.shape);
        if !names_match {
            return Err(Error::Integrity(format!(
                "tensor directory does not match the parameters of layout [{}]",
                m.layout.render()
            )));
        }
        Ok(())
    }

    pub fn entry(&self, name: &str) -> Option<&TensorEntry> {
        self.manifest.tensors.iter().find(|e| e.name == name)
    }

    /// Raw bytes of one tensor.
    pub fn tensor_bytes(&self, name: &str) -> Option<&[u8]> {
        self.entry(name)
            .map(|e| &self.blob[e.offset as usize..(e.offset + e.length) as usize])
    }

    /// Verifies, then rebuilds the model, converting dtype if needed.
    pub fn to_model<T: Float>(&self) -> Result<EncoderModel<T>> {
        self.verify()?;
        let mut params = BTreeMap::new();
        for e in &self.manifest.tensors {
            let bytes = &self.blob[e.offset as usize..(e.offset + e.length) as usize];
            params.insert(e.name.clone(), Tensor::new(e.shape.clone(), decode(bytes, e.dtype))?);
        }
        EncoderModel::from_params(self.manifest.config.clone(), self.manifest.layout.clone(), params)
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        self.verify()?;
        write_atomic(&blob_path(base), &self.blob)?;
        write_json(&manifest_path(base), &self.manifest)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let mpath = manifest_path(base);
        let text = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let json_err = |source| Error::Json {
            path: mpath.clone(),
            source,
        };
        // read the version first so an old or future manifest reports that
        // rather than a field mismatch
        let raw: serde_json::Value = serde_json::from_slice(&text).map_err(json_err)?;
        let version = raw.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let manifest: Manifest = serde_json::from_value(raw).map_err(json_err)?;
        let bpath = blob_path(base);
        let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        let ck = Checkpoint { manifest, blob };
        ck.verify()?;
        Ok(ck)
    }
}

pub fn save_checkpoint<T: Float>(model: &EncoderModel<T>, metadata: Metadata, base: &Path) -> Result<()> {
    Checkpoint::from_model(model, metadata).save(base)
}

pub fn load_checkpoint<T: Float>(base: &Path) -> Result<(EncoderModel<T>, Metadata)> {
    let ck = Checkpoint::load(base)?;
    let model = ck.to_model()?;
    Ok((model, ck.manifest.metadata))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Elision;

    fn toy(n: Elision) -> EncoderModel<f32> {
        EncoderModel::new(&ModelConfig::toy(40, n), 9).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for n in [Elision::Every(1), Elision::Every(3), Elision::Infinity] {
            let model = toy(n);
            let base = dir.path().join(format!("m{n}"));
            let meta = Metadata::new("init", 0, 9);
            save_checkpoint(&model, meta.clone(), &base).unwrap();
            let (back, meta_back) = load_checkpoint::<f32>(&base).unwrap();
            assert_eq!(meta_back, meta);
            assert_eq!(back.layout(), model.layout());
            for (name, t) in model.params() {
                assert_eq!(back.param(name).unwrap().bytes_le(), t.bytes_le(), "{name}");
            }
        }
    }

    #[test]
    fn saves_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let model = toy(Elision::Every(2));
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        save_checkpoint(&model, Metadata::new("init", 0, 9), &a).unwrap();
        save_checkpoint(&model, Metadata::new("init", 0, 9), &b).unwrap();
        assert_eq!(fs::read(blob_path(&a)).unwrap(), fs::read(blob_path(&b)).unwrap());
        assert_eq!(fs::read(manifest_path(&a)).unwrap(), fs::read(manifest_path(&b)).unwrap());
    }

    #[test]
    fn distinct_load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("m");
        save_checkpoint(&toy(Elision::Every(1)), Metadata::default(), &base).unwrap();
        let blob = fs::read(blob_path(&base)).unwrap();
        let manifest = fs::read_to_string(manifest_path(&base)).unwrap();

        fs::write(blob_path(&base), &blob[..blob.len() - 3]).unwrap();
        assert!(matches!(Checkpoint::load(&base), Err(Error::Truncated { .. })));

        fs::write(blob_path(&base), [&blob[..], &[0u8; 4]].concat()).unwrap();
        assert!(matches!(Checkpoint::load(&base), Err(Error::Integrity(_))));

        fs::write(blob_path(&base), &blob).unwrap();
        fs::write(manifest_path(&base), manifest.replace("\"format_version\": 1", "\"format_version\": 7")).unwrap();
        assert!(matches!(Checkpoint::load(&base), Err(Error::Version { found: 7, expected: 1 })));

        fs::write(manifest_path(&base), &manifest).unwrap();
        assert!(Checkpoint::load(&base).is_ok());
    }

    #[test]
    fn layout_mismatch_is_detected() {
        let mut ck = Checkpoint::from_model(&toy(Elision::Every(1)), Metadata::default());
        ck.manifest.config.n = Elision::Every(2);
        assert!(matches!(ck.verify(), Err(Error::Integrity(_))));
        let mut ck = Checkpoint::from_model(&toy(Elision::Every(1)), Metadata::default());
        ck.manifest.layout = build_layout(4, Elision::Infinity).unwrap();
        assert!(matches!(ck.verify(), Err(Error::Integrity(_))));
    }

    #[test]
    fn shape_inconsistency_is_detected() {
        let mut ck = Checkpoint::from_model(&toy(Elision::Every(1)), Metadata::default());
        ck.manifest.tensors[0].shape[0] += 1;
        assert!(matches!(ck.verify(), Err(Error::Integrity(_))));
    }

    #[test]
    fn dtype_conversion_on_load() {
        let model = toy(Elision::Every(2));
        let ck = Checkpoint::from_model(&model, Metadata::default());
        let wide: EncoderModel<f64> = ck.to_model().unwrap();
        let narrow: EncoderModel<f32> = Checkpoint::from_model(&wide, Metadata::default()).to_model().unwrap();
        for (name, t) in model.params() {
            assert_eq!(narrow.param(name).unwrap().data(), t.data());
        }
    }

    #[test]
    fn lineage_accumulates() {
        let m = Metadata::new("init", 0, 3).advance("pretrained", 100, 3).advance("surgery", 100, 3);
        assert_eq!(m.lineage, ["init step=0 seed=3", "pretrained step=100 seed=3"]);
    }
}
