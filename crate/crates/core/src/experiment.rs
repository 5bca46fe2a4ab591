//! Run configuration: a preset, a TOML file on top, then `key=value`
//! overrides on top of that. The fully resolved tree is what every command
//! records next to its outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::bench::BenchSettings;
use crate::cka::{PairCounting, Pooling};
use crate::corpus::{tokenize_corpus, DependencyCorpus, TokenCorpus, ToyGrammar, BUNDLED_CORPUS, BUNDLED_TREEBANK};
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};
use crate::model::{Elision, ModelConfig};
use crate::probe::ProbeParams;
use crate::train::{FinetuneParams, PretrainSchedule, TaskData, TaskKind};

/// File name of the resolved configuration written beside outputs.
pub const RESOLVED_CONFIG: &str = "resolved-config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Four-block desk encoder on the bundled toy corpus.
    Toy,
    /// BERT-base dimensions.
    BertBase,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Preset::Toy),
            "bert-base" => Ok(Preset::BertBase),
            _ => Err(Error::Parameter(format!("unknown preset {s:?} (expected toy or bert-base)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSettings {
    /// Pre-training text; the bundled toy corpus when absent.
    pub text: Option<PathBuf>,
    /// Treebank TSV; the bundled toy treebank when absent.
    pub treebank: Option<PathBuf>,
    pub vocab_size: usize,
    pub tokenizer_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSettings {
    pub tasks: Vec<TaskKind>,
    pub train_examples: usize,
    pub eval_examples: usize,
    pub data_seed: u64,
    /// Also fine-tune never-pre-trained networks in sweeps.
    pub untrained_baseline: bool,
    pub span: FinetuneParams,
    pub classification: FinetuneParams,
}

impl TaskSettings {
    pub fn params(&self, kind: TaskKind) -> &FinetuneParams {
        match kind {
            TaskKind::Span => &self.span,
            TaskKind::Classification => &self.classification,
        }
    }

    pub fn data(&self, kind: TaskKind) -> TaskData {
        TaskData::generate(kind, &ToyGrammar::default(), self.train_examples, self.eval_examples, self.data_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CkaSettings {
    /// Treebank sentences fed through every network.
    pub sentences: usize,
    pub counting: PairCounting,
    pub pooling: Pooling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seeds: Vec<u64>,
    /// Elision factors for multi-variant commands.
    pub ns: Vec<Elision>,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub corpus: CorpusSettings,
    pub pretrain: PretrainSchedule,
    pub tasks: TaskSettings,
    pub cka: CkaSettings,
    pub probe: ProbeParams,
    pub bench: BenchSettings,
}

/// Toy pre-training length that clears the loss plateau.
pub const TOY_PRETRAIN_STEPS: usize = 12000;

fn preset_defaults(preset: Preset) -> Result<Table> {
    let (model, pretrain, ns, bench) = match preset {
        Preset::Toy => (
            ModelConfig::toy(0, Elision::UNMODIFIED),
            PretrainSchedule::toy(TOY_PRETRAIN_STEPS),
            vec![Elision::Every(1), Elision::Every(2), Elision::Every(3), Elision::Infinity],
            BenchSettings {
                batch: 4,
                seq: 32,
                ..BenchSettings::default()
            },
        ),
        Preset::BertBase => (
            ModelConfig::bert_base(Elision::UNMODIFIED),
            PretrainSchedule::bert_base(1000, 8),
            [1, 2, 3, 4, 6].into_iter().map(Elision::Every).chain([Elision::Infinity]).collect(),
            BenchSettings {
                batch: 1,
                seq: 64,
                ..BenchSettings::default()
            },
        ),
    };
    let config = RunConfig {
        preset,
        seeds: vec![0],
        ns,
        out: PathBuf::from("runs"),
        model,
        corpus: CorpusSettings {
            text: None,
            treebank: None,
            vocab_size: 256,
            tokenizer_seed: 0,
        },
        pretrain,
        tasks: TaskSettings {
            tasks: vec![TaskKind::Span, TaskKind::Classification],
            train_examples: 1000,
            eval_examples: 300,
            data_seed: 100,
            untrained_baseline: true,
            span: FinetuneParams::for_task(TaskKind::Span),
            classification: FinetuneParams::for_task(TaskKind::Classification),
        },
        cka: CkaSettings {
            sentences: 200,
            counting: PairCounting::Cross,
            pooling: Pooling::Mean,
        },
        probe: ProbeParams::default(),
        bench,
    };
    let mut table = Table::try_from(&config).map_err(|e| Error::Parameter(e.to_string()))?;
    if preset == Preset::Toy {
        // filled from the tokenized corpus unless set explicitly
        if let Some(Value::Table(m)) = table.get_mut("model") {
            m.remove("vocab");
        }
    }
    Ok(table)
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies one `dotted.key=value` override.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Parameter(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Parameter(format!("bad override key {key:?}")));
    }
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        let entry = node.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::Parameter(format!("override key {key:?} descends into a non-table"))),
        };
    }
    node.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Layers the preset named by `preset` (or by the file, or `toy`), the
/// file, and the overrides in order. The toy model's vocabulary is taken
/// from the tokenized corpus unless given.
pub fn resolve(file: Option<&Path>, preset: Option<Preset>, overrides: &[String]) -> Result<RunConfig> {
    let from_file = match file {
        Some(p) => read_to_string(p)?
            .parse::<Table>()
            .map_err(|e| Error::Parameter(format!("{}: {e}", p.display())))?,
        None => Table::new(),
    };
    let file_preset = match from_file.get("preset") {
        Some(Value::String(s)) => Some(s.parse::<Preset>()?),
        Some(other) => return Err(Error::Parameter(format!("preset must be a string, got {other}"))),
        None => None,
    };
    let preset = preset.or(file_preset).unwrap_or(Preset::Toy);
    let mut table = preset_defaults(preset)?;
    merge(&mut table, from_file);
    table.insert("preset".into(), Value::try_from(preset).map_err(|e| Error::Parameter(e.to_string()))?);
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let needs_vocab = matches!(table.get("model"), Some(Value::Table(m)) if !m.contains_key("vocab"));
    if needs_vocab {
        let partial: RunConfig = {
            let mut t = table.clone();
            apply_override(&mut t, "model.vocab=0")?;
            t.try_into().map_err(|e: toml::de::Error| Error::Parameter(e.message().to_string()))?
        };
        let vocab = load_corpus(&partial.corpus)?.vocab().len();
        apply_override(&mut table, &format!("model.vocab={vocab}"))?;
    }
    let config: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Parameter(format!("configuration: {}", e.message())))?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.pretrain.validate(self.model.max_positions)?;
        self.tasks.span.validate()?;
        self.tasks.classification.validate()?;
        if self.seeds.is_empty() || self.ns.is_empty() {
            return Err(Error::Parameter("seeds and ns must be non-empty".into()));
        }
        if self.tasks.span.task != TaskKind::Span || self.tasks.classification.task != TaskKind::Classification {
            return Err(Error::Parameter("tasks.span and tasks.classification must name their own task".into()));
        }
        Ok(())
    }

    /// Writes the resolved tree as `dir/resolved-config.toml`.
    pub fn write_beside(&self, dir: &Path) -> Result<PathBuf> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Parameter(e.to_string()))?;
        let path = dir.join(RESOLVED_CONFIG);
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}

pub fn load_corpus(settings: &CorpusSettings) -> Result<TokenCorpus> {
    let text = match &settings.text {
        Some(p) => read_to_string(p)?,
        None => BUNDLED_CORPUS.to_string(),
    };
    tokenize_corpus(&text, settings.vocab_size, settings.tokenizer_seed)
}

pub fn load_treebank(settings: &CorpusSettings) -> Result<DependencyCorpus> {
    match &settings.treebank {
        Some(p) => DependencyCorpus::load(p),
        None => DependencyCorpus::parse(BUNDLED_TREEBANK),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_defaults_take_vocab_from_the_corpus() {
        let c = resolve(None, None, &[]).unwrap();
        let corpus = load_corpus(&c.corpus).unwrap();
        assert_eq!(c.model.vocab, corpus.vocab().len());
        assert_eq!(c.pretrain.total_steps, TOY_PRETRAIN_STEPS);
        assert_eq!(c.preset, Preset::Toy);
    }

    #[test]
    fn file_then_overrides_win_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "preset = \"bert-base\"\nseeds = [1, 2]\n[model]\nn = \"inf\"\n[pretrain]\nbase_lr = 0.5\n").unwrap();
        let c = resolve(Some(&p), None, &["pretrain.base_lr=0.25".into(), "model.m=6".into(), "out=x/y".into()]).unwrap();
        assert_eq!(c.preset, Preset::BertBase);
        assert_eq!(c.seeds, vec![1, 2]);
        assert_eq!(c.model.n, Elision::Infinity);
        assert_eq!(c.model.m, 6);
        assert_eq!(c.model.vocab, 30522);
        assert_eq!(c.pretrain.base_lr, 0.25);
        assert_eq!(c.out, PathBuf::from("x/y"));
        let flag_preset = resolve(Some(&p), Some(Preset::Toy), &[]).unwrap();
        assert_eq!(flag_preset.model.hidden, 64);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_parameter_errors() {
        for bad in ["model.widht=3", "model.n=0", "bench.iters=\"many\"", "nokey"] {
            assert!(matches!(resolve(None, None, &[bad.into()]), Err(Error::Parameter(_))), "{bad}");
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let c = resolve(None, None, &["ns=[1, \"inf\"]".into()]).unwrap();
        let path = c.write_beside(dir.path()).unwrap();
        let again = resolve(Some(&path), None, &[]).unwrap();
        assert_eq!(again, c);
    }
}
