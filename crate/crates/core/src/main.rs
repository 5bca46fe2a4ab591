use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};

use elision::bench::{bench, BenchReport};
use elision::checkpoint::{load_checkpoint, Checkpoint};
use elision::cka::{average_over_trials, capture_activations, diagonal_dominance, diagonal_profile, encode_sentences, profiles_csv};
use elision::experiment::{load_corpus, load_treebank, resolve, Preset, RunConfig};
use elision::fsutil::{read_table, write_atomic, write_json, write_table};
use elision::model::{census, Elision, EncoderModel};
use elision::probe::{run_probe_sweep, ProbeRow};
use elision::report::build_report;
use elision::surgery::{apply_surgery, plan_surgery, run_surgery_experiment, SurgeryRow};
use elision::train::{finetune, pretrain, run_tradeoff_sweep, sweep::rows_from_record, SweepPlan, SweepRow, TaskKind, UNTRAINED};

#[derive(serde::Serialize)]
struct CensusRow {
    n: String,
    embeddings: u64,
    attention: u64,
    intermediate: u64,
    pooler: u64,
    head: u64,
    total: u64,
    size_decrease: f64,
}

#[derive(Parser)]
#[command(name = "elision", version, about = "Intermediate-block elision experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Starting defaults: toy or bert-base.
    #[arg(long)]
    preset: Option<Preset>,
    /// Override any configuration key, e.g. `--set pretrain.base_lr=5e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; the command writes into a subdirectory named after
    /// itself.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Parameter counts by category and the size decrease against n=1.
    Census {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        n: Vec<Elision>,
    },
    /// Masked-LM pre-training; saves one checkpoint per seed.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<Elision>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Fine-tunes a checkpoint, or a fresh network, on toy tasks.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "untrained")]
        checkpoint: Option<PathBuf>,
        /// Start from random initialization.
        #[arg(long)]
        untrained: bool,
        #[arg(long, value_delimiter = ',')]
        task: Vec<TaskKind>,
    },
    /// Deletes intermediate blocks from an n=1 checkpoint, then fine-tunes.
    Surgery {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        source: PathBuf,
        /// Target elision factors.
        #[arg(long, value_delimiter = ',')]
        n: Vec<Elision>,
        /// Co-trained checkpoints to fine-tune alongside.
        #[arg(long, value_delimiter = ',')]
        cotrained: Vec<PathBuf>,
        /// Only write the cut checkpoints.
        #[arg(long)]
        apply_only: bool,
        #[arg(long, value_delimiter = ',')]
        task: Vec<TaskKind>,
    },
    /// Pre-trains and fine-tunes every n and seed.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        n: Vec<Elision>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Linear CKA between the self-attention blocks of two checkpoint families.
    Cka {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        a: Vec<PathBuf>,
        /// Defaults to `--a`.
        #[arg(long, value_delimiter = ',')]
        b: Vec<PathBuf>,
    },
    /// Dependency-head probe over attention maps.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        checkpoint: Vec<PathBuf>,
        /// Also probe a randomly initialized n=1 network.
        #[arg(long)]
        untrained: bool,
    },
    /// Training and inference throughput across n.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        n: Vec<Elision>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        seq: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Merges sweep, surgery and bench tables into one summary.
    Report {
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        surgery: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        bench: Vec<PathBuf>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<elision::Error> for Failure {
    fn from(e: elision::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn quoted_list<T: std::fmt::Display>(items: &[T]) -> String {
    format!("[{}]", items.iter().map(|i| format!("\"{i}\"")).collect::<Vec<_>>().join(", "))
}

/// Resolves the configuration with the command's own flags applied last.
fn configure(common: &Common, mut extra: Vec<String>) -> Result<RunConfig, Failure> {
    let mut overrides = common.set.clone();
    if let Some(out) = &common.out {
        overrides.push(format!("out={}", toml_string(&out.display().to_string())));
    }
    if !common.seeds.is_empty() {
        overrides.push(format!("seeds={:?}", common.seeds));
    }
    overrides.append(&mut extra);
    if let Some(p) = &common.config {
        require_file(p)?;
    }
    resolve(common.config.as_deref(), common.preset, &overrides).map_err(usage)
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.into()).to_string()
}

fn require_file(p: &Path) -> Result<(), Failure> {
    if p.is_file() {
        Ok(())
    } else {
        Err(usage(format!("no such file: {}", p.display())))
    }
}

fn require_checkpoint(base: &Path) -> Result<(), Failure> {
    require_file(&elision::checkpoint::manifest_path(base))?;
    require_file(&elision::checkpoint::blob_path(base))
}

fn output_dir(config: &RunConfig, command: &str) -> Result<PathBuf, Failure> {
    let dir = config.out.join(command);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    config.write_beside(&dir)?;
    Ok(dir)
}

fn tasks_or_config(flags: &[TaskKind], config: &RunConfig) -> Vec<TaskKind> {
    if flags.is_empty() {
        config.tasks.tasks.clone()
    } else {
        flags.to_vec()
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Census { common, n } => {
            let mut extra = Vec::new();
            if !n.is_empty() {
                extra.push(format!("ns={}", quoted_list(&n)));
            }
            let config = configure(&common, extra)?;
            let dir = output_dir(&config, "census")?;
            let base = census(&config.model.with_n(Elision::UNMODIFIED));
            let mut rows = Vec::new();
            println!(
                "{:<6} {:>12} {:>12} {:>12} {:>10} {:>10} {:>13} {:>8}",
                "n", "embeddings", "attention", "intermediate", "pooler", "head", "total", "decrease"
            );
            for &n in &config.ns {
                let c = census(&config.model.with_n(n));
                println!(
                    "{:<6} {:>12} {:>12} {:>12} {:>10} {:>10} {:>13} {:>7.2}x",
                    n.to_string(),
                    c.embeddings,
                    c.attention,
                    c.intermediate,
                    c.pooler,
                    c.head,
                    c.total(),
                    c.size_decrease_vs(&base)
                );
                rows.push(CensusRow {
                    n: n.to_string(),
                    embeddings: c.embeddings,
                    attention: c.attention,
                    intermediate: c.intermediate,
                    pooler: c.pooler,
                    head: c.head,
                    total: c.total(),
                    size_decrease: c.size_decrease_vs(&base),
                });
            }
            write_table(&dir.join("census.csv"), &rows)?;
        }
        Command::Pretrain { common, n, steps } => {
            let mut extra = Vec::new();
            if let Some(n) = n {
                extra.push(format!("model.n=\"{n}\""));
            }
            if let Some(s) = steps {
                extra.push(format!("pretrain.total_steps={s}"));
            }
            let config = configure(&common, extra)?;
            let corpus = load_corpus(&config.corpus)?;
            let dir = output_dir(&config, "pretrain")?;
            for &seed in &config.seeds {
                let base = dir.join(format!("pretrained-n{}-seed{seed}", config.model.n));
                let (_, record) = pretrain::<f32>(&config.model, &config.pretrain, &corpus, seed, Some(&base))?;
                write_json(&base.with_extension("record.json"), &record)?;
                println!(
                    "n={} seed={seed}: eval loss {:.3} -> {:.3}, {:.0} tok/s, saved {}",
                    config.model.n,
                    record.initial_eval_loss.unwrap_or(f64::NAN),
                    record.final_eval_loss.unwrap_or(f64::NAN),
                    record.tokens_per_second,
                    base.display()
                );
            }
        }
        Command::Finetune {
            common,
            checkpoint,
            untrained,
            task,
        } => {
            if checkpoint.is_none() && !untrained {
                return Err(usage("finetune needs --checkpoint or --untrained"));
            }
            if let Some(c) = &checkpoint {
                require_checkpoint(c)?;
            }
            let config = configure(&common, Vec::new())?;
            let corpus = load_corpus(&config.corpus)?;
            let dir = output_dir(&config, "finetune")?;
            let mut rows: Vec<SweepRow> = Vec::new();
            for (trial, &seed) in config.seeds.iter().enumerate() {
                let (model, label) = match &checkpoint {
                    Some(c) => {
                        let (m, _) = load_checkpoint::<f32>(c)?;
                        let label = m.config().n.to_string();
                        (m, label)
                    }
                    None => (EncoderModel::<f32>::new(&config.model, seed)?, UNTRAINED.to_string()),
                };
                let params_count = census(model.config()).total();
                for kind in tasks_or_config(&task, &config) {
                    let (_, _, record) = finetune(&model, corpus.vocab(), &config.tasks.data(kind), config.tasks.params(kind), seed)?;
                    write_json(&dir.join(format!("{label}-{}-seed{seed}.record.json", kind.name())), &record)?;
                    rows.extend(rows_from_record(&label, params_count, record.tokens_per_second, trial, &record));
                }
            }
            for r in &rows {
                println!("n={} {} {} = {:.2} (seed {})", r.n, r.task, r.score_name, r.score, r.seed);
            }
            write_table(&dir.join("finetune.csv"), &rows)?;
        }
        Command::Surgery {
            common,
            source,
            n,
            cotrained,
            apply_only,
            task,
        } => {
            require_checkpoint(&source)?;
            for c in &cotrained {
                require_checkpoint(c)?;
            }
            let mut extra = Vec::new();
            if !n.is_empty() {
                extra.push(format!("ns={}", quoted_list(&n)));
            }
            let config = configure(&common, extra)?;
            let source_ckpt = Checkpoint::load(&source)?;
            let dir = output_dir(&config, "surgery")?;
            if apply_only {
                for &target in &config.ns {
                    let plan = plan_surgery(&source_ckpt.manifest, target).map_err(usage)?;
                    let cut = apply_surgery(&source_ckpt, &plan)?;
                    let base = dir.join(format!("surgery-n{target}"));
                    cut.save(&base)?;
                    println!("n={target}: removed {} tensors, saved {}", plan.delete.len(), base.display());
                }
                return Ok(());
            }
            for &target in &config.ns {
                plan_surgery(&source_ckpt.manifest, target).map_err(usage)?;
            }
            let corpus = load_corpus(&config.corpus)?;
            let partners = cotrained.iter().map(|c| Checkpoint::load(c)).collect::<elision::Result<Vec<_>>>()?;
            let mut rows: Vec<SurgeryRow> = Vec::new();
            for kind in tasks_or_config(&task, &config) {
                rows.extend(run_surgery_experiment(
                    &source_ckpt,
                    &partners,
                    &config.ns,
                    corpus.vocab(),
                    &config.tasks.data(kind),
                    config.tasks.params(kind),
                    &config.seeds,
                )?);
            }
            for r in &rows {
                println!("{} n={} {} {} = {:.2} (seed {})", r.variant, r.n, r.task, r.score_name, r.score, r.seed);
            }
            write_table(&dir.join("surgery.csv"), &rows)?;
        }
        Command::Sweep { common, n, steps } => {
            let mut extra = Vec::new();
            if !n.is_empty() {
                extra.push(format!("ns={}", quoted_list(&n)));
            }
            if let Some(s) = steps {
                extra.push(format!("pretrain.total_steps={s}"));
            }
            let config = configure(&common, extra)?;
            let corpus = load_corpus(&config.corpus)?;
            let dir = output_dir(&config, "sweep")?;
            let tasks = config
                .tasks
                .tasks
                .iter()
                .map(|&k| (config.tasks.data(k), config.tasks.params(k).clone()))
                .collect();
            let plan = SweepPlan {
                config: config.model.clone(),
                ns: config.ns.clone(),
                schedule: config.pretrain.clone(),
                corpus: &corpus,
                tasks,
                seeds: config.seeds.clone(),
                untrained_baseline: config.tasks.untrained_baseline,
            };
            let outcome = run_tradeoff_sweep(&plan, Some(&dir))?;
            write_table(&dir.join("sweep.csv"), &outcome.rows)?;
            write_json(&dir.join("pretraining.json"), &outcome.pretraining)?;
            let report = build_report(&outcome.rows, &[], &[])?;
            print!("{}", report.render());
        }
        Command::Cka { common, a, b } => {
            for p in a.iter().chain(&b) {
                require_checkpoint(p)?;
            }
            let config = configure(&common, Vec::new())?;
            let corpus = load_corpus(&config.corpus)?;
            let treebank = load_treebank(&config.corpus)?;
            let dir = output_dir(&config, "cka")?;
            let sentences: Vec<Vec<String>> =
                treebank.sentences().iter().take(config.cka.sentences).map(|s| s.forms.clone()).collect();
            let rows = encode_sentences(corpus.vocab(), &sentences);
            let capture = |paths: &[PathBuf]| -> Result<Vec<_>, Failure> {
                paths
                    .iter()
                    .map(|p| {
                        let (model, meta) = load_checkpoint::<f32>(p)?;
                        let label = format!("n={}", model.config().n);
                        Ok(capture_activations(&model, &rows, config.cka.pooling, &label, meta.seed)?)
                    })
                    .collect()
            };
            let sets_a = capture(&a)?;
            let same = b.is_empty();
            let sets_b = if same { sets_a.clone() } else { capture(&b)? };
            let counting = if same && config.cka.counting == elision::cka::PairCounting::Cross {
                elision::cka::PairCounting::UnorderedDistinct
            } else {
                config.cka.counting
            };
            let s = average_over_trials(&sets_a, &sets_b, counting)?;
            write_atomic(&dir.join("cka.csv"), s.to_csv().as_bytes())?;
            write_json(&dir.join("cka.json"), &s)?;
            print!("{}", s.to_csv());
            if s.rows == s.cols {
                let profile = diagonal_profile(&s)?;
                let name = format!("{} vs {}", s.row_label, s.col_label);
                write_atomic(&dir.join("diagonal.csv"), profiles_csv(&[(name, profile)])?.as_bytes())?;
                if s.rows >= 2 {
                    println!("diagonal dominance {:.4} over {} pairs", diagonal_dominance(&s)?, s.pairs);
                }
            }
        }
        Command::Probe {
            common,
            checkpoint,
            untrained,
        } => {
            if checkpoint.is_empty() && !untrained {
                return Err(usage("probe needs --checkpoint or --untrained"));
            }
            for p in &checkpoint {
                require_checkpoint(p)?;
            }
            let config = configure(&common, Vec::new())?;
            let corpus = load_corpus(&config.corpus)?;
            let treebank = load_treebank(&config.corpus)?;
            let dir = output_dir(&config, "probe")?;
            let mut models = Vec::new();
            for p in &checkpoint {
                let (m, _) = load_checkpoint::<f32>(p)?;
                models.push((m.config().n.to_string(), m));
            }
            if untrained {
                models.push((UNTRAINED.into(), EncoderModel::<f32>::new(&config.model.with_n(Elision::UNMODIFIED), 0)?));
            }
            let networks: Vec<(String, &EncoderModel<f32>)> = models.iter().map(|(l, m)| (l.clone(), m)).collect();
            let rows: Vec<ProbeRow> = run_probe_sweep(&networks, corpus.vocab(), &treebank, &config.probe, &config.seeds)?;
            for r in &rows {
                println!("n={} {} seed={} UAS {:.2}", r.n, r.probe_variant, r.seed, r.uas);
            }
            write_table(&dir.join("probe.csv"), &rows)?;
        }
        Command::Bench {
            common,
            n,
            batch,
            seq,
            warmup,
            iters,
            rounds,
        } => {
            let mut extra = Vec::new();
            if !n.is_empty() {
                extra.push(format!("ns={}", quoted_list(&n)));
            }
            for (key, v) in [("batch", batch), ("seq", seq), ("warmup", warmup), ("iters", iters), ("rounds", rounds)] {
                if let Some(v) = v {
                    extra.push(format!("bench.{key}={v}"));
                }
            }
            let config = configure(&common, extra)?;
            config.bench.validate(&config.model).map_err(usage)?;
            let dir = output_dir(&config, "bench")?;
            let reports: Vec<BenchReport> = bench(&config.model, &config.ns, &config.bench)?;
            for r in &reports {
                println!(
                    "n={:<4} train {:>9.1} tok/s ({:.2}x)  forward {:>9.1} tok/s ({:.2}x)",
                    r.n, r.train_tok_s, r.relative_train, r.forward_tok_s, r.relative_forward
                );
            }
            write_table(&dir.join("bench.csv"), &reports)?;
        }
        Command::Report {
            sweep,
            surgery,
            bench,
            out,
        } => {
            for p in sweep.iter().chain(&surgery).chain(&bench) {
                require_file(p)?;
            }
            let mut sweep_rows: Vec<SweepRow> = Vec::new();
            for p in &sweep {
                sweep_rows.extend(read_table::<SweepRow>(p).map_err(usage)?);
            }
            let mut surgery_rows: Vec<SurgeryRow> = Vec::new();
            for p in &surgery {
                surgery_rows.extend(read_table::<SurgeryRow>(p).map_err(usage)?);
            }
            let mut bench_rows: Vec<BenchReport> = Vec::new();
            for p in &bench {
                bench_rows.extend(read_table::<BenchReport>(p).map_err(usage)?);
            }
            let report = build_report(&sweep_rows, &surgery_rows, &bench_rows).map_err(usage)?;
            let dir = out.join("report");
            write_table(&dir.join("report.csv"), &report.rows)?;
            let text = report.render();
            write_atomic(&dir.join("report.txt"), text.as_bytes())?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
