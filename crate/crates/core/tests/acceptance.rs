//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.
//!
//! ```text
//! cargo test --release --test acceptance
//! ```

use std::collections::BTreeMap;
use std::time::Instant;

use elision::autodiff::{check_gradients_multi, Mode};
use elision::bench::{bench, BenchSettings};
use elision::checkpoint::{Checkpoint, Metadata};
use elision::cka::{
    average_over_trials, capture_activations, diagonal_dominance, diagonal_profile, encode_sentences, linear_cka,
    ActivationSet, Matrix, PairCounting, Pooling,
};
use elision::corpus::{tokenize_corpus, DependencyCorpus, TokenCorpus, ToyGrammar, BUNDLED_CORPUS, BUNDLED_TREEBANK};
use elision::model::{
    build_layout, census, encoder_forward, intermediate_block_params, mlm_logits, BlockKind, BoundParams, Elision,
    EncoderInput, EncoderModel, MlmHead, ModelConfig,
};
use elision::probe::{run_probe_sweep, ProbeParams};
use elision::rng::{purpose, substream};
use elision::surgery::{apply_surgery, plan_surgery, run_surgery_experiment, SurgeryRow};
use elision::train::{finetune, pretrain, FinetuneParams, PretrainSchedule, TaskData, TaskKind, TrialRecord};
use elision::Tensor;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ms(d: std::time::Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn all_ns() -> Vec<Elision> {
    Elision::parse_list("1,2,3,4,6,inf").expect("valid list")
}

// ---------------------------------------------------------------- census

fn census_differences() -> Check {
    let floor = census(&ModelConfig::bert_base(Elision::Infinity)).total();
    let unit = intermediate_block_params(768, 3072);
    let mut parts = Vec::new();
    for n in all_ns() {
        let total = census(&ModelConfig::bert_base(n)).total();
        let expected = (n.intermediate_count(12) as u64) * 4_723_968;
        if total - floor != expected || unit != 4_723_968 {
            return Err(format!("n={n}: census(n) - census(inf) = {} but expected {expected}", total - floor));
        }
        parts.push(format!("n={n}:{}", total - floor));
    }
    Ok(parts.join(" "))
}

fn census_totals() -> Check {
    let published = [110.10, 81.76, 72.31, 67.59, 62.86, 53.41];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (n, want) in all_ns().into_iter().zip(published) {
        let got = census(&ModelConfig::bert_base(n)).total() as f64 / 1e6;
        let rel = (got - want).abs() / want;
        worst = worst.max(rel);
        parts.push(format!("n={n}:{got:.2}M"));
    }
    ensure(worst < 0.005, format!("{} worst deviation {:.3}%", parts.join(" "), 100.0 * worst))
}

// ---------------------------------------------------------------- layout

fn layout_rule() -> Check {
    let mut cases = 0;
    for m in 1..=48usize {
        let ns = (1..=m).map(Elision::Every).chain([Elision::Infinity]);
        for n in ns {
            let layout = build_layout(m, n).map_err(|e| e.to_string())?;
            let k = match n {
                Elision::Every(k) => k,
                Elision::Infinity => usize::MAX,
            };
            let mut expected = Vec::new();
            for i in 1..=m {
                expected.push(BlockKind::SelfAttention);
                if k != usize::MAX && i % k == 0 {
                    expected.push(BlockKind::Intermediate);
                }
            }
            let count = layout.blocks().iter().filter(|b| **b == BlockKind::Intermediate).count();
            let floor = if k == usize::MAX { 0 } else { m / k };
            if layout.blocks() != expected.as_slice() || count != floor {
                return Err(format!("m={m} n={n}: got {}", layout.render()));
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} (m, n) layouts checked"))
}

// ---------------------------------------------------------------- gradients

fn gradient_integrity() -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    for n in [Elision::UNMODIFIED, Elision::Infinity] {
        let config = ModelConfig {
            m: 4,
            n,
            hidden: 32,
            heads: 2,
            ff: 64,
            vocab: 40,
            max_positions: 16,
            type_vocab: 2,
            dropout_p: 0.1,
            include_pooler: true,
            mlm_head: MlmHead::Tied,
        };
        let model = EncoderModel::<f64>::new(&config, 11).map_err(|e| e.to_string())?;
        let names = model.names();
        let points: Vec<Tensor<f64>> = names.iter().map(|k| model.param(k).cloned().expect("named")).collect();
        let mut rng = substream(4, purpose::DATA);
        let rows: Vec<Vec<usize>> =
            (0..2).map(|_| (0..16).map(|_| rng.random_range(5..config.vocab)).collect()).collect();
        let input = EncoderInput::from_rows(&rows, 0).map_err(|e| e.to_string())?;
        let positions: Vec<usize> = (0..32).step_by(5).collect();
        let targets: Vec<usize> = positions.iter().map(|&p| rows[p / 16][p % 16]).collect();
        let report = check_gradients_multi(
            |_, vars| {
                let params = BoundParams::from_vars(&names, vars);
                let mut rng = substream(0, purpose::DROPOUT);
                let out = encoder_forward(&config, model.layout(), &params, &input, Mode::Eval, &mut rng)?;
                mlm_logits(&config, &params, out.hidden, &positions)?.cross_entropy(&targets)
            },
            &points,
            GRAD_STEP,
            Some(GRAD_COORDS),
        )
        .map_err(|e| e.to_string())?;
        ok &= report.max_rel_error < 1e-4;
        let worst = match (report.worst, report.worst_values) {
            (Some((i, c)), Some((a, num))) => format!(" (worst {}[{c}]: {a:.3e} vs {num:.3e})", names[i]),
            _ => String::new(),
        };
        parts.push(format!("n={n}: max rel {:.2e} over {} coords{worst}", report.max_rel_error, report.coords_checked));
    }
    ensure(ok, parts.join("; "))
}

const GRAD_STEP: f64 = 3e-3;
/// Coordinates perturbed per parameter tensor; every tensor is covered.
const GRAD_COORDS: usize = 96;

// ---------------------------------------------------------------- throughput

fn throughput_trend() -> Check {
    let settings = BenchSettings {
        batch: 1,
        seq: 64,
        warmup: 3,
        iters: 10,
        rounds: 3,
    };
    let reports = bench(&ModelConfig::bert_base(Elision::UNMODIFIED), &all_ns(), &settings).map_err(|e| e.to_string())?;
    let rates: Vec<f64> = reports.iter().map(|r| r.train_tok_s).collect();
    let monotone = rates.windows(2).all(|w| w[1] >= w[0]);
    let ratio = reports.last().expect("inf row").relative_train;
    let detail = reports
        .iter()
        .map(|r| format!("n={}:{:.0}tok/s({:.2}x)", r.n, r.train_tok_s, r.relative_train))
        .collect::<Vec<_>>()
        .join(" ");
    ensure(monotone && ratio > 1.3, format!("{detail}; monotone={monotone}"))
}

// ---------------------------------------------------------------- shared toy lab

/// Pre-training steps for the fully trained toy networks.
const PRETRAIN_STEPS: usize = 12000;
const PRETRAIN_LR: f64 = 1e-3;
/// Shorter pre-training for the CKA trial families.
const PARTIAL_STEPS: usize = 1600;
const SPAN_TRAIN: usize = 1000;
const SPAN_EVAL: usize = 300;
const SPAN_STEPS: usize = 600;
const DATA_SEED: u64 = 100;

struct Lab {
    corpus: TokenCorpus,
    config: ModelConfig,
    span: TaskData,
    span_params: FinetuneParams,
    trained: BTreeMap<(String, u64), (EncoderModel<f32>, TrialRecord)>,
}

impl Lab {
    fn new() -> elision::Result<Self> {
        let corpus = tokenize_corpus(BUNDLED_CORPUS, 256, 0)?;
        let config = ModelConfig::toy(corpus.vocab().len(), Elision::UNMODIFIED);
        let span = TaskData::generate(TaskKind::Span, &ToyGrammar::default(), SPAN_TRAIN, SPAN_EVAL, DATA_SEED);
        let span_params = FinetuneParams {
            steps: SPAN_STEPS,
            ..FinetuneParams::for_task(TaskKind::Span)
        };
        Ok(Lab {
            corpus,
            config,
            span,
            span_params,
            trained: BTreeMap::new(),
        })
    }

    fn schedule(steps: usize) -> PretrainSchedule {
        PretrainSchedule {
            base_lr: PRETRAIN_LR,
            ..PretrainSchedule::toy(steps)
        }
    }

    fn pretrained(&mut self, n: Elision, seed: u64, steps: usize) -> elision::Result<&(EncoderModel<f32>, TrialRecord)> {
        let key = (format!("{n}/{steps}"), seed);
        if !self.trained.contains_key(&key) {
            let started = Instant::now();
            let out = pretrain::<f32>(&self.config.with_n(n), &Self::schedule(steps), &self.corpus, seed, None)?;
            eprintln!(
                "  pre-trained n={n} seed={seed} steps={steps} in {}: eval loss {:.3} -> {:.3}",
                ms(started.elapsed()),
                out.1.initial_eval_loss.unwrap_or(f64::NAN),
                out.1.final_eval_loss.unwrap_or(f64::NAN)
            );
            self.trained.insert(key.clone(), out);
        }
        Ok(&self.trained[&key])
    }

    fn span_f1(&self, model: &EncoderModel<f32>, seed: u64) -> elision::Result<f64> {
        let (_, _, record) = finetune(model, self.corpus.vocab(), &self.span, &self.span_params, seed)?;
        Ok(100.0 * record.metrics.and_then(|m| m.get("f1")).expect("span metrics carry f1"))
    }
}

fn pretraining_efficacy(lab: &mut Lab) -> Check {
    let run = |lab: &mut Lab| -> elision::Result<String> {
        let mut parts = Vec::new();
        let mut ok = true;
        let untrained = EncoderModel::<f32>::new(&lab.config, 0)?;
        let base_f1 = lab.span_f1(&untrained, 0)?;
        for n in Elision::parse_list("1,2,inf")? {
            let (model, record) = lab.pretrained(n, 0, PRETRAIN_STEPS)?.clone();
            let drop = record.initial_eval_loss.unwrap_or(f64::NAN) - record.final_eval_loss.unwrap_or(f64::NAN);
            let f1 = lab.span_f1(&model, 0)?;
            ok &= drop >= 1.0 && f1 - base_f1 >= 20.0;
            parts.push(format!("n={n}: loss drop {drop:.2} nat, span F1 {f1:.1}"));
        }
        parts.push(format!("untrained F1 {base_f1:.1}"));
        Ok(format!("{}{}", if ok { "" } else { "[below bar] " }, parts.join("; ")))
    };
    let detail = run(lab).map_err(|e| e.to_string())?;
    ensure(!detail.starts_with('['), detail)
}

fn surgery_ordering(lab: &mut Lab) -> Check {
    let run = |lab: &mut Lab| -> elision::Result<Vec<SurgeryRow>> {
        let targets = Elision::parse_list("2,3,inf")?;
        let (source_model, _) = lab.pretrained(Elision::UNMODIFIED, 0, PRETRAIN_STEPS)?.clone();
        let source = Checkpoint::from_model(&source_model, Metadata::new("pretrained", PRETRAIN_STEPS, 0));
        let mut cotrained = Vec::new();
        for &n in &targets {
            let (m, _) = lab.pretrained(n, 0, PRETRAIN_STEPS)?;
            cotrained.push(Checkpoint::from_model(m, Metadata::new("pretrained", PRETRAIN_STEPS, 0)));
        }
        run_surgery_experiment(&source, &cotrained, &targets, lab.corpus.vocab(), &lab.span, &lab.span_params, &[0, 1, 2])
    };
    let rows = run(lab).map_err(|e| e.to_string())?;
    let mean = |variant: &str, n: &str| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.variant == variant && r.n == n && r.score_name == "f1")
            .map(|r| r.score)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let ns = ["2", "3", "inf"];
    let surgery: Vec<f64> = ns.iter().map(|n| mean("surgery", n)).collect();
    let cotrained: Vec<f64> = ns.iter().map(|n| mean("cotrained", n)).collect();
    let below = surgery.iter().zip(&cotrained).all(|(s, c)| s <= c);
    let ordered = surgery.windows(2).all(|w| w[1] <= w[0] + 1.0);
    let detail = ns
        .iter()
        .zip(surgery.iter().zip(&cotrained))
        .map(|(n, (s, c))| format!("n={n}: surgery {s:.1} vs co-trained {c:.1}"))
        .collect::<Vec<_>>()
        .join("; ");
    ensure(below && ordered, format!("{detail} (mean F1 over 3 seeds)"))
}

// ---------------------------------------------------------------- CKA

fn random_matrix(rows: usize, cols: usize, rng: &mut elision::rng::Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::new(rows, cols, data).expect("sized")
}

/// Orthonormal columns by Gram-Schmidt on a Gaussian matrix.
fn random_orthogonal(d: usize, rng: &mut elision::rng::Rng) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    q
}

fn rotate(x: &Matrix, q: &[Vec<f64>]) -> Matrix {
    let mut data = vec![0.0; x.rows * x.cols];
    for r in 0..x.rows {
        for (c, col) in q.iter().enumerate() {
            data[r * x.cols + c] = x.row(r).iter().zip(col).map(|(a, b)| a * b).sum();
        }
    }
    Matrix::new(x.rows, x.cols, data).expect("sized")
}

fn hsic(k: &[Vec<f64>], l: &[Vec<f64>]) -> f64 {
    let n = k.len();
    let center = |m: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let h = |i: usize, j: usize| if i == j { 1.0 - 1.0 / n as f64 } else { -1.0 / n as f64 };
        let mut hm = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                hm[i][j] = (0..n).map(|t| h(i, t) * m[t][j]).sum();
            }
        }
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                out[i][j] = (0..n).map(|t| hm[i][t] * h(t, j)).sum();
            }
        }
        out
    };
    let (kc, lc) = (center(k), center(l));
    let trace: f64 = (0..n).map(|i| (0..n).map(|j| kc[i][j] * lc[j][i]).sum::<f64>()).sum();
    trace / ((n - 1) as f64).powi(2)
}

fn gram(x: &Matrix) -> Vec<Vec<f64>> {
    (0..x.rows)
        .map(|i| (0..x.rows).map(|j| x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum()).collect())
        .collect()
}

fn cka_correctness() -> Check {
    let mut rng = substream(8, purpose::DATA);
    let (mut self_err, mut inv_err, mut oracle_err) = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..100 {
        let rows = rng.random_range(4..40);
        let (dx, dy) = (rng.random_range(2..12), rng.random_range(2..12));
        let x = random_matrix(rows, dx, &mut rng);
        let y = random_matrix(rows, dy, &mut rng);
        let base = linear_cka(&x, &y).map_err(|e| e.to_string())?;
        self_err = self_err.max((linear_cka(&x, &x).map_err(|e| e.to_string())? - 1.0).abs());
        let qx = random_orthogonal(dx, &mut rng);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let mut scaled = rotate(&x, &qx);
        scaled.data.iter_mut().for_each(|v| *v *= scale);
        let moved = linear_cka(&scaled, &y).map_err(|e| e.to_string())?;
        inv_err = inv_err.max((moved - base).abs());
        if case < 50 {
            let small_rows = rng.random_range(3..12);
            let a = random_matrix(small_rows, rng.random_range(1..20), &mut rng);
            let b = random_matrix(small_rows, rng.random_range(1..20), &mut rng);
            let (ka, kb) = (gram(&a), gram(&b));
            let oracle = hsic(&ka, &kb) / (hsic(&ka, &ka) * hsic(&kb, &kb)).sqrt();
            oracle_err = oracle_err.max((linear_cka(&a, &b).map_err(|e| e.to_string())? - oracle).abs());
        }
    }
    ensure(
        self_err <= 1e-9 && inv_err <= 1e-7 && oracle_err <= 1e-9,
        format!("self {self_err:.1e}, invariance {inv_err:.1e}, HSIC oracle {oracle_err:.1e}"),
    )
}

const CKA_SENTENCES: usize = 200;

fn cka_structure(lab: &mut Lab) -> Check {
    let run = |lab: &mut Lab| -> elision::Result<String> {
        let treebank = DependencyCorpus::parse(BUNDLED_TREEBANK)?;
        let sentences: Vec<Vec<String>> =
            treebank.sentences().iter().take(CKA_SENTENCES).map(|s| s.forms.clone()).collect();
        let rows = encode_sentences(lab.corpus.vocab(), &sentences);
        let seeds = [0u64, 1, 2];
        let family = |n: Option<Elision>, lab: &mut Lab| -> elision::Result<Vec<ActivationSet>> {
            seeds
                .iter()
                .map(|&seed| match n {
                    Some(n) => {
                        let (m, _) = lab.pretrained(n, seed, PARTIAL_STEPS)?;
                        capture_activations(m, &rows, Pooling::Mean, &format!("trained n={n}"), seed)
                    }
                    None => {
                        let m = EncoderModel::<f32>::new(&lab.config, seed)?;
                        capture_activations(&m, &rows, Pooling::Mean, "untrained", seed)
                    }
                })
                .collect()
        };
        let unmodified = family(Some(Elision::UNMODIFIED), lab)?;
        let modified = family(Some(Elision::Every(2)), lab)?;
        let untrained = family(None, lab)?;
        let trained_pair = average_over_trials(&unmodified, &modified, PairCounting::Cross)?;
        let untrained_pair = average_over_trials(&untrained, &unmodified, PairCounting::Cross)?;
        let (d_trained, d_untrained) = (diagonal_dominance(&trained_pair)?, diagonal_dominance(&untrained_pair)?);
        let (p_trained, p_untrained) = (diagonal_profile(&trained_pair)?, diagonal_profile(&untrained_pair)?);
        let every_layer = p_trained.iter().zip(&p_untrained).all(|(a, b)| a > b);
        let fmt = |p: &[f64]| p.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(",");
        let ok = d_trained > d_untrained && every_layer;
        Ok(format!(
            "{}D(trained, n=2) {d_trained:.3} vs D(untrained, trained) {d_untrained:.3}; diagonals [{}] vs [{}] ({} pairs)",
            if ok { "" } else { "[below bar] " },
            fmt(&p_trained),
            fmt(&p_untrained),
            trained_pair.pairs
        ))
    };
    let detail = run(lab).map_err(|e| e.to_string())?;
    ensure(!detail.starts_with('['), detail)
}

// ---------------------------------------------------------------- probing

fn probing_ordering(lab: &mut Lab) -> Check {
    let run = |lab: &mut Lab| -> elision::Result<String> {
        let treebank = DependencyCorpus::parse(BUNDLED_TREEBANK)?;
        let mut models = Vec::new();
        for n in Elision::parse_list("1,2,inf")? {
            models.push((format!("n={n}"), lab.pretrained(n, 0, PRETRAIN_STEPS)?.0.clone()));
        }
        models.push(("untrained".to_string(), EncoderModel::<f32>::new(&lab.config, 0)?));
        let networks: Vec<(String, &EncoderModel<f32>)> = models.iter().map(|(l, m)| (l.clone(), m)).collect();
        let rows = run_probe_sweep(&networks, lab.corpus.vocab(), &treebank, &ProbeParams::default(), &[0])?;
        let trained: Vec<f64> = rows.iter().filter(|r| r.n != "untrained").map(|r| r.uas).collect();
        let untrained = rows.iter().find(|r| r.n == "untrained").expect("untrained row").uas;
        let lowest = trained.iter().cloned().fold(f64::INFINITY, f64::min);
        let spread = trained.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - lowest;
        let gap = lowest - untrained;
        let ok = gap >= 15.0 && spread < gap;
        let listed = rows.iter().map(|r| format!("{}:{:.1}", r.n, r.uas)).collect::<Vec<_>>().join(" ");
        Ok(format!(
            "{}UAS {listed}; gap {gap:.1}, spread {spread:.1}",
            if ok { "" } else { "[below bar] " }
        ))
    };
    let detail = run(lab).map_err(|e| e.to_string())?;
    ensure(!detail.starts_with('['), detail)
}

// ---------------------------------------------------------------- serialization

fn serialization_integrity() -> Check {
    let run = || -> elision::Result<String> {
        let dir = tempfile::tempdir().expect("temporary directory");
        let config = ModelConfig::toy(60, Elision::UNMODIFIED);
        let model = EncoderModel::<f32>::new(&config, 5)?;
        let ckpt = Checkpoint::from_model(&model, Metadata::new("init", 0, 5));
        let base = dir.path().join("model");
        ckpt.save(&base)?;
        let loaded = Checkpoint::load(&base)?;
        let back: EncoderModel<f32> = loaded.to_model()?;
        let round_trip = loaded == ckpt
            && back.params().iter().all(|(k, v)| {
                let orig = model.param(k).expect("same names");
                v.data().iter().zip(orig.data()).all(|(a, b)| a.to_bits() == b.to_bits())
            });
        let mut retained = true;
        for n in Elision::parse_list("2,3,inf")? {
            let cut = apply_surgery(&loaded, &plan_surgery(&loaded.manifest, n)?)?;
            for e in &cut.manifest.tensors {
                retained &= cut.tensor_bytes(&e.name) == loaded.tensor_bytes(&e.name);
            }
        }
        let identity = apply_surgery(&loaded, &plan_surgery(&loaded.manifest, Elision::UNMODIFIED)?)?;
        let no_op = identity.blob == loaded.blob && identity.manifest.tensors == loaded.manifest.tensors;
        let ok = round_trip && retained && no_op;
        Ok(format!(
            "{}round trip {round_trip}, retained tensors identical {retained}, identity surgery no-op {no_op}",
            if ok { "" } else { "[below bar] " }
        ))
    };
    let detail = run().map_err(|e| e.to_string())?;
    ensure(!detail.starts_with('['), detail)
}

// ---------------------------------------------------------------- driver

fn main() {
    let mut lab = Lab::new().expect("bundled corpus tokenizes");
    type Criterion<'a> = (usize, &'a str, Box<dyn FnMut(&mut Lab) -> Check>);
    let criteria: Vec<Criterion> = vec![
        (1, "census exact differences", Box::new(|_| census_differences())),
        (2, "census absolute totals", Box::new(|_| census_totals())),
        (3, "layout rule, m <= 48", Box::new(|_| layout_rule())),
        (4, "gradient integrity", Box::new(|_| gradient_integrity())),
        (5, "throughput trend", Box::new(|_| throughput_trend())),
        (6, "pre-training efficacy", Box::new(pretraining_efficacy)),
        (7, "surgery degradation ordering", Box::new(surgery_ordering)),
        (8, "CKA correctness", Box::new(|_| cka_correctness())),
        (9, "CKA structure", Box::new(cka_structure)),
        (10, "probing ordering", Box::new(probing_ordering)),
        (11, "serialization and surgery integrity", Box::new(|_| serialization_integrity())),
    ];
    let only: Option<Vec<usize>> = std::env::args()
        .skip(1)
        .find(|a| !a.starts_with('-'))
        .map(|s| s.split(',').filter_map(|k| k.parse().ok()).collect());
    let mut failed = 0;
    for (k, name, mut f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&k)) {
            continue;
        }
        let started = Instant::now();
        let outcome = f(&mut lab);
        let took = ms(started.elapsed());
        match outcome {
            Ok(d) => println!("PASS {k:>2} {name}: {d} [{took}]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {k:>2} {name}: {d} [{took}]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
