use std::path::Path;
use std::process::{Command, Output};

use elision::checkpoint::{blob_path, save_checkpoint, Metadata};
use elision::model::{Elision, EncoderModel, ModelConfig};

fn elision(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elision"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn tiny_checkpoint(base: &Path) {
    let mut config = ModelConfig::toy(40, Elision::UNMODIFIED);
    config.hidden = 8;
    config.heads = 2;
    config.ff = 12;
    let model = EncoderModel::<f32>::new(&config, 2).unwrap();
    save_checkpoint(&model, Metadata::new("pretrained", 1, 2), base).unwrap();
}

#[test]
fn census_prints_bert_base_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let out = elision(&["census", "--preset", "bert-base", "--n", "1,3,inf", "--out", "o"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("72313146") && text.contains("1.52"), "{text}");
    assert!(dir.path().join("o/census/resolved-config.toml").is_file());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 6] = [
        &["census", "--n", "0"],
        &["census", "--bogus"],
        &["census", "--config", "missing.toml"],
        &["census", "--set", "model.hidden"],
        &["bench", "--iters", "5"],
        &["surgery", "--source", "nowhere", "--n", "2"],
    ];
    for args in cases {
        let out = elision(args, dir.path());
        assert_eq!(code(&out), 2, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty(), "{args:?} printed no diagnostic");
    }
}

#[test]
fn surgery_apply_only_writes_cut_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    tiny_checkpoint(&dir.path().join("src"));
    let out = elision(
        &["surgery", "--preset", "toy", "--source", "src", "--n", "2,inf", "--apply-only", "--out", "o"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let written: Vec<_> = std::fs::read_dir(dir.path().join("o/surgery"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(written.iter().filter(|f| f.ends_with(".blob")).count(), 2, "{written:?}");
}

#[test]
fn damaged_checkpoint_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("src");
    tiny_checkpoint(&base);
    let blob = std::fs::read(blob_path(&base)).unwrap();
    std::fs::write(blob_path(&base), &blob[..blob.len() / 2]).unwrap();
    let out = elision(
        &["surgery", "--preset", "toy", "--source", "src", "--n", "2", "--apply-only", "--out", "o"],
        dir.path(),
    );
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}
