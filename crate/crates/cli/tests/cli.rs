use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn notecnn(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_notecnn"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path, work: &str) -> PathBuf {
    let work_dir = dir.join(work);
    let text = format!(
        "seed = 11\n\
         paths.work_dir = {:?}\n\
         synth.n_patients = 200\n\
         wordvec.epochs = 1\n\
         wordvec.dim = 16\n\
         train.max_epochs = 2\n\
         lda.topics = 5\n\
         lda.iterations = 10\n\
         lda.burn_in = 5\n\
         lda.infer_iterations = 10\n\
         lda.infer_burn_in = 5\n\
         dbow.dim = 10\n\
         dbow.epochs = 1\n",
        work_dir.to_str().unwrap()
    );
    let path = dir.join(format!("{work}.toml"));
    std::fs::write(&path, text).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_config_key_exits_1_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "train.lamda = 1.0\n").unwrap();
    let out = notecnn(&cfg, &["synth"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("lamda"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_1() {
    let out = Command::new(env!("CARGO_BIN_EXE_notecnn"))
        .args(["train", "--task", "2-year"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_notecnn"))
        .args(["baseline", "--which", "svm"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_config_file_is_a_data_error() {
    let out = notecnn(Path::new("/nonexistent/run.toml"), &["synth"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_before_train_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "run");
    assert!(notecnn(&cfg, &["synth"]).status.success());
    assert!(notecnn(&cfg, &["preprocess"]).status.success());
    let out = notecnn(&cfg, &["eval"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("eval"), "{}", stderr(&out));
    assert!(stderr(&out).contains("checkpoint"), "{}", stderr(&out));
}

#[test]
fn stage_before_its_inputs_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "run");
    assert_eq!(notecnn(&cfg, &["preprocess"]).status.code(), Some(2));
    assert_eq!(notecnn(&cfg, &["pretrain"]).status.code(), Some(2));
}

const STAGES: &[&[&str]] = &[
    &["synth"],
    &["preprocess"],
    &["pretrain"],
    &["train"],
    &["train", "--no-replication"],
    &["eval"],
    &["baseline", "--which", "lda"],
    &["eval", "--model", "lda"],
    &["baseline", "--which", "dbow"],
    &["eval", "--model", "dbow"],
];

fn run_all(cfg: &Path) {
    for args in STAGES {
        let out = notecnn(cfg, args);
        assert!(out.status.success(), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn full_pipeline_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "run");
    run_all(&cfg);
    let work = dir.path().join("run");
    for f in [
        "notes.jsonl",
        "documents.jsonl",
        "vocab.txt",
        "embeddings.txt",
        "cnn-hospital.ckpt",
        "cnn-hospital-norep.ckpt",
        "report-hospital-cnn.txt",
        "report-hospital-lda.ndjson",
        "report-hospital-dbow.txt",
        "train-hospital.manifest",
        "synth.manifest",
    ] {
        assert!(work.join(f).exists(), "{f} missing");
    }
    let manifest = std::fs::read_to_string(work.join("train-hospital.manifest")).unwrap();
    assert!(manifest.contains("config_hash = "));
    assert!(manifest.contains("seed = 11"));
    assert!(manifest.contains("sha256:"));

    let primary = [
        "cnn-hospital.ckpt",
        "cnn-hospital-norep.ckpt",
        "embeddings.txt",
        "features-lda.txt",
        "features-dbow.txt",
        "report-hospital-cnn.txt",
        "report-hospital-lda.txt",
        "report-hospital-dbow.ndjson",
    ];
    let first: Vec<Vec<u8>> = primary.iter().map(|f| std::fs::read(work.join(f)).unwrap()).collect();
    run_all(&cfg);
    for (f, bytes) in primary.iter().zip(&first) {
        assert_eq!(&std::fs::read(work.join(f)).unwrap(), bytes, "{f} changed between runs");
    }

    let pid = std::fs::read_to_string(work.join("documents.jsonl"))
        .unwrap()
        .lines()
        .next()
        .map(|l| l.split("\"patient_id\":\"").nth(1).unwrap().split('"').next().unwrap().to_string())
        .unwrap();
    let out = notecnn(&cfg, &["rank", "--patient-id", &pid, "-k", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("P(death) high") && text.contains("P(death) low"), "{text}");

    let out = notecnn(&cfg, &["rank", "--patient-id", "NOBODY"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "run");
    let a = notecnn(&cfg, &["synth"]);
    assert!(a.status.success());
    let notes_a = std::fs::read(dir.path().join("run/notes.jsonl")).unwrap();
    let b = notecnn(&cfg, &["--seed", "12", "synth"]);
    assert!(b.status.success());
    let notes_b = std::fs::read(dir.path().join("run/notes.jsonl")).unwrap();
    assert_ne!(notes_a, notes_b);
    let manifest = std::fs::read_to_string(dir.path().join("run/synth.manifest")).unwrap();
    assert!(manifest.contains("seed = 12"), "{manifest}");
}
