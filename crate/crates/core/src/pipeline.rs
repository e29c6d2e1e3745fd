//! The staged workflow behind the command-line tool. In-memory building
//! blocks come first; the file-based stages at the bottom read and write the
//! artifacts in `paths.work_dir` and leave a manifest per stage.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{
    self, build_tfidf_vocab, dbow_fit, dbow_infer, lda, lda_infer, svm_fit, svm_score, LinearModel,
    Standardizer, TfidfVocabulary, TopicModel,
};
use crate::config::{stage, RunConfig};
use crate::corpus::{
    self, build_documents, build_vocabulary, derive_labels, filter_cohort, records, split_patients,
    subsample_negatives, AdmissionMeta, CohortSplit, Document, PatientRecord, RawNote, SyntheticConfig,
    Task, Vocabulary,
};
use crate::eval::{self, EvalReport, Split, TaskDataset};
use crate::hiercnn::{self, ModelDims, ModelParams, TrainOutcome};
use crate::manifest::Manifest;
use crate::tensor::Tensor;
use crate::{par, seed, wordvec, Error, Result};

/// Preprocessed corpus: documents, split and vocabulary.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Sorted by patient id.
    pub docs: Vec<Document>,
    pub split: CohortSplit,
    pub vocab: Vocabulary,
}

impl Prepared {
    pub fn doc(&self, patient_id: &str) -> Option<&Document> {
        self.docs
            .binary_search_by(|d| d.patient_id.as_str().cmp(patient_id))
            .ok()
            .map(|i| &self.docs[i])
    }

    pub fn dataset(&self, task: Task) -> TaskDataset {
        TaskDataset::from_documents(task, &self.docs, &self.split)
    }
}

/// Labelled, indexed records of one task.
#[derive(Debug, Clone)]
pub struct TaskRecords {
    pub train: Vec<(PatientRecord, bool)>,
    pub validation: Vec<(PatientRecord, bool)>,
    pub test: Vec<(PatientRecord, bool)>,
}

impl TaskRecords {
    pub fn split(&self, which: Split) -> &[(PatientRecord, bool)] {
        match which {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

/// Cohort filtering, labels, documents, split and vocabulary.
pub fn prepare(notes: &[RawNote], admissions: &[AdmissionMeta], cfg: &RunConfig) -> Result<Prepared> {
    let cohort = filter_cohort(notes, admissions);
    let members: HashSet<&str> = cohort.patient_ids.iter().map(String::as_str).collect();
    let kept: Vec<AdmissionMeta> = admissions
        .iter()
        .filter(|a| members.contains(a.patient_id.as_str()))
        .cloned()
        .collect();
    let labels = derive_labels(&kept)?;
    let docs = build_documents(&cohort, &labels, cfg.preprocess.truncation())?;
    if docs.is_empty() {
        return Err(Error::Data("no patient survived cohort filtering".into()));
    }
    let ids: Vec<String> = docs.iter().map(|d| d.patient_id.clone()).collect();
    let split = split_patients(&ids, cfg.preprocess.ratios(), cfg.stage_seed(stage::SPLIT))?;
    let train_docs = docs_of(&docs, &split.train);
    let vocab = build_vocabulary(&train_docs, cfg.preprocess.vocab_cap)?;
    Ok(Prepared { docs, split, vocab })
}

fn docs_of(docs: &[Document], ids: &[String]) -> Vec<Document> {
    let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
    docs.iter()
        .filter(|d| wanted.contains(d.patient_id.as_str()))
        .cloned()
        .collect()
}

pub fn task_records(prepared: &Prepared, task: Task) -> Result<TaskRecords> {
    let ds = prepared.dataset(task);
    let index = |rows: &[(String, bool)]| -> Result<Vec<(PatientRecord, bool)>> {
        rows.iter()
            .map(|(id, y)| {
                let doc = prepared
                    .doc(id)
                    .ok_or_else(|| Error::Data(format!("patient {id} has no document")))?;
                Ok((prepared.vocab.index_document(doc), *y))
            })
            .collect()
    };
    Ok(TaskRecords {
        train: index(&ds.train)?,
        validation: index(&ds.validation)?,
        test: index(&ds.test)?,
    })
}

/// Word vectors trained on the training patients' sentences.
pub fn pretrain_embeddings(prepared: &Prepared, cfg: &RunConfig) -> Result<wordvec::Pretrained> {
    let train: HashSet<&str> = prepared.split.train.iter().map(String::as_str).collect();
    let sentences: Vec<Vec<usize>> = prepared
        .docs
        .iter()
        .filter(|d| train.contains(d.patient_id.as_str()))
        .flat_map(|d| &d.sentences)
        .map(|s| s.tokens.iter().map(|t| prepared.vocab.index_of(t)).collect())
        .collect();
    let sgns = wordvec::SgnsConfig {
        seed: cfg.stage_seed(stage::WORDVEC),
        ..cfg.wordvec.clone()
    };
    wordvec::pretrain(&sentences, prepared.vocab.len(), &sgns)
}

/// Model dimensions for a vocabulary, with the word dimension following the
/// word-vector configuration.
pub fn model_dims(vocab: &Vocabulary, cfg: &RunConfig) -> ModelDims {
    ModelDims {
        word_dim: cfg.wordvec.dim,
        ..ModelDims::new(vocab.len())
    }
}

pub fn initial_params(prepared: &Prepared, cfg: &RunConfig, embeddings: Option<Tensor>) -> Result<ModelParams> {
    let mut params = ModelParams::init(model_dims(&prepared.vocab, cfg), cfg.stage_seed(stage::INIT))?;
    if let Some(e) = embeddings {
        params.set_embeddings(e)?;
    }
    Ok(params)
}

pub fn train_config(cfg: &RunConfig, lambda: Option<f64>) -> hiercnn::TrainConfig {
    hiercnn::TrainConfig {
        lambda: lambda.unwrap_or(cfg.train.lambda),
        seed: cfg.stage_seed(stage::TRAIN),
        ..cfg.train.clone()
    }
}

pub fn train_cnn(
    records: &TaskRecords,
    init: ModelParams,
    cfg: &RunConfig,
    lambda: Option<f64>,
) -> Result<TrainOutcome> {
    hiercnn::train(init, &records.train, &records.validation, &train_config(cfg, lambda))
}

/// Replication weights tried by [`lambda_sweep`].
pub const LAMBDA_GRID: [f64; 4] = [0.0, 0.25, 0.5, 1.0];

/// Trains one model per `lambda` and returns `(lambda, best validation AUC)`
/// pairs plus the winning weight (earliest on ties).
pub fn lambda_sweep(
    records: &TaskRecords,
    init: &ModelParams,
    cfg: &RunConfig,
    grid: &[f64],
) -> Result<(Vec<(f64, f64)>, f64)> {
    let mut scores = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let out = train_cnn(records, init.clone(), cfg, Some(lambda))?;
        let auc = cnn_auc(&out.params, &records.validation)?;
        scores.push((lambda, auc));
    }
    let best = scores
        .iter()
        .fold(None::<(f64, f64)>, |best, &(l, a)| match best {
            Some((_, b)) if a <= b => best,
            _ => Some((l, a)),
        })
        .ok_or_else(|| Error::InvalidArgument("empty lambda grid".into()))?;
    Ok((scores, best.0))
}

/// Document-level probabilities for every record, in order.
pub fn cnn_scores(params: &ModelParams, data: &[(PatientRecord, bool)]) -> Result<Vec<f64>> {
    par::map(par::Execution::available(), data, |(r, _)| {
        hiercnn::predict(r, params).map(|p| p.p_doc)
    })
    .into_iter()
    .collect()
}

pub fn cnn_auc(params: &ModelParams, data: &[(PatientRecord, bool)]) -> Result<f64> {
    let scores = cnn_scores(params, data)?;
    let labels: Vec<bool> = data.iter().map(|(_, y)| *y).collect();
    eval::auc(&scores, &labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Lda,
    Dbow,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Lda => "lda",
            BaselineKind::Dbow => "dbow",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lda" => Ok(BaselineKind::Lda),
            "dbow" => Ok(BaselineKind::Dbow),
            other => Err(Error::InvalidArgument(format!("unknown baseline {other:?} (lda or dbow)"))),
        }
    }
}

/// Patient-level features from a fitted baseline representation.
#[derive(Debug, Clone)]
pub struct BaselineFeatures {
    pub kind: BaselineKind,
    pub tfidf: TfidfVocabulary,
    /// Keyed by patient id; every cohort patient has a row.
    pub features: BTreeMap<String, Vec<f64>>,
    pub lda: Option<TopicModel>,
    pub dbow: Option<baselines::DbowModel>,
}

fn stopwords(cfg: &RunConfig) -> Result<HashSet<String>> {
    match &cfg.paths.stopwords {
        Some(p) => baselines::load_stopwords(&cfg.resolve(p)),
        None => Ok(baselines::default_stopwords()),
    }
}

fn patient_tokens(doc: &Document) -> Vec<String> {
    doc.sentences.iter().flat_map(|s| s.tokens.iter().cloned()).collect()
}

fn note_tokens(doc: &Document, tfidf: &TfidfVocabulary) -> Vec<Vec<usize>> {
    let n_notes = doc.sentences.iter().map(|s| s.note + 1).max().unwrap_or(0);
    let mut notes = vec![Vec::new(); n_notes];
    for s in &doc.sentences {
        notes[s.note].extend(tfidf.filter(&s.tokens));
    }
    notes.retain(|n| !n.is_empty());
    notes
}

fn mean_rows(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    if rows.is_empty() {
        return vec![1.0 / dim as f64; dim];
    }
    let mut out = vec![0.0; dim];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= rows.len() as f64);
    out
}

fn build_tfidf(prepared: &Prepared, cfg: &RunConfig) -> Result<TfidfVocabulary> {
    let train_docs = docs_of(&prepared.docs, &prepared.split.train);
    let tokens: Vec<Vec<String>> = train_docs.iter().map(patient_tokens).collect();
    build_tfidf_vocab(&tokens, cfg.baseline.top_k, &stopwords(cfg)?)
}

/// LDA over training notes; each patient's features are the mean topic
/// proportions of their notes (fitted for training patients, inferred for
/// the rest).
pub fn lda_features(prepared: &Prepared, cfg: &RunConfig) -> Result<BaselineFeatures> {
    let tfidf = build_tfidf(prepared, cfg)?;
    let train: HashSet<&str> = prepared.split.train.iter().map(String::as_str).collect();
    let mut train_notes = Vec::new();
    let mut owner = Vec::new();
    for d in prepared.docs.iter().filter(|d| train.contains(d.patient_id.as_str())) {
        for n in note_tokens(d, &tfidf) {
            train_notes.push(n);
            owner.push(d.patient_id.clone());
        }
    }
    let lda_cfg = lda::LdaConfig {
        seed: cfg.stage_seed(stage::LDA),
        ..cfg.lda.clone()
    };
    let model = lda::lda_fit(&train_notes, tfidf.len(), &lda_cfg)?;
    let k = model.topics;

    let mut per_patient: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (pid, props) in owner.iter().zip(&model.doc_proportions) {
        per_patient.entry(pid.clone()).or_default().push(props.clone());
    }
    let others: Vec<(usize, &Document)> = prepared
        .docs
        .iter()
        .enumerate()
        .filter(|(_, d)| !train.contains(d.patient_id.as_str()))
        .collect();
    let inferred = par::map(par::Execution::available(), &others, |(i, d)| {
        let rows: Vec<Vec<f64>> = note_tokens(d, &tfidf)
            .iter()
            .enumerate()
            .map(|(j, n)| {
                let s = seed::derive(lda_cfg.seed, &[*i as u64, j as u64]);
                lda_infer(&model, n, lda_cfg.infer_iterations, lda_cfg.infer_burn_in, s)
            })
            .collect();
        (d.patient_id.clone(), mean_rows(&rows, k))
    });
    let mut features: BTreeMap<String, Vec<f64>> = per_patient
        .into_iter()
        .map(|(pid, rows)| (pid, mean_rows(&rows, k)))
        .collect();
    for d in prepared.docs.iter().filter(|d| train.contains(d.patient_id.as_str())) {
        features
            .entry(d.patient_id.clone())
            .or_insert_with(|| vec![1.0 / k as f64; k]);
    }
    features.extend(inferred);
    Ok(BaselineFeatures {
        kind: BaselineKind::Lda,
        tfidf,
        features,
        lda: Some(model),
        dbow: None,
    })
}

/// DBOW vectors, one per patient document (notes concatenated, filtered
/// through the tf-idf vocabulary). Patients whose filtered document is empty
/// get a zero vector.
pub fn dbow_features(prepared: &Prepared, cfg: &RunConfig) -> Result<BaselineFeatures> {
    let tfidf = build_tfidf(prepared, cfg)?;
    let train: HashSet<&str> = prepared.split.train.iter().map(String::as_str).collect();
    let docs: Vec<(String, bool, Vec<usize>)> = prepared
        .docs
        .iter()
        .map(|d| {
            let words = tfidf.filter(d.sentences.iter().flat_map(|s| s.tokens.iter()));
            (d.patient_id.clone(), train.contains(d.patient_id.as_str()), words)
        })
        .collect();
    let empty = docs.iter().filter(|(_, _, w)| w.is_empty()).count();
    if empty > 0 {
        log::warn!("DBOW: {empty} patients have no in-vocabulary tokens; using zero vectors");
    }
    let fit_docs: Vec<&(String, bool, Vec<usize>)> =
        docs.iter().filter(|(_, t, w)| *t && !w.is_empty()).collect();
    let dbow_cfg = baselines::DbowConfig {
        seed: cfg.stage_seed(stage::DBOW),
        ..cfg.dbow.clone()
    };
    let words: Vec<Vec<usize>> = fit_docs.iter().map(|(_, _, w)| w.clone()).collect();
    let model = dbow_fit(&words, tfidf.len(), &dbow_cfg)?;
    let mut features: BTreeMap<String, Vec<f64>> = fit_docs
        .iter()
        .enumerate()
        .map(|(i, (pid, _, _))| (pid.clone(), model.doc_vectors.row(i).to_vec()))
        .collect();
    let rest: Vec<(usize, &(String, bool, Vec<usize>))> = docs
        .iter()
        .enumerate()
        .filter(|(_, (_, t, _))| !*t)
        .collect();
    let inferred = par::map(par::Execution::available(), &rest, |(i, (pid, _, w))| {
        let v = if w.is_empty() {
            Ok(vec![0.0; dbow_cfg.dim])
        } else {
            dbow_infer(&model, w, dbow_cfg.infer_steps, seed::derive(dbow_cfg.seed, &[*i as u64]))
        };
        v.map(|v| (pid.clone(), v))
    });
    for r in inferred {
        let (pid, v) = r?;
        features.insert(pid, v);
    }
    for (pid, _, _) in &docs {
        features.entry(pid.clone()).or_insert_with(|| vec![0.0; dbow_cfg.dim]);
    }
    Ok(BaselineFeatures {
        kind: BaselineKind::Dbow,
        tfidf,
        features,
        lda: None,
        dbow: Some(model),
    })
}

pub fn baseline_features(kind: BaselineKind, prepared: &Prepared, cfg: &RunConfig) -> Result<BaselineFeatures> {
    match kind {
        BaselineKind::Lda => lda_features(prepared, cfg),
        BaselineKind::Dbow => dbow_features(prepared, cfg),
    }
}

/// A standardizer plus linear SVM for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSvm {
    pub task: Task,
    pub standardizer: Standardizer,
    pub model: LinearModel,
    /// Patients in the subsampled training set.
    pub n_train: usize,
    pub n_train_negative: usize,
}

impl TaskSvm {
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        svm_score(&self.model, &self.standardizer.apply(x))
    }
}

fn feature_of<'a>(features: &'a BTreeMap<String, Vec<f64>>, id: &str) -> Result<&'a Vec<f64>> {
    features
        .get(id)
        .ok_or_else(|| Error::Data(format!("no baseline features for patient {id}")))
}

/// Fits the task's SVM on the negative-subsampled training patients.
pub fn fit_task_svm(
    features: &BTreeMap<String, Vec<f64>>,
    dataset: &TaskDataset,
    cfg: &RunConfig,
) -> Result<TaskSvm> {
    let ids: Vec<String> = dataset.train.iter().map(|(id, _)| id.clone()).collect();
    let labels: Vec<bool> = dataset.train.iter().map(|(_, y)| *y).collect();
    let subsample_seed = seed::derive(cfg.stage_seed(stage::SUBSAMPLE), &[dataset.task as u64]);
    let kept = subsample_negatives(&ids, &labels, cfg.baseline.negative_fraction, subsample_seed)?;
    let label_of: BTreeMap<&str, bool> = dataset.train.iter().map(|(id, y)| (id.as_str(), *y)).collect();
    let rows: Vec<Vec<f64>> = kept
        .iter()
        .map(|id| feature_of(features, id).cloned())
        .collect::<Result<_>>()?;
    let ys: Vec<bool> = kept.iter().map(|id| label_of[id.as_str()]).collect();
    let standardizer = Standardizer::fit(&rows)?;
    let scaled: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.apply(r)).collect();
    let svm_cfg = baselines::SvmConfig {
        seed: seed::derive(cfg.stage_seed(stage::SVM), &[dataset.task as u64]),
        ..cfg.svm.clone()
    };
    let (model, _) = svm_fit(&scaled, &ys, &svm_cfg)?;
    Ok(TaskSvm {
        task: dataset.task,
        standardizer,
        model,
        n_train: kept.len(),
        n_train_negative: ys.iter().filter(|&&y| !y).count(),
    })
}

pub fn baseline_auc(
    svm: &TaskSvm,
    features: &BTreeMap<String, Vec<f64>>,
    dataset: &TaskDataset,
    split: Split,
) -> Result<f64> {
    let entry = eval::evaluate(|id| svm.score(feature_of(features, id)?), dataset, split, "svm")?;
    Ok(entry.auc)
}

// ---------------------------------------------------------------------------
// File-based stages.

/// What a stage wrote.
#[derive(Debug, Clone, Default)]
pub struct StageOutput {
    pub artifacts: Vec<PathBuf>,
    /// Human-readable summary for the terminal.
    pub summary: String,
}

pub const NOTES_FILE: &str = "notes.jsonl";
pub const ADMISSIONS_FILE: &str = "admissions.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const SPLIT_FILE: &str = "split.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const REJECTIONS_FILE: &str = "rejections.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

pub fn checkpoint_name(task: Task, replication: bool) -> String {
    if replication {
        format!("cnn-{}.ckpt", task.name())
    } else {
        format!("cnn-{}-norep.ckpt", task.name())
    }
}

fn ensure_work_dir(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.paths.work_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for l in lines {
        writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn finish(stage: &str, cfg: &RunConfig, mut manifest: Manifest, mut out: StageOutput) -> Result<StageOutput> {
    for a in &out.artifacts {
        manifest.file("output", a)?;
    }
    let path = cfg.artifact(&format!("{stage}.manifest"));
    manifest.write(&path)?;
    out.artifacts.push(path);
    Ok(out)
}

/// The synthetic benchmark described by the `synth` section.
pub fn synthetic_corpus(cfg: &RunConfig) -> Result<corpus::SyntheticCorpus> {
    let s = &cfg.synth;
    corpus::generate_synthetic(&SyntheticConfig {
        pos_rate: s.pos_rate,
        task: s.task,
        ineligible_frac: s.ineligible_frac,
        leakage_notes: s.leakage_notes,
        ..SyntheticConfig::benchmark(s.n_patients, cfg.stage_seed(stage::SYNTH))
    })
}

/// Generates the synthetic benchmark corpus.
pub fn run_synth(cfg: &RunConfig) -> Result<StageOutput> {
    ensure_work_dir(cfg)?;
    let generated = synthetic_corpus(cfg)?;
    let notes = cfg.resolve(&cfg.paths.notes);
    let admissions = cfg.resolve(&cfg.paths.admissions);
    let truth = cfg.artifact(TRUTH_FILE);
    write_lines(&notes, generated.notes.iter().map(corpus::ingest::note_to_json))?;
    write_lines(&admissions, generated.admissions.iter().map(corpus::ingest::admission_to_json))?;
    write_lines(
        &truth,
        generated.truth.iter().map(|t| serde_json::to_string(t).expect("serializable truth")),
    )?;
    let manifest = Manifest::for_stage("synth", cfg);
    let out = StageOutput {
        summary: format!(
            "synthetic corpus: {} patients, {} notes",
            generated.admissions.len(),
            generated.notes.len()
        ),
        artifacts: vec![notes, admissions, truth],
    };
    finish("synth", cfg, manifest, out)
}

/// Ingests the raw files and writes documents, split and vocabulary.
pub fn run_preprocess(cfg: &RunConfig) -> Result<StageOutput> {
    ensure_work_dir(cfg)?;
    let notes_path = cfg.resolve(&cfg.paths.notes);
    let adm_path = cfg.resolve(&cfg.paths.admissions);
    let notes = corpus::ingest::read_notes(&notes_path)?;
    let admissions = corpus::ingest::read_admissions(&adm_path)?;
    for r in notes.rejections.iter().chain(&admissions.rejections) {
        log::warn!("rejected line {}: {}", r.line, r.reason);
    }
    let prepared = prepare(&notes.records, &admissions.records, cfg)?;

    let mut manifest = Manifest::for_stage("preprocess", cfg);
    manifest.file("input", &notes_path)?;
    manifest.file("input", &adm_path)?;
    manifest.push("rejected_notes", notes.rejections.len());
    manifest.push("rejected_admissions", admissions.rejections.len());
    manifest.push("patients", prepared.docs.len());
    manifest.push("vocab_size", prepared.vocab.len());

    let docs_path = cfg.artifact(DOCUMENTS_FILE);
    let split_path = cfg.artifact(SPLIT_FILE);
    let vocab_path = cfg.artifact(VOCAB_FILE);
    let rej_path = cfg.artifact(REJECTIONS_FILE);
    records::write_documents(&docs_path, &prepared.docs)?;
    write_json(&split_path, &prepared.split)?;
    prepared.vocab.save(&vocab_path)?;
    write_lines(
        &rej_path,
        notes
            .rejections
            .iter()
            .map(|r| serde_json::json!({"file": "notes", "line": r.line, "reason": r.reason}).to_string())
            .chain(admissions.rejections.iter().map(|r| {
                serde_json::json!({"file": "admissions", "line": r.line, "reason": r.reason}).to_string()
            })),
    )?;
    let out = StageOutput {
        summary: format!(
            "{} patients ({} train / {} validation / {} test), vocabulary {}, {} rejected lines",
            prepared.docs.len(),
            prepared.split.train.len(),
            prepared.split.validation.len(),
            prepared.split.test.len(),
            prepared.vocab.len(),
            notes.rejections.len() + admissions.rejections.len()
        ),
        artifacts: vec![docs_path, split_path, vocab_path, rej_path],
    };
    finish("preprocess", cfg, manifest, out)
}

/// Loads the preprocessing artifacts.
pub fn load_prepared(cfg: &RunConfig) -> Result<Prepared> {
    let docs_path = cfg.artifact(DOCUMENTS_FILE);
    if !docs_path.exists() {
        return Err(Error::Data(format!(
            "{} not found; run `preprocess` first",
            docs_path.display()
        )));
    }
    let mut docs = records::read_documents(&docs_path)?;
    docs.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    let split: CohortSplit = read_json(&cfg.artifact(SPLIT_FILE))?;
    let vocab = Vocabulary::load(&cfg.artifact(VOCAB_FILE))?;
    Ok(Prepared { docs, split, vocab })
}

fn input_files(cfg: &RunConfig, manifest: &mut Manifest) -> Result<()> {
    for f in [DOCUMENTS_FILE, SPLIT_FILE, VOCAB_FILE] {
        manifest.file("input", &cfg.artifact(f))?;
    }
    Ok(())
}

pub fn run_pretrain(cfg: &RunConfig) -> Result<StageOutput> {
    let prepared = load_prepared(cfg)?;
    let mut manifest = Manifest::for_stage("pretrain", cfg);
    input_files(cfg, &mut manifest)?;
    manifest.push("execution", "single-threaded");
    let out = pretrain_embeddings(&prepared, cfg)?;
    for (i, l) in out.loss_history.iter().enumerate() {
        manifest.push(&format!("epoch.{i}"), format!("loss={l}"));
    }
    let path = cfg.artifact(EMBEDDINGS_FILE);
    wordvec::save_embeddings(&path, &prepared.vocab, &out.embeddings)?;
    let summary = format!(
        "word vectors for {} tokens; pair loss {:.4} -> {:.4}",
        prepared.vocab.len(),
        out.loss_history.first().copied().unwrap_or(f64::NAN),
        out.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    finish("pretrain", cfg, manifest, StageOutput { artifacts: vec![path], summary })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub task: Task,
    /// Overrides `train.lambda`.
    pub lambda: Option<f64>,
    /// Forces `lambda = 0` and writes a separate checkpoint.
    pub no_replication: bool,
}

pub fn run_train(cfg: &RunConfig, opts: TrainOptions) -> Result<StageOutput> {
    let prepared = load_prepared(cfg)?;
    let mut manifest = Manifest::for_stage("train", cfg);
    input_files(cfg, &mut manifest)?;
    let embeddings = if cfg.train.pretrained {
        let p = cfg.artifact(EMBEDDINGS_FILE);
        if !p.exists() {
            return Err(Error::Data(format!(
                "{} not found; run `pretrain` first or set train.pretrained = false",
                p.display()
            )));
        }
        manifest.file("input", &p)?;
        Some(wordvec::load_embeddings(&p, &prepared.vocab)?)
    } else {
        None
    };
    let lambda = if opts.no_replication { Some(0.0) } else { opts.lambda };
    let records = task_records(&prepared, opts.task)?;
    let init = initial_params(&prepared, cfg, embeddings)?;
    let tc = train_config(cfg, lambda);
    manifest.push("task", opts.task.name());
    manifest.push("lambda", tc.lambda);
    manifest.push("train_seed", tc.seed);
    manifest.push("train_patients", records.train.len());
    manifest.push("validation_patients", records.validation.len());
    let outcome = hiercnn::train(init, &records.train, &records.validation, &tc)?;
    for h in &outcome.history {
        manifest.push(
            &format!("epoch.{}", h.epoch),
            format!(
                "train_loss={} val_auc={}",
                h.train_loss,
                h.val_auc.map_or("n/a".into(), |a| a.to_string())
            ),
        );
    }
    manifest.push("best_epoch", outcome.best_epoch);
    let config_json = serde_json::json!({
        "task": opts.task,
        "train": tc,
        "train_seed": tc.seed,
        "best_epoch": outcome.best_epoch,
    })
    .to_string();
    let path = cfg.artifact(&checkpoint_name(opts.task, !opts.no_replication));
    hiercnn::save_checkpoint(&path, &outcome.params, prepared.vocab.hash(), &config_json)?;
    let best = outcome
        .history
        .iter()
        .find(|h| h.epoch == outcome.best_epoch)
        .and_then(|h| h.val_auc);
    let summary = format!(
        "{} task: {} epochs, best epoch {} (validation AUC {})",
        opts.task.name(),
        outcome.history.len(),
        outcome.best_epoch,
        best.map_or("n/a".into(), |a| format!("{a:.4}"))
    );
    finish(
        &format!("train-{}", opts.task.name()),
        cfg,
        manifest,
        StageOutput { artifacts: vec![path], summary },
    )
}

/// Which model `eval` scores.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelChoice {
    /// The task's default CNN checkpoint.
    Cnn,
    Checkpoint(PathBuf),
    Baseline(BaselineKind),
}

impl ModelChoice {
    pub fn parse(s: &str) -> Self {
        match s {
            "cnn" => ModelChoice::Cnn,
            "lda" => ModelChoice::Baseline(BaselineKind::Lda),
            "dbow" => ModelChoice::Baseline(BaselineKind::Dbow),
            path => ModelChoice::Checkpoint(PathBuf::from(path)),
        }
    }
}

fn load_task_checkpoint(cfg: &RunConfig, path: &Path, vocab: &Vocabulary) -> Result<ModelParams> {
    if !path.exists() {
        return Err(Error::Data(format!(
            "checkpoint {} not found; run `train` first",
            path.display()
        )));
    }
    let ck = hiercnn::load_checkpoint(path)?;
    ck.check_vocab_hash(vocab.hash())?;
    let _ = cfg;
    Ok(ck.params)
}

pub fn run_eval(cfg: &RunConfig, task: Task, model: &ModelChoice) -> Result<StageOutput> {
    let prepared = load_prepared(cfg)?;
    let mut manifest = Manifest::for_stage(&format!("eval-{}", task.name()), cfg);
    input_files(cfg, &mut manifest)?;
    let dataset = prepared.dataset(task);
    let mut report = EvalReport::default();
    report.provenance.insert("config_hash".into(), cfg.hash());
    report.provenance.insert("seed".into(), cfg.seed.to_string());

    let label = match model {
        ModelChoice::Cnn | ModelChoice::Checkpoint(_) => {
            let path = match model {
                ModelChoice::Checkpoint(p) => cfg.resolve(p),
                _ => cfg.artifact(&checkpoint_name(task, true)),
            };
            let params = load_task_checkpoint(cfg, &path, &prepared.vocab)?;
            manifest.file("input", &path)?;
            let records = task_records(&prepared, task)?;
            let by_id: BTreeMap<&str, &PatientRecord> = records
                .validation
                .iter()
                .chain(&records.test)
                .map(|(r, _)| (r.patient_id.as_str(), r))
                .collect();
            for split in [Split::Validation, Split::Test] {
                report.entries.push(eval::evaluate(
                    |id| {
                        let r = by_id
                            .get(id)
                            .ok_or_else(|| Error::Data(format!("no record for {id}")))?;
                        hiercnn::predict(r, &params).map(|p| p.p_doc)
                    },
                    &dataset,
                    split,
                    "cnn",
                )?);
            }
            report
                .provenance
                .insert("checkpoint".into(), crate::manifest::hash_file(&path)?);
            "cnn".to_string()
        }
        ModelChoice::Baseline(kind) => {
            let feats_path = cfg.artifact(&format!("features-{}.txt", kind.name()));
            let svm_path = cfg.artifact(&format!("svm-{}.json", kind.name()));
            if !feats_path.exists() || !svm_path.exists() {
                return Err(Error::Data(format!(
                    "{} baseline artifacts missing; run `baseline --which {}` first",
                    kind.name(),
                    kind.name()
                )));
            }
            manifest.file("input", &feats_path)?;
            manifest.file("input", &svm_path)?;
            let features = read_features(&feats_path)?;
            let svms: Vec<TaskSvm> = read_json(&svm_path)?;
            let svm = svms
                .iter()
                .find(|s| s.task == task)
                .ok_or_else(|| Error::Data(format!("no {} SVM for task {task}", kind.name())))?;
            for split in [Split::Validation, Split::Test] {
                report.entries.push(eval::evaluate(
                    |id| svm.score(feature_of(&features, id)?),
                    &dataset,
                    split,
                    kind.name(),
                )?);
            }
            kind.name().to_string()
        }
    };
    let stem = format!("report-{}-{label}", task.name());
    let txt = cfg.artifact(&format!("{stem}.txt"));
    let nd = cfg.artifact(&format!("{stem}.ndjson"));
    let table = report.render_table();
    std::fs::write(&txt, &table).map_err(|e| Error::io(&txt, e))?;
    std::fs::write(&nd, report.to_ndjson()).map_err(|e| Error::io(&nd, e))?;
    finish(
        &format!("eval-{}-{label}", task.name()),
        cfg,
        manifest,
        StageOutput { artifacts: vec![txt, nd], summary: table },
    )
}

pub fn run_rank(cfg: &RunConfig, task: Task, patient_id: &str, k: usize) -> Result<StageOutput> {
    let prepared = load_prepared(cfg)?;
    let path = cfg.artifact(&checkpoint_name(task, true));
    let params = load_task_checkpoint(cfg, &path, &prepared.vocab)?;
    let doc = prepared
        .doc(patient_id)
        .ok_or_else(|| Error::Data(format!("patient {patient_id} is not in the preprocessed cohort")))?;
    let record = prepared.vocab.index_document(doc);
    let ranked = hiercnn::rank_sentences(&record, &params)?;
    let text = eval::sentence_report(doc, &ranked, k);
    let out = cfg.artifact(&format!("rank-{}-{patient_id}.txt", task.name()));
    std::fs::write(&out, &text).map_err(|e| Error::io(&out, e))?;
    let mut manifest = Manifest::for_stage("rank", cfg);
    manifest.file("input", &path)?;
    manifest.push("patient_id", patient_id);
    finish(
        &format!("rank-{}", task.name()),
        cfg,
        manifest,
        StageOutput { artifacts: vec![out], summary: text },
    )
}

fn write_features(path: &Path, features: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    let names: Vec<String> = features.keys().cloned().collect();
    let dim = features.values().next().map_or(0, Vec::len);
    let data: Vec<f64> = features.values().flatten().copied().collect();
    let t = Tensor::from_vec(&[names.len(), dim], data)?;
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    wordvec::write_vectors(BufWriter::new(f), &names, &t)
}

fn read_features(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let (names, t) = wordvec::read_vectors(BufReader::new(f))?;
    Ok(names
        .into_iter()
        .enumerate()
        .map(|(i, n)| (n, t.row(i).to_vec()))
        .collect())
}

/// Fits a baseline representation plus one SVM per task with both classes
/// in its training split.
pub fn run_baseline(cfg: &RunConfig, kind: BaselineKind) -> Result<StageOutput> {
    let prepared = load_prepared(cfg)?;
    let mut manifest = Manifest::for_stage(&format!("baseline-{}", kind.name()), cfg);
    input_files(cfg, &mut manifest)?;
    let feats = baseline_features(kind, &prepared, cfg)?;
    // Features go through the f32 text format before any SVM sees them, so
    // `eval` scores exactly what was trained on.
    let feats_path = cfg.artifact(&format!("features-{}.txt", kind.name()));
    write_features(&feats_path, &feats.features)?;
    let features = read_features(&feats_path)?;

    let mut artifacts = vec![feats_path];
    let vocab_path = cfg.artifact("tfidf-vocab.txt");
    write_lines(&vocab_path, feats.tfidf.tokens().iter().cloned())?;
    artifacts.push(vocab_path);
    if let Some(m) = &feats.lda {
        let p = cfg.artifact("lda.model");
        let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
        m.write_to(BufWriter::new(f))?;
        artifacts.push(p);
    }
    if let Some(m) = &feats.dbow {
        let p = cfg.artifact("dbow-words.txt");
        let names: Vec<String> = feats.tfidf.tokens().to_vec();
        let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
        wordvec::write_vectors(BufWriter::new(f), &names, &m.word_vectors)?;
        artifacts.push(p);
    }

    let mut svms = Vec::new();
    let mut lines = Vec::new();
    for task in Task::ALL {
        let ds = prepared.dataset(task);
        if !ds.train.iter().any(|(_, y)| *y) || !ds.train.iter().any(|(_, y)| !*y) {
            log::warn!("{}: training split is single-class; no SVM fitted", task.name());
            continue;
        }
        let svm = fit_task_svm(&features, &ds, cfg)?;
        lines.push(format!(
            "{}: SVM on {} patients ({} negative)",
            task.name(),
            svm.n_train,
            svm.n_train_negative
        ));
        manifest.push(&format!("svm.{}", task.name()), format!("n_train={} n_negative={}", svm.n_train, svm.n_train_negative));
        svms.push(svm);
    }
    let svm_path = cfg.artifact(&format!("svm-{}.json", kind.name()));
    write_json(&svm_path, &svms)?;
    artifacts.push(svm_path);
    let summary = format!(
        "{} baseline: tf-idf vocabulary {}\n{}",
        kind.name(),
        feats.tfidf.len(),
        lines.join("\n")
    );
    finish(&format!("baseline-{}", kind.name()), cfg, manifest, StageOutput { artifacts, summary })
}

/// Reads the synthetic ground-truth file.
pub fn read_truth(path: &Path) -> Result<Vec<corpus::synth::PatientTruth>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .map(|l| {
            let l = l.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
        })
        .collect()
}
