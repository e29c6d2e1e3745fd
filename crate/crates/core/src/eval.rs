//! Rank-based AUC, task datasets and the report formats.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{CohortSplit, Document, PatientRecord, Task, TaskLabels};
use crate::hiercnn::{self, ModelParams, RankedSentence, TrainConfig};
use crate::{Error, Result};

/// Area under the ROC curve via the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
/// Uses average ranks, so it runs in `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numerical(format!("AUC score is {s}")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data(format!(
            "AUC needs both classes ({n_pos} positives, {n_neg} negatives)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of 1-based average ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let tied_pos = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum += avg_rank * tied_pos as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// Labelled patient ids for one task, per split. Patients excluded from the
/// task (in-hospital deaths for post-discharge tasks) are absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDataset {
    pub task: Task,
    pub train: Vec<(String, bool)>,
    pub validation: Vec<(String, bool)>,
    pub test: Vec<(String, bool)>,
}

impl TaskDataset {
    pub fn new(task: Task, labels: &BTreeMap<String, TaskLabels>, split: &CohortSplit) -> Self {
        let pick = |ids: &[String]| -> Vec<(String, bool)> {
            ids.iter()
                .filter_map(|id| {
                    let l = task.label(labels.get(id)?)?;
                    Some((id.clone(), l))
                })
                .collect()
        };
        TaskDataset {
            task,
            train: pick(&split.train),
            validation: pick(&split.validation),
            test: pick(&split.test),
        }
    }

    pub fn from_documents(task: Task, docs: &[Document], split: &CohortSplit) -> Self {
        let labels = docs
            .iter()
            .map(|d| (d.patient_id.clone(), d.labels))
            .collect();
        Self::new(task, &labels, split)
    }

    pub fn split(&self, which: Split) -> &[(String, bool)] {
        match which {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub task: Task,
    pub model: String,
    pub split: Split,
    pub n: usize,
    pub positives: usize,
    pub positive_rate: f64,
    pub auc: f64,
}

/// Scores every patient of `split` with `scorer` and computes the AUC.
pub fn evaluate<F>(scorer: F, dataset: &TaskDataset, split: Split, model: &str) -> Result<EvalEntry>
where
    F: Fn(&str) -> Result<f64>,
{
    let rows = dataset.split(split);
    let scores = rows
        .iter()
        .map(|(id, _)| scorer(id))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<bool> = rows.iter().map(|(_, l)| *l).collect();
    let positives = labels.iter().filter(|&&l| l).count();
    Ok(EvalEntry {
        task: dataset.task,
        model: model.to_string(),
        split,
        n: rows.len(),
        positives,
        positive_rate: if rows.is_empty() {
            0.0
        } else {
            positives as f64 / rows.len() as f64
        },
        auc: auc(&scores, &labels)?,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub entries: Vec<EvalEntry>,
    /// Config hash, seed and similar run identifiers.
    pub provenance: BTreeMap<String, String>,
}

impl EvalReport {
    /// Aligned plain-text table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:<12} {:<10} {:>7} {:>7} {:>9} {:>7}",
            "task", "model", "split", "n", "pos", "pos_rate", "AUC"
        );
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:<10} {:<12} {:<10} {:>7} {:>7} {:>9.4} {:>7.4}",
                e.task.name(),
                e.model,
                e.split.name(),
                e.n,
                e.positives,
                e.positive_rate,
                e.auc
            );
        }
        for (k, v) in &self.provenance {
            let _ = writeln!(out, "# {k}: {v}");
        }
        out
    }

    /// One JSON object per entry, then one for provenance.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("serializable entry"));
            out.push('\n');
        }
        out.push_str(
            &serde_json::to_string(&serde_json::json!({ "provenance": self.provenance }))
                .expect("serializable provenance"),
        );
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub task: Task,
    pub lambda: f64,
    pub auc_without: f64,
    pub auc_with: f64,
    pub difference: f64,
}

fn test_auc(params: &ModelParams, test: &[(PatientRecord, bool)]) -> Result<f64> {
    let scores = test
        .iter()
        .map(|(r, _)| hiercnn::predict(r, params).map(|p| p.p_doc))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<bool> = test.iter().map(|(_, l)| *l).collect();
    auc(&scores, &labels)
}

/// Trains twice from the same initialization and seed, once with
/// `config.lambda` and once with replication switched off, and reports both
/// test AUCs.
pub fn ablation_report(
    task: Task,
    init: &ModelParams,
    train: &[(PatientRecord, bool)],
    validation: &[(PatientRecord, bool)],
    test: &[(PatientRecord, bool)],
    config: &TrainConfig,
) -> Result<AblationReport> {
    let without_cfg = TrainConfig {
        lambda: 0.0,
        ..config.clone()
    };
    let without = hiercnn::train(init.clone(), train, validation, &without_cfg)?;
    let with = hiercnn::train(init.clone(), train, validation, config)?;
    let auc_without = test_auc(&without.params, test)?;
    let auc_with = test_auc(&with.params, test)?;
    Ok(AblationReport {
        task,
        lambda: config.lambda,
        auc_without,
        auc_with,
        difference: auc_with - auc_without,
    })
}

/// The `k` highest- and lowest-scoring sentences of a record as plain text.
/// `ranked` must be sorted by descending score. A `k` larger than the record
/// is clamped; when `2k > n` the lower block only lists sentences not already
/// shown.
pub fn sentence_report(doc: &Document, ranked: &[RankedSentence], k: usize) -> String {
    let n = ranked.len();
    let k = if k > n {
        log::warn!("sentence report: k = {k} exceeds the {n} sentences of {}; clamping", doc.patient_id);
        n
    } else {
        k
    };
    let top = &ranked[..k];
    let bottom_len = k.min(n - k);
    let bottom = ranked[n - bottom_len..].iter().rev();

    let line = |out: &mut String, r: &RankedSentence| {
        let text = doc
            .sentences
            .get(r.index)
            .map(|s| crate::corpus::text::detokenize(&s.tokens))
            .unwrap_or_default();
        let _ = writeln!(out, "  {:.4}  {}", r.score, text);
    };
    let mut out = String::new();
    let _ = writeln!(out, "patient {} ({} sentences, k = {k})", doc.patient_id, n);
    let _ = writeln!(out, "P(death) high");
    top.iter().for_each(|r| line(&mut out, r));
    let _ = writeln!(out, "P(death) low");
    bottom.for_each(|r| line(&mut out, r));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenizedSentence;

    #[test]
    fn auc_examples() {
        let l = [true, false, true, false];
        assert_eq!(auc(&[0.9, 0.4, 0.6, 0.1], &l).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.6, 0.4, 0.1], &l).unwrap(), 0.75);
        assert_eq!(auc(&[0.3; 4], &l).unwrap(), 0.5);
    }

    #[test]
    fn auc_needs_both_classes() {
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::Data(_))));
        assert!(auc(&[0.1], &[true, false]).is_err());
        assert!(auc(&[f64::NAN, 0.2], &[true, false]).is_err());
    }

    fn dataset() -> TaskDataset {
        TaskDataset {
            task: Task::Hospital,
            train: vec![],
            validation: vec![],
            test: vec![("a".into(), true), ("b".into(), false), ("c".into(), false)],
        }
    }

    #[test]
    fn constant_and_oracle_scorers() {
        let d = dataset();
        let e = evaluate(|_| Ok(0.5), &d, Split::Test, "const").unwrap();
        assert_eq!(e.auc, 0.5);
        assert_eq!((e.n, e.positives), (3, 1));
        let e = evaluate(|id| Ok(if id == "a" { 1.0 } else { 0.0 }), &d, Split::Test, "oracle").unwrap();
        assert_eq!(e.auc, 1.0);
    }

    #[test]
    fn post_discharge_tasks_exclude_in_hospital_deaths() {
        let labels = BTreeMap::from([
            ("a".to_string(), TaskLabels { in_hospital: true, post_30d: None, post_1y: None }),
            ("b".to_string(), TaskLabels { in_hospital: false, post_30d: Some(true), post_1y: Some(true) }),
        ]);
        let split = CohortSplit { train: vec!["a".into(), "b".into()], validation: vec![], test: vec![], seed: 0 };
        assert_eq!(TaskDataset::new(Task::Hospital, &labels, &split).train.len(), 2);
        assert_eq!(TaskDataset::new(Task::Day30, &labels, &split).train, vec![("b".to_string(), true)]);
    }

    #[test]
    fn report_formats() {
        let d = dataset();
        let mut r = EvalReport::default();
        r.entries.push(evaluate(|_| Ok(0.5), &d, Split::Test, "cnn").unwrap());
        r.provenance.insert("seed".into(), "7".into());
        let table = r.render_table();
        assert!(table.lines().nth(1).unwrap().starts_with("hospital   cnn"));
        let nd = r.to_ndjson();
        assert_eq!(nd.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(nd.lines().next().unwrap()).unwrap();
        assert_eq!(first["task"], "hospital");
        assert_eq!(first["auc"], 0.5);
    }

    fn doc(n: usize) -> (Document, Vec<RankedSentence>) {
        let doc = Document {
            patient_id: "p".into(),
            sentences: (0..n)
                .map(|i| TokenizedSentence { tokens: vec![format!("s{i}")], category: 0, note: 0 })
                .collect(),
            labels: TaskLabels { in_hospital: false, post_30d: Some(false), post_1y: Some(false) },
        };
        let ranked = (0..n)
            .map(|i| RankedSentence { index: i, score: 1.0 - i as f64 / n as f64 })
            .collect();
        (doc, ranked)
    }

    fn rows(report: &str) -> Vec<&str> {
        report.lines().filter(|l| l.starts_with("  ")).collect()
    }

    #[test]
    fn sentence_report_blocks() {
        let (d, ranked) = doc(10);
        let rep = sentence_report(&d, &ranked, 3);
        assert_eq!(rows(&rep).len(), 6);

        let all = sentence_report(&d, &ranked, 10);
        let listed = rows(&all);
        assert_eq!(listed.len(), 10);
        let mut texts: Vec<_> = listed.iter().map(|l| l.split_whitespace().nth(1).unwrap()).collect();
        texts.sort();
        texts.dedup();
        assert_eq!(texts.len(), 10);

        assert_eq!(rows(&sentence_report(&d, &ranked, 50)).len(), 10);
    }

    #[test]
    fn reversed_ranking_swaps_blocks() {
        let (d, ranked) = doc(8);
        let fwd = sentence_report(&d, &ranked, 3);
        let rev: Vec<_> = ranked.iter().rev().cloned().collect();
        let bwd = sentence_report(&d, &rev, 3);
        let f = rows(&fwd);
        let b = rows(&bwd);
        assert_eq!(&f[..3], &b[3..]);
        assert_eq!(&f[3..], &b[..3]);
    }
}
