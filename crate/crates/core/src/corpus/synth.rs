//! Synthetic clinical corpora with planted, compositional mortality signal.
//!
//! Each patient receives filler notes drawn from a Zipf-weighted word list
//! plus "plant" sentences chosen by the patient's label. Rules may pair
//! templates so that positives and negatives share the same bag of words and
//! differ only in phrase structure (e.g. `no sign of X` vs. `X is present`),
//! which a unigram model cannot separate.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    cohort::labels_for, filter_cohort, segment_and_tokenize, AdmissionMeta, RawNote, Task,
    CATEGORIES, DISCHARGE_SUMMARY,
};
use crate::{eval, seed, Error, Result};

/// A planted sentence template. `{risk}` and `{benign}` are replaced with the
/// patient's sampled terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub text: String,
    /// Marks the sentence a sentence-ranking model should put on top.
    pub risk: bool,
}

impl Plant {
    pub fn new(text: &str, risk: bool) -> Self {
        Plant {
            text: text.to_string(),
            risk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseRule {
    pub positive: Vec<Plant>,
    pub negative: Vec<Plant>,
    /// Probability the rule fires for a positive patient.
    pub positive_rate: f64,
    pub negative_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub risk_terms: Vec<String>,
    pub benign_terms: Vec<String>,
    pub rules: Vec<PhraseRule>,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl SignalSpec {
    /// Negation-dependent benchmark: positives carry `<risk> is present` and
    /// `no sign of <benign>`, negatives the mirrored pair, so both classes
    /// share one bag of words. A weak unigram marker gives bag-of-words
    /// models something to find.
    pub fn negation_benchmark() -> Self {
        SignalSpec {
            risk_terms: words(&[
                "pneumothorax",
                "hemorrhage",
                "sepsis",
                "infarction",
                "embolism",
                "herniation",
            ]),
            benign_terms: words(&[
                "effusion",
                "edema",
                "consolidation",
                "atelectasis",
                "cardiomegaly",
                "fracture",
            ]),
            rules: vec![
                PhraseRule {
                    positive: vec![
                        Plant::new("{risk} is present", true),
                        Plant::new("no sign of {benign}", false),
                    ],
                    negative: vec![
                        Plant::new("no sign of {risk}", false),
                        Plant::new("{benign} is present", false),
                    ],
                    positive_rate: 1.0,
                    negative_rate: 1.0,
                },
                PhraseRule {
                    positive: vec![Plant::new("now found to have metastatic lesions", false)],
                    negative: vec![Plant::new("now found to have metastatic lesions", false)],
                    positive_rate: 0.3,
                    negative_rate: 0.1,
                },
            ],
        }
    }

    /// A single token planted in every positive and no negative.
    pub fn unigram(token: &str) -> Self {
        SignalSpec {
            risk_terms: Vec::new(),
            benign_terms: Vec::new(),
            rules: vec![PhraseRule {
                positive: vec![Plant::new(token, true)],
                negative: Vec::new(),
                positive_rate: 1.0,
                negative_rate: 0.0,
            }],
        }
    }

    /// `term` alone in positives, `no sign of term` in negatives.
    pub fn negation_only(term: &str) -> Self {
        SignalSpec {
            risk_terms: vec![term.to_string()],
            benign_terms: Vec::new(),
            rules: vec![PhraseRule {
                positive: vec![Plant::new("{risk}", true)],
                negative: vec![Plant::new("no sign of {risk}", false)],
                positive_rate: 1.0,
                negative_rate: 1.0,
            }],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rules.is_empty() {
            return Err(Error::InvalidArgument("signal spec has no rules".into()));
        }
        for (i, r) in self.rules.iter().enumerate() {
            if r.positive.is_empty() && r.negative.is_empty() {
                return Err(Error::InvalidArgument(format!("signal rule {i} plants nothing")));
            }
            for rate in [r.positive_rate, r.negative_rate] {
                if !(0.0..=1.0).contains(&rate) {
                    return Err(Error::InvalidArgument(format!(
                        "signal rule {i} has rate {rate} outside [0, 1]"
                    )));
                }
            }
            let plants = r.positive.iter().chain(&r.negative);
            for p in plants {
                if p.text.contains("{risk}") && self.risk_terms.is_empty() {
                    return Err(Error::InvalidArgument("template uses {risk} but no risk terms".into()));
                }
                if p.text.contains("{benign}") && self.benign_terms.is_empty() {
                    return Err(Error::InvalidArgument(
                        "template uses {benign} but no benign terms".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Every word the spec can emit; kept out of the filler vocabulary.
    fn reserved_words(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self
            .risk_terms
            .iter()
            .chain(&self.benign_terms)
            .cloned()
            .collect();
        for r in &self.rules {
            for p in r.positive.iter().chain(&r.negative) {
                for s in segment_and_tokenize(&p.text.replace(['{', '}'], " ")) {
                    out.extend(s);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocabProfile {
    pub filler_words: usize,
    /// Inclusive ranges.
    pub notes_per_patient: (usize, usize),
    pub sentences_per_note: (usize, usize),
    pub sentence_len: (usize, usize),
}

impl Default for VocabProfile {
    fn default() -> Self {
        VocabProfile {
            filler_words: 400,
            notes_per_patient: (3, 5),
            sentences_per_note: (3, 6),
            sentence_len: (4, 9),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_patients: usize,
    pub pos_rate: f64,
    /// The task whose label the planted signal predicts.
    pub task: Task,
    pub profile: VocabProfile,
    pub signal: SignalSpec,
    pub seed: u64,
    /// Extra patients (as a fraction of `n_patients`) that cohort filtering
    /// must remove: minors and patients with several admissions.
    pub ineligible_frac: f64,
    /// Adds discharge summaries and post-discharge notes that filtering must
    /// remove; discharge summaries of deceased patients state the outcome.
    pub leakage_notes: bool,
}

impl SyntheticConfig {
    pub fn new(n_patients: usize, pos_rate: f64, signal: SignalSpec, seed: u64) -> Self {
        SyntheticConfig {
            n_patients,
            pos_rate,
            task: Task::Hospital,
            profile: VocabProfile::default(),
            signal,
            seed,
            ineligible_frac: 0.0,
            leakage_notes: false,
        }
    }

    /// The negation benchmark with ineligible patients and leaky notes mixed
    /// in, so the full preprocessing path is exercised.
    pub fn benchmark(n_patients: usize, seed: u64) -> Self {
        SyntheticConfig {
            ineligible_frac: 0.05,
            leakage_notes: true,
            ..SyntheticConfig::new(n_patients, 0.2, SignalSpec::negation_benchmark(), seed)
        }
    }
}

/// Generation-time ground truth for one eligible patient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub patient_id: String,
    pub positive: bool,
    /// Filled text of planted risk sentences.
    pub risk_sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub notes: Vec<RawNote>,
    pub admissions: Vec<AdmissionMeta>,
    pub truth: Vec<PatientTruth>,
}

const FILLER_CORE: &[&str] = &[
    "patient", "remains", "stable", "overnight", "pain", "controlled", "with", "medication",
    "family", "at", "bedside", "tolerating", "diet", "lungs", "clear", "bilaterally", "heart",
    "rate", "regular", "rhythm", "abdomen", "soft", "nontender", "urine", "output", "adequate",
    "continue", "current", "plan", "ambulating", "assistance", "skin", "intact", "dressing",
    "changed", "labs", "pending", "will", "monitor", "closely", "vital", "signs", "within",
    "normal", "limits", "denies", "nausea", "vomiting", "afebrile", "awake", "alert",
    "oriented", "follows", "commands", "iv", "access", "maintained", "blood", "pressure",
    "cardiomediastinal", "contours", "unchanged", "support", "lines", "the", "and", "a",
    "on", "for", "per", "team", "notified", "resting", "comfortably", "sats", "room", "air",
    "chest", "tube", "removed", "wound", "healing", "well", "insulin", "sliding", "scale",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "tu", "sa", "vel", "dor", "ni", "pax", "qui", "ber", "zan", "fo",
    "gil", "ho", "jex", "wu", "yor", "cel",
];

fn filler_vocabulary(size: usize, reserved: &BTreeSet<String>) -> Vec<String> {
    let mut out: Vec<String> = FILLER_CORE
        .iter()
        .map(|s| s.to_string())
        .filter(|w| !reserved.contains(w))
        .take(size)
        .collect();
    let mut n = 0usize;
    while out.len() < size {
        let a = SYLLABLES[n % SYLLABLES.len()];
        let b = SYLLABLES[(n / SYLLABLES.len()) % SYLLABLES.len()];
        let c = SYLLABLES[(n / (SYLLABLES.len() * SYLLABLES.len())) % SYLLABLES.len()];
        let w = format!("{a}{b}{c}");
        n += 1;
        if !reserved.contains(&w) {
            out.push(w);
        }
    }
    out
}

fn fill(template: &str, risk: &str, benign: &str) -> String {
    template.replace("{risk}", risk).replace("{benign}", benign)
}

fn sentence_text(words: &[String]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get(..1) {
        let upper = first.to_uppercase();
        s.replace_range(..1, &upper);
    }
    s.push_str(" .");
    s
}

struct Generator<'a> {
    config: &'a SyntheticConfig,
    filler: Vec<String>,
    zipf: WeightedIndex<f64>,
    base: NaiveDateTime,
}

struct PatientDraw {
    notes: Vec<RawNote>,
    admission: AdmissionMeta,
    truth: PatientTruth,
}

impl Generator<'_> {
    fn filler_sentence(&self, rng: &mut ChaCha8Rng) -> String {
        let (lo, hi) = self.config.profile.sentence_len;
        let len = rng.gen_range(lo..=hi);
        let words: Vec<String> = (0..len)
            .map(|_| self.filler[self.zipf.sample(rng)].clone())
            .collect();
        sentence_text(&words)
    }

    fn outcome(
        &self,
        positive: bool,
        discharge: NaiveDateTime,
        admit: NaiveDateTime,
        rng: &mut ChaCha8Rng,
    ) -> (Option<NaiveDateTime>, bool) {
        let days = |rng: &mut ChaCha8Rng, lo: i64, hi: i64| {
            discharge + Duration::days(rng.gen_range(lo..=hi)) + Duration::hours(rng.gen_range(0..24))
        };
        match (self.config.task, positive) {
            (Task::Hospital, true) => (Some(discharge), true),
            (Task::Day30, true) => (Some(days(rng, 0, 29)), false),
            (Task::Year1, true) => (Some(days(rng, 0, 363)), false),
            (task, false) => {
                let u: f64 = rng.gen();
                match task {
                    Task::Hospital if u < 0.08 => (Some(days(rng, 1, 700)), false),
                    Task::Day30 | Task::Year1 if u < 0.05 => {
                        let span = (discharge - admit).num_hours().max(1);
                        (Some(admit + Duration::hours(rng.gen_range(0..=span))), true)
                    }
                    Task::Day30 if u < 0.15 => (Some(days(rng, 31, 700)), false),
                    Task::Year1 if u < 0.15 => (Some(days(rng, 366, 900)), false),
                    _ => (None, false),
                }
            }
        }
    }

    fn patient(&self, id: String, positive: bool, eligible_kind: u8, rng: &mut ChaCha8Rng) -> PatientDraw {
        let cfg = self.config;
        let admit = self.base
            + Duration::days(rng.gen_range(0..3650))
            + Duration::minutes(rng.gen_range(0..1440));
        let discharge = admit + Duration::days(rng.gen_range(2..=14)) + Duration::hours(rng.gen_range(0..24));
        let (death_time, died_in_hospital) = self.outcome(positive, discharge, admit, rng);
        let (age, n_admissions) = match eligible_kind {
            1 => (rng.gen_range(2..=17) as f64, 1),
            2 => (rng.gen_range(18..=90) as f64, rng.gen_range(2..=4)),
            _ => (rng.gen_range(18..=90) as f64, 1),
        };

        let (nlo, nhi) = cfg.profile.notes_per_patient;
        let (slo, shi) = cfg.profile.sentences_per_note;
        let n_notes = rng.gen_range(nlo..=nhi).max(1);
        let mut notes: Vec<Vec<String>> = (0..n_notes)
            .map(|_| {
                let n = rng.gen_range(slo..=shi);
                (0..n).map(|_| self.filler_sentence(rng)).collect()
            })
            .collect();

        let risk = if cfg.signal.risk_terms.is_empty() {
            String::new()
        } else {
            cfg.signal.risk_terms.choose(rng).cloned().unwrap_or_default()
        };
        let benign = cfg.signal.benign_terms.choose(rng).cloned().unwrap_or_default();
        let mut risk_sentences = Vec::new();
        for rule in &cfg.signal.rules {
            let (plants, rate) = if positive {
                (&rule.positive, rule.positive_rate)
            } else {
                (&rule.negative, rule.negative_rate)
            };
            if rng.gen::<f64>() >= rate {
                continue;
            }
            for plant in plants {
                let text = fill(&plant.text, &risk, &benign);
                let words: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
                let sentence = sentence_text(&words);
                if plant.risk {
                    risk_sentences.push(text.clone());
                }
                let note = rng.gen_range(0..notes.len());
                let pos = rng.gen_range(0..=notes[note].len());
                notes[note].insert(pos, sentence);
            }
        }

        let stay = (discharge - admit).num_minutes().max(1);
        let mut times: Vec<NaiveDateTime> = (0..notes.len())
            .map(|_| admit + Duration::minutes(rng.gen_range(0..=stay)))
            .collect();
        times.sort();
        let mut raw: Vec<RawNote> = notes
            .into_iter()
            .zip(times)
            .map(|(sentences, chart_time)| RawNote {
                patient_id: id.clone(),
                category: CATEGORIES.choose(rng).expect("categories").to_string(),
                chart_time,
                text: sentences.join(" "),
            })
            .collect();

        if cfg.leakage_notes {
            if rng.gen_bool(0.5) {
                let outcome = if death_time.is_some() {
                    "Patient expired ."
                } else {
                    "Discharged home in stable condition ."
                };
                raw.push(RawNote {
                    patient_id: id.clone(),
                    category: DISCHARGE_SUMMARY.to_string(),
                    chart_time: discharge,
                    text: format!("{} {outcome}", self.filler_sentence(rng)),
                });
            }
            if rng.gen_bool(0.3) {
                raw.push(RawNote {
                    patient_id: id.clone(),
                    category: "general".to_string(),
                    chart_time: discharge + Duration::days(rng.gen_range(1..=10)),
                    text: self.filler_sentence(rng),
                });
            }
        }

        PatientDraw {
            notes: raw,
            admission: AdmissionMeta {
                patient_id: id.clone(),
                age,
                n_admissions,
                admit_time: admit,
                discharge_time: discharge,
                death_time,
                died_in_hospital,
            },
            truth: PatientTruth {
                patient_id: id,
                positive,
                risk_sentences,
            },
        }
    }
}

const STREAM_LABELS: u64 = 0x1AB;
const STREAM_PATIENT: u64 = 0x9A7;

/// Generates a corpus; identical configs give identical corpora.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if config.n_patients < 2 {
        return Err(Error::InvalidArgument("need at least 2 patients".into()));
    }
    if !(config.pos_rate > 0.0 && config.pos_rate < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "positive rate must lie in (0, 1), got {}",
            config.pos_rate
        )));
    }
    if !(0.0..=1.0).contains(&config.ineligible_frac) {
        return Err(Error::InvalidArgument("ineligible fraction outside [0, 1]".into()));
    }
    let p = &config.profile;
    let ranges = [p.notes_per_patient, p.sentences_per_note, p.sentence_len];
    if p.filler_words == 0 || ranges.iter().any(|&(lo, hi)| lo > hi) || p.sentence_len.0 == 0 {
        return Err(Error::InvalidArgument("degenerate vocabulary profile".into()));
    }
    config.signal.validate()?;

    let filler = filler_vocabulary(p.filler_words, &config.signal.reserved_words());
    let weights: Vec<f64> = (0..filler.len()).map(|r| 1.0 / (r as f64 + 1.0)).collect();
    let gen = Generator {
        config,
        zipf: WeightedIndex::new(&weights).expect("positive weights"),
        filler,
        base: NaiveDate::from_ymd_opt(2130, 1, 1)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .expect("valid base date"),
    };

    let n = config.n_patients;
    let n_pos = ((config.pos_rate * n as f64).round() as usize).clamp(1, n - 1);
    let mut labels: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
    labels.shuffle(&mut seed::rng(config.seed, &[STREAM_LABELS]));

    let mut corpus = SyntheticCorpus {
        notes: Vec::new(),
        admissions: Vec::new(),
        truth: Vec::new(),
    };
    for (i, &positive) in labels.iter().enumerate() {
        let mut rng = seed::rng(config.seed, &[STREAM_PATIENT, i as u64]);
        let draw = gen.patient(format!("P{:06}", i + 1), positive, 0, &mut rng);
        corpus.notes.extend(draw.notes);
        corpus.admissions.push(draw.admission);
        corpus.truth.push(draw.truth);
    }
    let n_bad = (config.ineligible_frac * n as f64).round() as usize;
    for j in 0..n_bad {
        let mut rng = seed::rng(config.seed, &[STREAM_PATIENT, (n + j) as u64]);
        let positive = rng.gen_bool(config.pos_rate);
        let kind = if j % 2 == 0 { 1 } else { 2 };
        let draw = gen.patient(format!("X{:06}", j + 1), positive, kind, &mut rng);
        corpus.notes.extend(draw.notes);
        corpus.admissions.push(draw.admission);
    }
    Ok(corpus)
}

impl SyntheticCorpus {
    /// AUC of the oracle scoring each cohort patient 1 if `token` occurs in
    /// any of their retained notes, 0 otherwise.
    pub fn unigram_presence_auc(&self, token: &str, task: Task) -> Result<f64> {
        let cohort = filter_cohort(&self.notes, &self.admissions);
        let mut present: BTreeMap<&str, bool> = BTreeMap::new();
        for note in &cohort.notes {
            let hit = segment_and_tokenize(&note.text)
                .iter()
                .any(|s| s.iter().any(|t| t == token));
            *present.entry(note.patient_id.as_str()).or_default() |= hit;
        }
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for a in &self.admissions {
            let Some(&hit) = present.get(a.patient_id.as_str()) else {
                continue;
            };
            if let Some(label) = task.label(&labels_for(a)?) {
                scores.push(if hit { 1.0 } else { 0.0 });
                labels.push(label);
            }
        }
        eval::auc(&scores, &labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ingest::{admission_to_json, note_to_json};

    fn serialize(c: &SyntheticCorpus) -> String {
        let mut s = String::new();
        for n in &c.notes {
            s.push_str(&note_to_json(n));
            s.push('\n');
        }
        for a in &c.admissions {
            s.push_str(&admission_to_json(a));
            s.push('\n');
        }
        s
    }

    #[test]
    fn byte_identical_for_fixed_seed() {
        let cfg = SyntheticConfig::new(100, 0.3, SignalSpec::negation_benchmark(), 7);
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(serialize(&a), serialize(&b));
        let other = generate_synthetic(&SyntheticConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(serialize(&a), serialize(&other));
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        let empty = SignalSpec { risk_terms: vec![], benign_terms: vec![], rules: vec![] };
        assert!(generate_synthetic(&SyntheticConfig::new(10, 0.3, empty, 1)).is_err());
        assert!(generate_synthetic(&SyntheticConfig::new(1, 0.3, SignalSpec::unigram("x"), 1)).is_err());
        assert!(generate_synthetic(&SyntheticConfig::new(10, 1.0, SignalSpec::unigram("x"), 1)).is_err());
    }

    #[test]
    fn unigram_marker_is_perfectly_separable() {
        let cfg = SyntheticConfig::new(300, 0.3, SignalSpec::unigram("metastatic"), 3);
        let corpus = generate_synthetic(&cfg).unwrap();
        assert_eq!(corpus.unigram_presence_auc("metastatic", Task::Hospital).unwrap(), 1.0);
    }

    #[test]
    fn negated_term_alone_is_uninformative() {
        let cfg = SyntheticConfig::new(1000, 0.3, SignalSpec::negation_only("pneumothorax"), 5);
        let corpus = generate_synthetic(&cfg).unwrap();
        let auc = corpus.unigram_presence_auc("pneumothorax", Task::Hospital).unwrap();
        assert!(auc <= 0.6, "unigram AUC {auc}");
    }

    #[test]
    fn benchmark_terms_are_uninformative_alone() {
        let corpus = generate_synthetic(&SyntheticConfig::benchmark(1000, 11)).unwrap();
        for token in ["pneumothorax", "present", "sign", "effusion"] {
            let auc = corpus.unigram_presence_auc(token, Task::Hospital).unwrap();
            assert!((0.4..=0.6).contains(&auc), "{token}: {auc}");
        }
    }

    #[test]
    fn labels_follow_target_task() {
        for task in Task::ALL {
            let cfg = SyntheticConfig { task, ..SyntheticConfig::new(200, 0.25, SignalSpec::unigram("marker"), 2) };
            let corpus = generate_synthetic(&cfg).unwrap();
            for (a, t) in corpus.admissions.iter().zip(&corpus.truth) {
                let labels = labels_for(a).unwrap();
                if t.positive {
                    assert_eq!(task.label(&labels), Some(true), "{task} {}", a.patient_id);
                } else {
                    assert_ne!(task.label(&labels), Some(true), "{task} {}", a.patient_id);
                }
            }
        }
    }

    #[test]
    fn benchmark_filtering_removes_ineligible_patients() {
        let corpus = generate_synthetic(&SyntheticConfig::benchmark(200, 4)).unwrap();
        assert_eq!(corpus.admissions.len(), 210);
        let cohort = filter_cohort(&corpus.notes, &corpus.admissions);
        assert_eq!(cohort.patient_ids.len(), 200);
        assert!(cohort.patient_ids.iter().all(|p| p.starts_with('P')));
        assert!(cohort.notes.iter().all(|n| n.category != DISCHARGE_SUMMARY));
        assert!(cohort.notes.len() < corpus.notes.len());
    }
}
