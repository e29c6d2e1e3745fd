//! Run configuration: a TOML file of dotted keys such as `train.lambda = 1.0`.
//! Every key has a default and unknown keys are rejected.
//!
//! Only the top-level `seed` is user-settable; each stage derives its own
//! seed from it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{DbowConfig, LdaConfig, SvmConfig};
use crate::corpus::{SplitRatios, Task, Truncation};
use crate::hiercnn::TrainConfig;
use crate::wordvec::SgnsConfig;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Directory for every artifact.
    pub work_dir: PathBuf,
    /// Note input; relative paths resolve against `work_dir`.
    pub notes: PathBuf,
    pub admissions: PathBuf,
    /// Optional stopword file replacing the bundled list.
    pub stopwords: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            work_dir: PathBuf::from("run"),
            notes: PathBuf::from("notes.jsonl"),
            admissions: PathBuf::from("admissions.jsonl"),
            stopwords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_patients: usize,
    pub pos_rate: f64,
    /// Task whose label carries the planted signal.
    pub task: Task,
    pub ineligible_frac: f64,
    pub leakage_notes: bool,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            n_patients: 5000,
            pos_rate: 0.2,
            task: Task::Hospital,
            ineligible_frac: 0.05,
            leakage_notes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    pub vocab_cap: usize,
    pub max_sentences: usize,
    pub max_tokens: usize,
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let t = Truncation::default();
        let r = SplitRatios::default();
        PreprocessSection {
            vocab_cap: 20_000,
            max_sentences: t.max_sentences,
            max_tokens: t.max_tokens,
            train: r.train,
            validation: r.validation,
            test: r.test,
        }
    }
}

impl PreprocessSection {
    pub fn truncation(&self) -> Truncation {
        Truncation {
            max_sentences: self.max_sentences,
            max_tokens: self.max_tokens,
        }
    }

    pub fn ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train,
            validation: self.validation,
            test: self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    /// Terms kept per patient when building the tf-idf vocabulary.
    pub top_k: usize,
    /// Negative share of the subsampled SVM training set.
    pub negative_fraction: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            top_k: 500,
            negative_fraction: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankSection {
    pub k: usize,
}

impl Default for RankSection {
    fn default() -> Self {
        RankSection { k: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Default task for `train`, `eval` and `rank`.
    pub task: Task,
    pub paths: Paths,
    pub synth: SynthSection,
    pub preprocess: PreprocessSection,
    pub wordvec: SgnsConfig,
    pub train: TrainConfig,
    pub baseline: BaselineSection,
    pub lda: LdaConfig,
    pub dbow: DbowConfig,
    pub svm: SvmConfig,
    pub rank: RankSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            task: Task::Hospital,
            paths: Paths::default(),
            synth: SynthSection::default(),
            preprocess: PreprocessSection::default(),
            wordvec: SgnsConfig::default(),
            train: TrainConfig::default(),
            baseline: BaselineSection::default(),
            lda: LdaConfig::default(),
            dbow: DbowConfig::default(),
            svm: SvmConfig::default(),
            rank: RankSection::default(),
        }
    }
}

/// Seed stream tags, one per stage.
pub mod stage {
    pub const SYNTH: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const WORDVEC: u64 = 3;
    pub const INIT: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const LDA: u64 = 6;
    pub const DBOW: u64 = 7;
    pub const SVM: u64 = 8;
    pub const SUBSAMPLE: u64 = 9;
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.train
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.baseline.negative_fraction > 0.0 && self.baseline.negative_fraction < 1.0) {
            return Err(Error::Config("baseline.negative_fraction must lie in (0, 1)".into()));
        }
        if self.rank.k == 0 {
            return Err(Error::Config("rank.k must be positive".into()));
        }
        Ok(())
    }

    /// Seed for a stage, derived from the run-wide seed.
    pub fn stage_seed(&self, stage: u64) -> u64 {
        seed::derive(self.seed, &[stage])
    }

    /// Canonical TOML rendering; what [`RunConfig::hash`] digests.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable config")
    }

    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.paths.work_dir.join(p)
        }
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.paths.work_dir.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_model() {
        let c = RunConfig::default();
        assert_eq!(c.train.lambda, 1.0);
        assert_eq!(c.train.keep_prob, 0.8);
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.wordvec.dim, 50);
        assert_eq!(c.lda.topics, 50);
        assert_eq!(c.dbow.dim, 400);
        assert_eq!(c.baseline.top_k, 500);
        assert_eq!(RunConfig::parse("").unwrap(), c);
    }

    #[test]
    fn dotted_keys_and_round_trip() {
        let c = RunConfig::parse("seed = 7\ntask = \"30-day\"\ntrain.lambda = 0.5\nsynth.n_patients = 100\nadam = 1").unwrap_err();
        assert!(c.to_string().contains("adam"), "{c}");
        let c = RunConfig::parse("seed = 7\ntask = \"30-day\"\ntrain.lambda = 0.5\ntrain.adam.rate = 0.01\nsynth.n_patients = 100\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.task, Task::Day30);
        assert_eq!(c.train.lambda, 0.5);
        assert_eq!(c.train.adam.rate, 0.01);
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_and_invalid_keys() {
        let e = RunConfig::parse("train.lamda = 1.0").unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("lamda")), "{e}");
        assert!(RunConfig::parse("train.seed = 3").is_err());
        assert!(RunConfig::parse("train.keep_prob = 0.0").is_err());
        assert!(RunConfig::parse("train.lambda = \"x\"").is_err());
    }

    #[test]
    fn stage_seeds_differ() {
        let c = RunConfig::default();
        assert_ne!(c.stage_seed(stage::TRAIN), c.stage_seed(stage::LDA));
        assert_ne!(c.hash(), RunConfig { seed: 1, ..c.clone() }.hash());
    }
}
